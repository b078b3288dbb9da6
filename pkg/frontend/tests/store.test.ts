import { describe, expect, it } from "vitest";

import type { SessionCreated, StepReply } from "../src/api.js";
import {
  applyError, applyReply, applySend, applySessionCreated, canSend,
  initialState, replay, type LogEvent,
} from "../src/store.js";

const created: SessionCreated = {
  session_id: "s1",
  greeting: "hello , how can i help you today ?",
  agent_state: "Init:",
  context: "Init:",
  seed: 42,
};

function reply(over: Partial<StepReply> = {}): StepReply {
  return {
    reply: "do you have a specific cuisine in mind ?",
    agent_state: "SearchQuestion: request restaurant . food ;",
    user_state: 'Exec: restaurant ( price_range = " cheap " ) ;',
    context: "SearchQuestion: active restaurant ;",
    ended: false,
    invalid_count: 0,
    ...over,
  };
}

describe("chat store", () => {
  it("records a full turn with the server strings untouched", () => {
    let state = applySessionCreated(initialState(), created);
    expect(state.greeting).toBe(created.greeting);
    expect(canSend(state)).toBe(true);

    state = applySend(state, "i am looking for a cheap restaurant");
    expect(state.pendingText).toBe("i am looking for a cheap restaurant");
    expect(canSend(state)).toBe(false);

    const r = reply();
    state = applyReply(state, r);
    expect(state.turns).toHaveLength(1);
    expect(state.turns[0]).toEqual({
      userText: "i am looking for a cheap restaurant",
      agentText: r.reply,
      agentStateStr: r.agent_state,
      userStateStr: r.user_state,
      contextStr: r.context,
      ended: false,
    });
    expect(canSend(state)).toBe(true);
  });

  it("blocks input once the session has ended", () => {
    let state = applySessionCreated(initialState(), created);
    state = applySend(state, "goodbye");
    state = applyReply(state, reply({ ended: true, reply: "goodbye !" }));
    expect(state.ended).toBe(true);
    expect(canSend(state)).toBe(false);
    // sends on an ended session are ignored
    expect(applySend(state, "hello?")).toBe(state);
  });

  it("keeps the failed text for retry on network errors", () => {
    let state = applySessionCreated(initialState(), created);
    state = applySend(state, "hello");
    state = applyError(state, "fetch failed");
    expect(state.error).toBe("fetch failed");
    expect(state.pendingText).toBe("hello");
  });

  it("only one message can be in flight", () => {
    let state = applySessionCreated(initialState(), created);
    state = applySend(state, "first");
    const same = applySend(state, "second");
    expect(same).toBe(state);
  });

  it("is a pure function of the response log", () => {
    const events: LogEvent[] = [
      { kind: "created", resp: created },
      { kind: "send", text: "i am looking for a cheap restaurant" },
      { kind: "reply", resp: reply() },
      { kind: "send", text: "indian" },
      { kind: "error", message: "boom" },
      { kind: "reply", resp: reply({ reply: "how about Curry Prince ?" }) },
    ];
    const once = replay(events);
    const twice = replay(events);
    expect(twice).toEqual(once);
    expect(once.turns).toHaveLength(2);
    expect(once.error).toBeNull();
  });

  it("reset starts from a clean slate with the new seed", () => {
    let state = applySessionCreated(initialState(), created);
    state = applySend(state, "hi");
    state = applyReply(state, reply());
    const fresh = applySessionCreated(state, { ...created, session_id: "s2", seed: 7 });
    expect(fresh.turns).toHaveLength(0);
    expect(fresh.seed).toBe(7);
    expect(fresh.sessionId).toBe("s2");
  });
});
