// The whole UI state is a pure function of the server responses: each event
// maps the previous state to the next one, so replaying a response log
// reproduces the view exactly.

import type { SessionCreated, StepReply } from "./api.js";

export interface ChatTurnView {
  userText: string;
  agentText: string;
  agentStateStr: string;
  userStateStr: string;
  contextStr: string;
  ended: boolean;
}

export interface ChatState {
  sessionId: string | null;
  seed: number;
  greeting: string | null;
  greetingStateStr: string;
  turns: ChatTurnView[];
  pendingText: string | null;
  error: string | null;
  ended: boolean;
}

export function initialState(seed = 0): ChatState {
  return {
    sessionId: null,
    seed,
    greeting: null,
    greetingStateStr: "",
    turns: [],
    pendingText: null,
    error: null,
    ended: false,
  };
}

export function applySessionCreated(state: ChatState, resp: SessionCreated): ChatState {
  return {
    ...initialState(resp.seed),
    sessionId: resp.session_id,
    greeting: resp.greeting,
    greetingStateStr: resp.agent_state,
  };
}

export function applySend(state: ChatState, text: string): ChatState {
  if (state.ended || state.pendingText !== null) {
    return state;
  }
  return { ...state, pendingText: text, error: null };
}

export function applyReply(state: ChatState, resp: StepReply): ChatState {
  const turn: ChatTurnView = {
    userText: state.pendingText ?? "",
    agentText: resp.reply,
    agentStateStr: resp.agent_state,
    userStateStr: resp.user_state,
    contextStr: resp.context,
    ended: resp.ended,
  };
  return {
    ...state,
    turns: [...state.turns, turn],
    pendingText: null,
    error: null,
    ended: resp.ended,
  };
}

export function applyError(state: ChatState, message: string): ChatState {
  // the failed text is kept so the retry banner can resend it
  return { ...state, error: message };
}

export function clearPending(state: ChatState): ChatState {
  return { ...state, pendingText: null, error: null };
}

export function canSend(state: ChatState): boolean {
  return state.sessionId !== null && !state.ended && state.pendingText === null;
}

export type LogEvent =
  | { kind: "created"; resp: SessionCreated }
  | { kind: "send"; text: string }
  | { kind: "reply"; resp: StepReply }
  | { kind: "error"; message: string };

export function replay(events: LogEvent[], seed = 0): ChatState {
  let state = initialState(seed);
  for (const ev of events) {
    switch (ev.kind) {
      case "created":
        state = applySessionCreated(state, ev.resp);
        break;
      case "send":
        state = applySend(state, ev.text);
        break;
      case "reply":
        state = applyReply(state, ev.resp);
        break;
      case "error":
        state = applyError(state, ev.message);
        break;
    }
  }
  return state;
}
