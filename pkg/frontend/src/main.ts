import { ApiError, ChatApi } from "./api.js";
import {
  applyError, applyReply, applySend, applySessionCreated, canSend,
  clearPending, initialState, type ChatState,
} from "./store.js";
import { ChatView } from "./view.js";

const api = new ChatApi("");
let state: ChatState = initialState(42);
let view: ChatView;
// one in-flight request per session; input stays disabled while waiting
let busy = false;

function update(next: ChatState): void {
  state = next;
  view.render(state);
}

async function startSession(seed: number): Promise<void> {
  update({ ...initialState(seed) });
  try {
    const created = await api.createSession(seed);
    update(applySessionCreated(state, created));
  } catch (err) {
    update(applyError(state, describe(err)));
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.status} ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

async function deliver(): Promise<void> {
  if (busy || state.pendingText === null || !state.sessionId) return;
  busy = true;
  try {
    const reply = await api.sendMessage(state.sessionId, state.pendingText);
    update(applyReply(state, reply));
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      update(clearPending({ ...state, ended: true }));
    } else {
      update(applyError(state, describe(err)));
    }
  } finally {
    busy = false;
  }
}

const handlers = {
  onSend(text: string): void {
    if (!canSend(state)) return;
    update(applySend(state, text));
    void deliver();
  },
  onRetry(): void {
    if (state.pendingText !== null) {
      update({ ...state, error: null });
      void deliver();
    } else {
      void startSession(state.seed);
    }
  },
  onReset(seed: number): void {
    void startSession(seed);
  },
};

window.addEventListener("DOMContentLoaded", () => {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  view = new ChatView(root, handlers);
  view.render(state);
  void startSession(state.seed);
});
