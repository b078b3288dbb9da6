// DOM rendering: the view is rebuilt from the store on every change.
// No dialogue logic lives here; strings come from the server verbatim.

import type { ChatState, ChatTurnView } from "./store.js";

export interface ViewHandlers {
  onSend(text: string): void;
  onRetry(): void;
  onReset(seed: number): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function inspectorPanel(turn: ChatTurnView): HTMLElement {
  const panel = el("div", "inspector");
  const rows: Array<[string, string]> = [
    ["agent state", turn.agentStateStr],
    ["user state", turn.userStateStr],
    ["context", turn.contextStr],
  ];
  for (const [label, value] of rows) {
    const row = el("div", "inspector-row");
    row.appendChild(el("span", "inspector-label", label));
    const pre = el("pre", "inspector-value");
    pre.textContent = value;
    row.appendChild(pre);
    panel.appendChild(row);
  }
  return panel;
}

function bubble(role: "user" | "agent", text: string): HTMLElement {
  const wrap = el("div", `bubble-row ${role}`);
  wrap.appendChild(el("div", `bubble ${role}`, text));
  return wrap;
}

export class ChatView {
  private messages: HTMLElement;
  private input: HTMLInputElement;
  private sendButton: HTMLButtonElement;
  private banner: HTMLElement;
  private seedInput: HTMLInputElement;
  private status: HTMLElement;
  private openInspectors = new Set<number>();

  constructor(root: HTMLElement, private handlers: ViewHandlers) {
    root.innerHTML = "";
    const header = el("div", "header");
    header.appendChild(el("span", "title", "dialogforge chat"));
    this.seedInput = el("input", "seed-input");
    this.seedInput.type = "number";
    this.seedInput.value = "42";
    this.seedInput.title = "session seed";
    const reset = el("button", "reset", "new session");
    reset.addEventListener("click", () =>
      this.handlers.onReset(Number(this.seedInput.value) || 0));
    header.appendChild(this.seedInput);
    header.appendChild(reset);
    this.status = el("span", "status");
    header.appendChild(this.status);
    root.appendChild(header);

    this.banner = el("div", "banner hidden");
    root.appendChild(this.banner);

    this.messages = el("div", "messages");
    root.appendChild(this.messages);

    const inputRow = el("div", "input-row");
    this.input = el("input", "chat-input");
    this.input.placeholder = "say something...";
    this.input.addEventListener("keydown", (ev) => {
      if (ev.key === "Enter") this.submit();
    });
    this.sendButton = el("button", "send", "send");
    this.sendButton.addEventListener("click", () => this.submit());
    inputRow.appendChild(this.input);
    inputRow.appendChild(this.sendButton);
    root.appendChild(inputRow);
  }

  private submit(): void {
    const text = this.input.value.trim();
    if (!text) return;
    this.handlers.onSend(text);
  }

  render(state: ChatState): void {
    this.messages.innerHTML = "";
    if (state.greeting !== null) {
      this.messages.appendChild(bubble("agent", state.greeting));
    }
    state.turns.forEach((turn, i) => {
      this.messages.appendChild(bubble("user", turn.userText));
      const agentRow = bubble("agent", turn.agentText || "(session closed)");
      const toggle = el("button", "inspect-toggle", "formal states");
      toggle.addEventListener("click", () => {
        if (this.openInspectors.has(i)) this.openInspectors.delete(i);
        else this.openInspectors.add(i);
        this.render(state);
      });
      agentRow.appendChild(toggle);
      this.messages.appendChild(agentRow);
      if (this.openInspectors.has(i)) {
        this.messages.appendChild(inspectorPanel(turn));
      }
    });
    if (state.pendingText !== null && !state.error) {
      this.messages.appendChild(bubble("user", state.pendingText));
      this.messages.appendChild(el("div", "typing", "..."));
    }

    const blocked = state.ended || state.pendingText !== null || !state.sessionId;
    this.input.disabled = blocked;
    this.sendButton.disabled = blocked;
    this.status.textContent = state.ended
      ? "session ended - start a new one"
      : state.sessionId ? `session ${state.sessionId}` : "connecting...";

    if (state.error) {
      this.banner.className = "banner";
      this.banner.innerHTML = "";
      this.banner.appendChild(el("span", undefined,
        `request failed: ${state.error} `));
      const retry = el("button", "retry", "retry");
      retry.addEventListener("click", () => this.handlers.onRetry());
      this.banner.appendChild(retry);
    } else {
      this.banner.className = "banner hidden";
    }

    if (state.pendingText === null) {
      this.input.value = "";
    }
    this.messages.scrollTop = this.messages.scrollHeight;
  }
}
