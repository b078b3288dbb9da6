// Typed client for the chat service. The formal-state strings in responses
// are passed through untouched: the inspector must show exactly what the
// server linearized.

export interface SessionCreated {
  session_id: string;
  greeting: string;
  agent_state: string;
  context: string;
  seed: number;
}

export interface StepReply {
  reply: string;
  agent_state: string;
  user_state: string;
  context: string;
  ended: boolean;
  invalid_count: number;
}

export interface SessionState {
  context: string;
  ended: boolean;
  turns: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function request<T>(base: string, method: string, path: string,
                          body?: unknown): Promise<T> {
  const resp = await fetch(base + path, {
    method,
    headers: { "Content-Type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const data = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    throw new ApiError(resp.status, (data as { error?: string }).error ?? resp.statusText);
  }
  return data as T;
}

export class ChatApi {
  constructor(readonly base: string = "") {}

  createSession(seed: number): Promise<SessionCreated> {
    return request<SessionCreated>(this.base, "POST", "/api/session", { seed });
  }

  sendMessage(sessionId: string, text: string): Promise<StepReply> {
    return request<StepReply>(this.base, "POST",
      `/api/session/${sessionId}/message`, { text });
  }

  getState(sessionId: string): Promise<SessionState> {
    return request<SessionState>(this.base, "GET",
      `/api/session/${sessionId}/state`);
  }

  deleteSession(sessionId: string): Promise<void> {
    return request<void>(this.base, "DELETE", `/api/session/${sessionId}`);
  }
}
