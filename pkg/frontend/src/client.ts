/**
 * Thin gateway client: owns one WebSocket, parses frames, and forwards them
 * to a listener. The socket constructor is injected so the same class runs on
 * the browser WebSocket and on the `ws` package under node tests.
 */

import { ClientMessage, ServerFrame, isServerFrame } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientEvents {
  onFrame(frame: ServerFrame): void;
  onOpen?(): void;
  onClose?(): void;
}

export class GatewayClient {
  private socket: SocketLike | null = null;

  constructor(
    private readonly url: string,
    private readonly events: ClientEvents,
    private readonly factory: SocketFactory,
  ) {}

  connect(): void {
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => this.events.onOpen?.();
    socket.onclose = () => this.events.onClose?.();
    socket.onerror = () => undefined;
    socket.onmessage = (ev) => {
      let parsed: unknown;
      try {
        parsed = JSON.parse(String(ev.data));
      } catch {
        return;
      }
      if (isServerFrame(parsed)) this.events.onFrame(parsed);
    };
  }

  send(message: ClientMessage): void {
    if (!this.socket) throw new Error("not connected");
    this.socket.send(JSON.stringify(message));
  }

  startSession(task: string, policy: string, seed: number, realtime = true, pace = 1.0): void {
    this.send({ type: "start_session", task, policy, seed, realtime, pace });
  }

  prompt(text: string, at?: number): void {
    this.send(at === undefined ? { type: "prompt", text } : { type: "prompt", text, at });
  }

  interject(text: string, at?: number): void {
    this.send(at === undefined ? { type: "interjection", text } : { type: "interjection", text, at });
  }

  resume(at?: number): void {
    this.send(at === undefined ? { type: "resume" } : { type: "resume", at });
  }

  mark(decisionId: string, correct: boolean): void {
    this.send({ type: "eval_mark", decision_id: decisionId, correct });
  }

  pause(): void {
    this.send({ type: "pause" });
  }

  stop(): void {
    this.send({ type: "stop" });
  }

  close(): void {
    this.socket?.close();
  }
}
