// WebSocket client for the stream service: one socket carrying JSON
// control text and binary frames. Control replies arrive in request
// order (the service serializes them); status pushes are routed by
// their "kind" tag.

import { Frame, decodeFrame } from "./protocol.js";
import { StatusMessage } from "./state.js";

export interface ControlReply {
  ok: boolean;
  error?: string;
  detail?: string;
  state?: string;
  [key: string]: unknown;
}

export interface ClientHandlers {
  onStatus?: (status: StatusMessage) => void;
  onFrame?: (frame: Frame) => void;
  onClose?: () => void;
  onDecodeError?: (err: Error) => void;
}

// Minimal surface shared by the browser WebSocket and the ws package.
export interface WebSocketLike {
  binaryType: string;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

const defaultFactory: WebSocketFactory = (url) =>
  new (globalThis as { WebSocket: new (url: string) => WebSocketLike }).WebSocket(url);

export class ConsoleClient {
  private ws: WebSocketLike | null = null;
  private pending: ((reply: ControlReply) => void)[] = [];

  constructor(
    private handlers: ClientHandlers = {},
    private factory: WebSocketFactory = defaultFactory,
  ) {}

  connect(url: string, timeoutMs = 5000): Promise<void> {
    return new Promise((resolve, reject) => {
      let settled = false;
      const ws = this.factory(url);
      ws.binaryType = "arraybuffer";
      const timer = setTimeout(() => {
        if (!settled) {
          settled = true;
          ws.close();
          reject(new Error(`timed out connecting to ${url}`));
        }
      }, timeoutMs);
      ws.onopen = () => {
        if (!settled) {
          settled = true;
          clearTimeout(timer);
          this.ws = ws;
          resolve();
        }
      };
      ws.onerror = () => {
        if (!settled) {
          settled = true;
          clearTimeout(timer);
          reject(new Error(`cannot reach ${url}`));
        }
      };
      ws.onclose = () => {
        this.ws = null;
        this.flushPending({ ok: false, error: "disconnected" });
        this.handlers.onClose?.();
      };
      ws.onmessage = (ev) => this.dispatch(ev.data);
    });
  }

  get connected(): boolean {
    return this.ws !== null;
  }

  close(): void {
    this.ws?.close();
  }

  private flushPending(reply: ControlReply): void {
    const waiting = this.pending;
    this.pending = [];
    for (const resolve of waiting) resolve(reply);
  }

  private dispatch(data: unknown): void {
    if (typeof data === "string") {
      const doc = JSON.parse(data) as ControlReply & StatusMessage;
      if (doc.kind === "status") {
        // status documents (pushes and fire-and-forget replies) never
        // resolve a pending control request
        this.handlers.onStatus?.(doc);
        return;
      }
      this.pending.shift()?.(doc);
      return;
    }
    let bytes: Uint8Array;
    if (data instanceof ArrayBuffer) bytes = new Uint8Array(data);
    else if (ArrayBuffer.isView(data)) {
      const view = data as ArrayBufferView;
      bytes = new Uint8Array(view.buffer, view.byteOffset, view.byteLength);
    } else return;
    try {
      this.handlers.onFrame?.(decodeFrame(bytes));
    } catch (err) {
      this.handlers.onDecodeError?.(err as Error);
    }
  }

  private request(kind: string, payload?: Record<string, unknown>): Promise<ControlReply> {
    if (!this.ws) return Promise.resolve({ ok: false, error: "disconnected" });
    return new Promise((resolve) => {
      this.pending.push(resolve);
      this.ws!.send(JSON.stringify(payload ? { kind, payload } : { kind }));
    });
  }

  configure(scenario: unknown, pacing = "realtime", extra: Record<string, unknown> = {}) {
    return this.request("configure", { scenario, pacing, ...extra });
  }

  start(): Promise<ControlReply> {
    return this.request("start");
  }

  stop(): Promise<ControlReply> {
    return this.request("stop");
  }

  annotate(label: string): Promise<ControlReply> {
    return this.request("annotate", { label });
  }

  setDrl(enabled: boolean): Promise<ControlReply> {
    return this.request("set_drl", { enabled });
  }

  /** Fire-and-forget: the reply is a status document handled as a push. */
  requestStatus(): void {
    this.ws?.send(JSON.stringify({ kind: "status" }));
  }
}
