/** Session client: seq assignment, ack correlation, frame stream. */

import {
  ClientMessage,
  ClipInfo,
  DroppedMsg,
  ErrorMsg,
  FrameMsg,
  ServerMessage,
  SessionCreatedMsg,
  Vec2,
  encodeMessage,
  parseServerMessage,
} from "./protocol";

/** Anything that can carry newline-delimited JSON both ways. */
export interface Transport {
  send(line: string): void;
  onLine(cb: (line: string) => void): void;
  close(): void;
}

export class ProtocolFault extends Error {
  readonly code: string;

  constructor(code: string, detail: string) {
    super(detail);
    this.code = code;
  }
}

interface Pending {
  resolve: (msg: ServerMessage) => void;
  reject: (err: Error) => void;
  timer: ReturnType<typeof setTimeout>;
}

export const ACK_TIMEOUT_MS = 5000;

/** Omit that distributes over the ClientMessage union. */
type OutboundMessage = ClientMessage extends infer M
  ? M extends ClientMessage
    ? Omit<M, "seq">
    : never
  : never;

/**
 * One protocol session. Requests get a monotone seq and resolve on the
 * matching ack/reply; frames and drop notices fan out to listeners.
 */
export class SessionClient {
  private transport: Transport;
  private seq = 0;
  private pending = new Map<number, Pending>();
  private frameListeners: Array<(f: FrameMsg) => void> = [];
  private dropListeners: Array<(d: DroppedMsg) => void> = [];
  private errorListeners: Array<(e: ErrorMsg) => void> = [];
  private latest: FrameMsg | null = null;
  sessionId: string | null = null;

  constructor(transport: Transport, private timeoutMs: number = ACK_TIMEOUT_MS) {
    this.transport = transport;
    transport.onLine((line) => this.handleLine(line));
  }

  /** Most recent frame; the render loop polls this (latest-frame wins). */
  latestFrame(): FrameMsg | null {
    return this.latest;
  }

  onFrame(cb: (f: FrameMsg) => void): void {
    this.frameListeners.push(cb);
  }

  onDropped(cb: (d: DroppedMsg) => void): void {
    this.dropListeners.push(cb);
  }

  onError(cb: (e: ErrorMsg) => void): void {
    this.errorListeners.push(cb);
  }

  private handleLine(line: string): void {
    const msg = parseServerMessage(line);
    if (msg === null) return;
    switch (msg.type) {
      case "frame":
        this.latest = msg;
        for (const cb of this.frameListeners) cb(msg);
        return;
      case "dropped":
        for (const cb of this.dropListeners) cb(msg);
        return;
      case "error": {
        const seq = msg.seq;
        if (typeof seq === "number" && this.pending.has(seq)) {
          const p = this.pending.get(seq)!;
          this.pending.delete(seq);
          clearTimeout(p.timer);
          p.reject(new ProtocolFault(msg.code, msg.detail));
        } else {
          for (const cb of this.errorListeners) cb(msg);
        }
        return;
      }
      default: {
        const seq = (msg as { seq?: number }).seq;
        if (typeof seq === "number" && this.pending.has(seq)) {
          const p = this.pending.get(seq)!;
          this.pending.delete(seq);
          clearTimeout(p.timer);
          p.resolve(msg);
        }
      }
    }
  }

  request(msg: OutboundMessage): Promise<ServerMessage> {
    const seq = ++this.seq;
    const full = { ...msg, seq } as ClientMessage;
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(seq);
        reject(new ProtocolFault("timeout", `no ack for seq ${seq}`));
      }, this.timeoutMs);
      this.pending.set(seq, { resolve, reject, timer });
      this.transport.send(encodeMessage(full));
    });
  }

  async createSession(terrainKind?: string): Promise<string> {
    const reply = (await this.request(
      terrainKind
        ? { type: "create_session", terrain_kind: terrainKind }
        : { type: "create_session" },
    )) as SessionCreatedMsg;
    this.sessionId = reply.id;
    return reply.id;
  }

  async setTrajectory(points: Vec2[]): Promise<void> {
    await this.request({ type: "set_trajectory", points });
  }

  async listClips(): Promise<ClipInfo[]> {
    const reply = await this.request({ type: "list_clips" });
    if (reply.type !== "clips") throw new ProtocolFault("schema", "expected clips");
    return reply.clips;
  }

  async step(n: number): Promise<void> {
    await this.request({ type: "step", n });
  }

  async play(): Promise<void> {
    await this.request({ type: "play" });
  }

  async pause(): Promise<void> {
    await this.request({ type: "pause" });
  }

  async reset(): Promise<void> {
    this.latest = null;
    await this.request({ type: "reset" });
  }

  async close(): Promise<void> {
    try {
      await this.request({ type: "close" });
    } finally {
      this.transport.close();
    }
  }
}
