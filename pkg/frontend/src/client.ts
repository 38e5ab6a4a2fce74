/**
 * Live session client: one TCP connection, one ordered journal.
 *
 * Every message that arrives (and the client's own lifecycle markers) is
 * appended to the journal and folded into the view with the pure reducer.
 * Commands resolve on their ack but never touch the view themselves; the
 * view changes only when the authoritative stream does. Reconnecting
 * resumes from the last applied event seq, so the journal stays gapless
 * and duplicate-free across drops.
 */
import * as net from "node:net";

import type { Ack, Envelope } from "./protocol.js";
import { NdjsonDecoder, encodeEnvelope } from "./protocol.js";
import type { ConsoleViewState } from "./state.js";
import { applyMessage, connectionMarker, helloRequestMarker, initialView } from "./state.js";

export interface ClientOptions {
  host: string;
  port: number;
  /** First subscription point; -1 replays the whole log. */
  fromSeq?: number;
  ackTimeoutMs?: number;
}

type Listener = (view: ConsoleViewState, msg: Envelope) => void;

export class OpconsoleClient {
  readonly journal: Envelope[] = [];
  view: ConsoleViewState = initialView();

  private socket: net.Socket | null = null;
  private decoder = new NdjsonDecoder();
  private seq = 0;
  private pending = new Map<number, { resolve: (ack: Ack) => void;
                                      reject: (err: Error) => void;
                                      timer: NodeJS.Timeout }>();
  private listeners: Listener[] = [];
  private readonly ackTimeoutMs: number;

  constructor(private readonly options: ClientOptions) {
    this.ackTimeoutMs = options.ackTimeoutMs ?? 10_000;
  }

  onChange(fn: Listener): void {
    this.listeners.push(fn);
  }

  private ingest(msg: Envelope): void {
    this.journal.push(msg);
    this.view = applyMessage(this.view, msg);
    if (msg.kind === "ack") {
      const ack = msg.payload as unknown as Ack;
      const entry = this.pending.get(ack.cmd_seq);
      if (entry) {
        clearTimeout(entry.timer);
        this.pending.delete(ack.cmd_seq);
        entry.resolve(ack);
      }
    }
    for (const fn of this.listeners) fn(this.view, msg);
  }

  /** Connect (or reconnect) and subscribe; resolves once the socket is up. */
  connect(fromSeq?: number): Promise<void> {
    const resume = fromSeq ?? this.view.lastSeq ?? this.options.fromSeq ?? -1;
    this.ingest(connectionMarker("connecting"));
    return new Promise((resolve, reject) => {
      const socket = net.createConnection(
        { host: this.options.host, port: this.options.port });
      this.socket = socket;
      socket.setNoDelay(true);
      socket.once("error", (err) => {
        this.failPending(err);
        this.ingest(connectionMarker("lost"));
        reject(err);
      });
      socket.on("close", () => {
        if (this.socket === socket) {
          this.failPending(new Error("connection_lost"));
          this.ingest(connectionMarker("lost"));
        }
      });
      socket.on("data", (chunk) => {
        for (const msg of this.decoder.push(chunk)) this.ingest(msg);
      });
      socket.once("connect", () => {
        this.ingest(helloRequestMarker(resume));
        socket.write(encodeEnvelope("hello", this.nextSeq(), { from_seq: resume }));
        resolve();
      });
    });
  }

  /** Drop the connection without shutting the server down. */
  disconnect(): void {
    const socket = this.socket;
    this.socket = null;
    this.decoder = new NdjsonDecoder();
    if (socket) socket.destroy();
    this.failPending(new Error("disconnected"));
    if (this.view.connection !== "lost") this.ingest(connectionMarker("lost"));
  }

  /** Submit a command; resolves with its ack. Never touches the view. */
  command(op: string, args: Record<string, unknown> = {}): Promise<Ack> {
    const socket = this.socket;
    if (!socket || socket.destroyed) {
      return Promise.reject(new Error("connection_lost"));
    }
    const seq = this.nextSeq();
    const promise = new Promise<Ack>((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(seq);
        reject(new Error(`ack timeout for ${op} (seq ${seq})`));
      }, this.ackTimeoutMs);
      this.pending.set(seq, { resolve, reject, timer });
    });
    socket.write(encodeEnvelope("command", seq, { op, args }));
    return promise;
  }

  /** Wait until the view satisfies a predicate (driven by stream arrival). */
  waitFor(predicate: (view: ConsoleViewState) => boolean,
          timeoutMs = 15_000, label = "condition"): Promise<ConsoleViewState> {
    if (predicate(this.view)) return Promise.resolve(this.view);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        const i = this.listeners.indexOf(check);
        if (i >= 0) this.listeners.splice(i, 1);
        reject(new Error(`timeout waiting for ${label}`));
      }, timeoutMs);
      const check: Listener = (view) => {
        if (!predicate(view)) return;
        clearTimeout(timer);
        const i = this.listeners.indexOf(check);
        if (i >= 0) this.listeners.splice(i, 1);
        resolve(view);
      };
      this.listeners.push(check);
    });
  }

  private nextSeq(): number {
    this.seq += 1;
    return this.seq;
  }

  private failPending(err: Error): void {
    for (const [, entry] of this.pending) {
      clearTimeout(entry.timer);
      entry.reject(err);
    }
    this.pending.clear();
  }
}
