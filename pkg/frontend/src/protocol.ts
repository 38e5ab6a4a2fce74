/**
 * Wire protocol: newline-delimited JSON envelopes over one TCP socket.
 *
 * Every message in either direction is a single line holding
 * {kind, seq, payload}. The decoder below reassembles lines from arbitrary
 * chunk boundaries; the encoder produces exactly one line per envelope.
 */

export interface Envelope {
  kind: string;
  seq: number;
  payload: Record<string, unknown>;
}

/** One simulator event-log record, as carried in "event" envelopes. */
export interface EventRecord {
  seq: number;
  tick: number;
  source: string;
  type: string;
  payload: Record<string, unknown>;
}

/** Server reply to a hello. */
export interface HelloInfo {
  scenario: string;
  seed: number;
  now: number;
  level: string;
  last_seq: number;
  state: Record<string, unknown>;
}

/** Ack payload for a submitted command. */
export interface Ack {
  cmd_seq: number;
  ok: boolean;
  error: string | null;
  data: unknown;
}

export function encodeEnvelope(kind: string, seq: number,
                               payload: Record<string, unknown>): string {
  return JSON.stringify({ kind, seq, payload }) + "\n";
}

/**
 * Incremental line decoder. Feed raw socket chunks, get parsed envelopes.
 * Tolerates messages split across chunks and multiple messages per chunk.
 */
export class NdjsonDecoder {
  private buffer = "";

  push(chunk: Buffer | string): Envelope[] {
    this.buffer += chunk.toString();
    const out: Envelope[] = [];
    let nl: number;
    while ((nl = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, nl).replace(/\r$/, "").trim();
      this.buffer = this.buffer.slice(nl + 1);
      if (!line) continue;
      const msg = JSON.parse(line) as Envelope;
      if (typeof msg.kind !== "string") {
        throw new Error(`envelope without kind: ${line}`);
      }
      out.push(msg);
    }
    return out;
  }

  /** Bytes held back waiting for a newline (diagnostics only). */
  pending(): number {
    return this.buffer.length;
  }
}

/**
 * Canonical JSON: sorted keys, no whitespace. Matches the serialization the
 * simulator uses for digests and signatures, so signed payloads byte-match.
 * Scope: ASCII strings and safe integers (all that signed payloads contain);
 * non-ASCII text and floats are not canonicalized identically.
 */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([k, v]) => JSON.stringify(k) + ":" + canonicalJson(v));
  return "{" + entries.join(",") + "}";
}
