/**
 * Console view state and the pure reducer that builds it.
 *
 * The view derives solely from the message journal: the hello snapshot,
 * streamed event records, periodic state summaries, acks, and synthetic
 * client markers (connection status, hello requests). Re-applying the same
 * journal to a fresh initial view always yields an identical view, and no
 * command submission mutates the view before its authoritative event
 * arrives on the stream.
 *
 * The isolation level badge changes only on "isolation.transition" event
 * records (plus the initial hello snapshot). State summaries and command
 * acks never move it.
 */
import type { Ack, Envelope, EventRecord } from "./protocol.js";

export type ConnectionStatus = "idle" | "connecting" | "live" | "lost";

export interface BallotView {
  id: string;
  kind: string;
  toLevel: string | null;
  required: number;
  expiry: number;
  votes: { admin: number; choice: string }[];
  rejectedVotes: number;
  outcome: "open" | "passed" | "failed";
  openedSeq: number;
}

export interface PortView {
  id: string;
  model: string;
  deviceClass: string;
  instance: number;
}

export interface AlarmView {
  tick: number;
  source: string;
  reason: string;
  detail: string;
}

export interface JournalEntry {
  seq: number;
  tick: number;
  source: string;
  type: string;
  summary: string;
}

export interface SeqGap {
  expected: number;
  got: number;
}

export interface ConsoleViewState {
  connection: ConnectionStatus;
  scenario: string | null;
  seed: number | null;
  tick: number;
  /** Isolation level badge; moves only on authoritative transition events. */
  level: string | null;
  levelHistory: { tick: number; from: string; to: string; authority: string }[];
  heartbeat: {
    consoleToHyp: "unknown" | "ok" | "missed";
    hypToConsole: "unknown" | "ok" | "missed";
    lastTick: number | null;
    watchdogFired: boolean;
  };
  ballots: Map<string, BallotView>;
  ports: Map<string, PortView>;
  restriction: Record<string, unknown> | null;
  alarm: AlarmView | null;
  alarmCount: number;
  modelLoaded: boolean | null;
  recentEvents: JournalEntry[];
  lastSeq: number | null;
  seqGaps: SeqGap[];
  duplicateSeqs: number;
  lastAck: Ack | null;
  lastError: string | null;
}

export const RECENT_EVENT_CAP = 250;

export function initialView(): ConsoleViewState {
  return {
    connection: "idle",
    scenario: null,
    seed: null,
    tick: 0,
    level: null,
    levelHistory: [],
    heartbeat: {
      consoleToHyp: "unknown",
      hypToConsole: "unknown",
      lastTick: null,
      watchdogFired: false,
    },
    ballots: new Map(),
    ports: new Map(),
    restriction: null,
    alarm: null,
    alarmCount: 0,
    modelLoaded: null,
    recentEvents: [],
    lastSeq: null,
    seqGaps: [],
    duplicateSeqs: 0,
    lastAck: null,
    lastError: null,
  };
}

/** Synthetic journal entries the client inserts for its own lifecycle. */
export function connectionMarker(status: ConnectionStatus): Envelope {
  return { kind: "client", seq: -1, payload: { type: "connection", status } };
}

export function helloRequestMarker(fromSeq: number): Envelope {
  return { kind: "client", seq: -1, payload: { type: "hello_request", from_seq: fromSeq } };
}

function summarize(rec: EventRecord): string {
  const p = rec.payload as Record<string, unknown>;
  switch (rec.type) {
    case "isolation.transition":
      return `${p.from} -> ${p.to} (${p.authority})`;
    case "ballot.opened":
      return `${p.ballot} needs ${p.required}`;
    case "ballot.vote":
      return `${p.ballot} ${p.admin}:${p.choice}${p.ok ? "" : " REFUSED " + p.error}`;
    case "ballot.tallied":
      return `${p.ballot} ${p.outcome} (${p.approvals} approvals)`;
    case "detector.verdict":
      return `${p.plugin}: ${p.action} (${p.reason})`;
    case "watchdog.fired":
      return `silence ${p.silence} ticks`;
    case "port.granted":
      return `${p.port} ${p.class} -> ${p.model}`;
    case "machine.fault":
      return `${p.core} ${p.access} ${p.region} (${p.kind})`;
    default:
      return "";
  }
}

function cloneView(view: ConsoleViewState): ConsoleViewState {
  return {
    ...view,
    levelHistory: [...view.levelHistory],
    heartbeat: { ...view.heartbeat },
    ballots: new Map(Array.from(view.ballots, ([k, v]) =>
      [k, { ...v, votes: [...v.votes] }] as const)),
    ports: new Map(view.ports),
    recentEvents: [...view.recentEvents],
    seqGaps: [...view.seqGaps],
  };
}

function applyEventRecord(view: ConsoleViewState, rec: EventRecord): void {
  // seq accounting first: the displayed list must be provably gapless
  if (view.lastSeq !== null) {
    if (rec.seq <= view.lastSeq) {
      view.duplicateSeqs += 1;
      return;
    }
    if (rec.seq !== view.lastSeq + 1) {
      view.seqGaps.push({ expected: view.lastSeq + 1, got: rec.seq });
    }
  }
  view.lastSeq = rec.seq;
  view.tick = Math.max(view.tick, rec.tick);
  view.recentEvents.push({ seq: rec.seq, tick: rec.tick, source: rec.source,
                           type: rec.type, summary: summarize(rec) });
  if (view.recentEvents.length > RECENT_EVENT_CAP) {
    view.recentEvents.splice(0, view.recentEvents.length - RECENT_EVENT_CAP);
  }

  const p = rec.payload as Record<string, any>;
  switch (rec.type) {
    case "run.start":
      view.scenario = p.scenario?.name ?? view.scenario;
      view.seed = p.seed ?? view.seed;
      break;

    case "isolation.transition":
      view.level = p.to;
      view.levelHistory.push({ tick: rec.tick, from: p.from, to: p.to,
                               authority: p.authority });
      break;

    case "ballot.opened":
      view.ballots.set(p.ballot, {
        id: p.ballot,
        kind: p.proposal?.kind ?? "?",
        toLevel: p.proposal?.to_level ?? null,
        required: p.required,
        expiry: p.expiry,
        votes: [],
        rejectedVotes: 0,
        outcome: "open",
        openedSeq: rec.seq,
      });
      break;

    case "ballot.vote": {
      const ballot = view.ballots.get(p.ballot);
      if (ballot) {
        if (p.ok) ballot.votes.push({ admin: p.admin, choice: p.choice });
        else ballot.rejectedVotes += 1;
      }
      break;
    }

    case "ballot.tallied": {
      const ballot = view.ballots.get(p.ballot);
      if (ballot) ballot.outcome = p.outcome === "passed" ? "passed" : "failed";
      break;
    }

    case "directive.issued":
      if (p.ok) view.restriction = p.restriction ?? null;
      break;

    case "port.restricted":
      view.restriction = p.restriction ?? null;
      break;

    case "port.granted":
      view.ports.set(p.port, { id: p.port, model: p.model,
                               deviceClass: p.class, instance: p.instance });
      break;

    case "port.revoked":
      for (const id of p.ports ?? []) view.ports.delete(id);
      break;

    case "heartbeat.console_to_hyp":
      view.heartbeat.consoleToHyp = p.delivered ? "ok" : "missed";
      view.heartbeat.lastTick = rec.tick;
      if (p.delivered) view.heartbeat.watchdogFired = false;
      break;

    case "heartbeat.hyp_to_console":
      view.heartbeat.hypToConsole = p.delivered ? "ok" : "missed";
      view.heartbeat.lastTick = rec.tick;
      break;

    case "watchdog.fired":
      view.heartbeat.watchdogFired = true;
      view.alarm = { tick: rec.tick, source: "watchdog",
                     reason: "heartbeat_silence",
                     detail: `silent for ${p.silence} ticks` };
      view.alarmCount += 1;
      break;

    case "detector.verdict":
      if (p.action && p.action !== "none") {
        view.alarm = { tick: rec.tick, source: p.plugin, reason: p.reason,
                       detail: `${p.action}${p.target ? " -> " + p.target : ""}` };
        view.alarmCount += 1;
      }
      break;

    case "detector.failure":
      view.alarm = { tick: rec.tick, source: p.plugin ?? "detector",
                     reason: "plugin_failure",
                     detail: `fail closed (${p.error})` };
      view.alarmCount += 1;
      break;

    case "model.loaded":
      view.modelLoaded = true;
      break;

    case "model.load_refused":
      view.modelLoaded = false;
      view.alarm = { tick: rec.tick, source: "attestation",
                     reason: p.reason ?? "load_refused",
                     detail: "model load refused" };
      view.alarmCount += 1;
      break;
  }
}

/**
 * Apply one journal message, returning a new view. Pure: the input view is
 * never mutated, so callers may retain old snapshots and replay journals.
 */
export function applyMessage(view: ConsoleViewState, msg: Envelope): ConsoleViewState {
  const next = cloneView(view);
  switch (msg.kind) {
    case "client": {
      const p = msg.payload as Record<string, any>;
      if (p.type === "connection") next.connection = p.status;
      if (p.type === "hello_request") {
        // first streamed record must be from_seq + 1
        next.lastSeq = typeof p.from_seq === "number" ? p.from_seq : null;
        if (next.lastSeq !== null && next.lastSeq < 0) next.lastSeq = null;
      }
      break;
    }
    case "hello": {
      const p = msg.payload as Record<string, any>;
      next.scenario = p.scenario ?? next.scenario;
      next.seed = p.seed ?? next.seed;
      next.tick = p.now ?? next.tick;
      if (next.level === null) next.level = p.level ?? null;
      next.connection = "live";
      break;
    }
    case "event":
      applyEventRecord(next, msg.payload as unknown as EventRecord);
      break;
    case "state": {
      // periodic summary: advances the clock display, never the level badge
      const p = msg.payload as Record<string, any>;
      if (typeof p.tick === "number") next.tick = Math.max(next.tick, p.tick);
      break;
    }
    case "ack":
      next.lastAck = msg.payload as unknown as Ack;
      break;
    case "error": {
      const p = msg.payload as Record<string, any>;
      next.lastError = `${p.error}${p.detail ? ": " + p.detail : ""}`;
      break;
    }
  }
  return next;
}

/** Rebuild a view from scratch by replaying a whole journal. */
export function renderJournal(journal: Envelope[]): ConsoleViewState {
  let view = initialView();
  for (const msg of journal) view = applyMessage(view, msg);
  return view;
}
