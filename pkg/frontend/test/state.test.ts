import { describe, expect, it } from "vitest";

import type { Envelope } from "../src/protocol.js";
import {
  RECENT_EVENT_CAP,
  applyMessage,
  connectionMarker,
  helloRequestMarker,
  initialView,
  renderJournal,
} from "../src/state.js";

let seqCounter = 0;

function ev(type: string, payload: Record<string, unknown>,
            tick = 5, seq?: number): Envelope {
  const s = seq ?? seqCounter++;
  return { kind: "event", seq: 0,
           payload: { seq: s, tick, source: type.split(".")[0]!, type, payload } };
}

function hello(level = "STANDARD", seed = 91): Envelope {
  return { kind: "hello", seq: 0,
           payload: { scenario: "t", seed, now: 0, level, last_seq: -1, state: {} } };
}

describe("level badge authority", () => {
  it("initializes from hello and then moves only on transition events", () => {
    let view = applyMessage(initialView(), hello("PROBATION"));
    expect(view.level).toBe("PROBATION");

    // a state summary claiming another level must not move the badge
    view = applyMessage(view, { kind: "state", seq: 1,
                                payload: { tick: 40, level: "SEVERED" } });
    expect(view.level).toBe("PROBATION");
    expect(view.tick).toBe(40);

    // neither may a successful ack
    view = applyMessage(view, { kind: "ack", seq: 2,
      payload: { cmd_seq: 9, ok: true, error: null, data: "passed" } });
    expect(view.level).toBe("PROBATION");

    // the authoritative event does
    view = applyMessage(view, ev("isolation.transition",
      { from: "PROBATION", to: "STANDARD", authority: "console_vote" }, 41));
    expect(view.level).toBe("STANDARD");
    expect(view.levelHistory).toHaveLength(1);
  });

  it("does not let a reconnect hello rewrite an established badge", () => {
    let view = applyMessage(initialView(), hello("STANDARD"));
    view = applyMessage(view, ev("isolation.transition",
      { from: "STANDARD", to: "SEVERED", authority: "software_hypervisor" }));
    view = applyMessage(view, hello("OFFLINE"));
    expect(view.level).toBe("SEVERED");
  });
});

describe("reducer purity and idempotence", () => {
  const journal: Envelope[] = [
    connectionMarker("connecting"),
    helloRequestMarker(-1),
    hello(),
    ev("ballot.opened", { ballot: "ballot-0001",
      proposal: { kind: "transition", to_level: "PROBATION" },
      required: 3, expiry: 1000 }, 10, 0),
    ev("ballot.vote", { ballot: "ballot-0001", admin: 1, choice: "approve",
      ok: true, error: null }, 11, 1),
    ev("ballot.vote", { ballot: "ballot-0001", admin: 1, choice: "approve",
      ok: false, error: "duplicate_vote" }, 12, 2),
    ev("ballot.tallied", { ballot: "ballot-0001", outcome: "failed",
      approvals: 1, required: 3 }, 13, 3),
    ev("port.granted", { port: "port-0001", model: "m0", class: "network",
      instance: 0 }, 14, 4),
    ev("port.restricted", { restriction: { blocked_class: "network" } }, 15, 5),
    ev("port.revoked", { model: "m0", ports: ["port-0001"] }, 16, 6),
    ev("heartbeat.hyp_to_console", { delivered: false }, 20, 7),
    ev("watchdog.fired", { last_rx_console: 10, last_rx_hypervisor: 10,
      silence: 31 }, 41, 8),
    ev("detector.verdict", { plugin: "rate_monitor", action: "alarm",
      reason: "irq_flood", target: "PROBATION" }, 42, 9),
  ];

  it("applyMessage never mutates its input", () => {
    let view = initialView();
    for (const msg of journal) {
      const before = JSON.stringify([...view.ballots.entries()])
        + JSON.stringify([...view.ports.entries()])
        + JSON.stringify({ ...view, ballots: 0, ports: 0 });
      const next = applyMessage(view, msg);
      const after = JSON.stringify([...view.ballots.entries()])
        + JSON.stringify([...view.ports.entries()])
        + JSON.stringify({ ...view, ballots: 0, ports: 0 });
      expect(after).toBe(before);
      view = next;
    }
  });

  it("replaying the same journal yields an identical view", () => {
    expect(renderJournal(journal)).toEqual(renderJournal(journal));
  });

  it("folds the journal into the expected panels", () => {
    const view = renderJournal(journal);
    const ballot = view.ballots.get("ballot-0001")!;
    expect(ballot.votes).toEqual([{ admin: 1, choice: "approve" }]);
    expect(ballot.rejectedVotes).toBe(1);
    expect(ballot.outcome).toBe("failed");
    expect(view.ports.size).toBe(0);             // granted then revoked
    expect(view.restriction).toEqual({ blocked_class: "network" });
    expect(view.heartbeat.hypToConsole).toBe("missed");
    expect(view.heartbeat.watchdogFired).toBe(true);
    expect(view.alarm?.source).toBe("rate_monitor");
    expect(view.alarmCount).toBe(2);              // watchdog + detector
    expect(view.connection).toBe("live");
    expect(view.seqGaps).toEqual([]);
    expect(view.duplicateSeqs).toBe(0);
  });
});

describe("stream accounting", () => {
  it("flags gaps and ignores duplicates", () => {
    let view = applyMessage(initialView(), hello());
    view = applyMessage(view, ev("guest.halt", {}, 1, 0));
    view = applyMessage(view, ev("guest.halt", {}, 2, 1));
    view = applyMessage(view, ev("guest.halt", {}, 2, 1));   // duplicate
    view = applyMessage(view, ev("guest.halt", {}, 4, 3));   // gap: missing 2
    expect(view.duplicateSeqs).toBe(1);
    expect(view.seqGaps).toEqual([{ expected: 2, got: 3 }]);
    expect(view.lastSeq).toBe(3);
    expect(view.recentEvents.map(e => e.seq)).toEqual([0, 1, 3]);
  });

  it("anchors the gap check at the requested resume point", () => {
    let view = applyMessage(initialView(), helloRequestMarker(20));
    view = applyMessage(view, hello());
    view = applyMessage(view, ev("guest.halt", {}, 9, 21));
    expect(view.seqGaps).toEqual([]);
    view = applyMessage(view, ev("guest.halt", {}, 9, 23));
    expect(view.seqGaps).toEqual([{ expected: 22, got: 23 }]);
  });

  it("caps the scrolling event list", () => {
    let view = applyMessage(initialView(), hello());
    for (let i = 0; i < RECENT_EVENT_CAP + 40; i++) {
      view = applyMessage(view, ev("guest.halt", {}, i, i));
    }
    expect(view.recentEvents).toHaveLength(RECENT_EVENT_CAP);
    expect(view.recentEvents[0]!.seq).toBe(40);
    expect(view.lastSeq).toBe(RECENT_EVENT_CAP + 39);
  });

  it("surfaces connection loss prominently in the state", () => {
    let view = applyMessage(initialView(), hello());
    view = applyMessage(view, connectionMarker("lost"));
    expect(view.connection).toBe("lost");
    // and recovery goes back through connecting -> live
    view = applyMessage(view, connectionMarker("connecting"));
    view = applyMessage(view, hello());
    expect(view.connection).toBe("live");
  });
});
