/**
 * End-to-end test against a live simulator serve session.
 *
 * Covers the operator-console acceptance flow: pass a relax ballot with
 * client-signed votes and prove the level badge moves only when the
 * authoritative transition event arrives on the stream, then drop and
 * resume a second subscriber and prove its event list is gapless and
 * duplicate-free.
 */
import { type ChildProcess, spawn } from "node:child_process";
import { once } from "node:events";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import * as readline from "node:readline";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { OpconsoleClient } from "../src/client.js";
import type { Envelope, EventRecord } from "../src/protocol.js";
import { canonicalJson } from "../src/protocol.js";
import { signedVote } from "../src/signing.js";
import { applyMessage, initialView } from "../src/state.js";

const REPO_ROOT = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..");

let server: ChildProcess;
let stderrText = "";
let host = "";
let port = 0;

beforeAll(async () => {
  server = spawn("python3",
    ["-m", "wardsim", "serve",
     "--scenario", "scenarios/ui_demo.json",
     "--listen", "127.0.0.1:0", "--rate", "400"],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] });
  server.stderr!.on("data", (d) => { stderrText += d.toString(); });

  const rl = readline.createInterface({ input: server.stdout! });
  const first: string = await new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("server never announced")), 30_000);
    rl.once("line", (line) => { clearTimeout(timer); resolve(line); });
    server.once("exit", (code) =>
      reject(new Error(`server exited early (${code}): ${stderrText}`)));
  });
  const announced = JSON.parse(first) as { listening: { host: string; port: number } };
  host = announced.listening.host;
  port = announced.listening.port;
});

afterAll(async () => {
  if (server && server.exitCode === null) {
    server.kill("SIGKILL");
    await once(server, "exit").catch(() => undefined);
  }
});

function eventRecords(journal: Envelope[]): EventRecord[] {
  return journal.filter(m => m.kind === "event")
                .map(m => m.payload as unknown as EventRecord);
}

describe("operator console against a live session", () => {
  it("passes a relax ballot; the badge moves only on the stream event; "
     + "a reconnecting subscriber stays gapless", async () => {
    const a = new OpconsoleClient({ host, port, fromSeq: -1 });
    const b = new OpconsoleClient({ host, port, fromSeq: -1 });
    await a.connect();
    await b.connect();

    // the flood workload escalates the deployment on its own
    await a.waitFor(v => v.level === "PROBATION", 30_000, "probation");
    expect(a.view.seed).toBe(91);

    // second subscriber drops mid-run once it has some history
    await b.waitFor(v => (v.lastSeq ?? -1) >= 80, 30_000, "b history");
    b.disconnect();
    expect(b.view.connection).toBe("lost");

    // open the relax ballot (quorum 5 for any relax)
    const opened = await a.command("open_ballot",
      { proposal: { kind: "transition", to_level: "STANDARD" } });
    expect(opened.ok).toBe(true);
    const ballotId = opened.data as string;
    await a.waitFor(v => v.ballots.has(ballotId), 15_000, "ballot visible");
    expect(a.view.ballots.get(ballotId)!.required).toBe(5);

    // five client-signed approvals from five personas
    for (const admin of [1, 2, 3, 4, 5]) {
      const ack = await a.command("admin_vote",
        signedVote(a.view.seed!, ballotId, admin, "approve"));
      expect(ack.ok).toBe(true);
    }
    await a.waitFor(
      v => v.ballots.get(ballotId)!.votes.length === 5, 15_000, "votes on stream");

    // all five votes are in, but nothing was tallied: no optimistic relax
    expect(a.view.level).toBe("PROBATION");

    const tallied = await a.command("tally", { ballot: ballotId });
    expect(tallied.ok).toBe(true);
    expect(tallied.data).toBe("passed");

    await a.waitFor(v => v.level === "STANDARD", 15_000, "relax commit");
    const relaxed = a.view.levelHistory.at(-1)!;
    expect(relaxed.from).toBe("PROBATION");
    expect(relaxed.authority).toBe("console_vote");

    // interception proof: fold the raw journal and record every message
    // index at which the badge changed; only hello snapshots and
    // isolation.transition events may appear, never acks or summaries
    let probe = initialView();
    const changes: { kind: string; type?: string; to?: string }[] = [];
    for (const msg of a.journal) {
      const before = probe.level;
      probe = applyMessage(probe, msg);
      if (probe.level !== before) {
        const rec = msg.kind === "event"
          ? (msg.payload as unknown as EventRecord) : null;
        changes.push({ kind: msg.kind, type: rec?.type,
                       to: rec ? (rec.payload as any).to : probe.level });
      }
    }
    // two changes when the hello snapshot already reflects the escalation,
    // three when the client connected before it; never more
    expect(changes.length).toBeGreaterThanOrEqual(2);
    expect(changes[0]!.kind).toBe("hello");
    for (const change of changes.slice(1)) {
      expect(change.kind).toBe("event");
      expect(change.type).toBe("isolation.transition");
    }
    expect(changes.at(-1)!.kind).toBe("event");
    expect(changes.at(-1)!.to).toBe("STANDARD");

    // reconnect the dropped subscriber; it resumes from its own lastSeq
    const resumeFrom = b.view.lastSeq!;
    await b.connect();
    const targetSeq = a.view.lastSeq!;
    await b.waitFor(v => (v.lastSeq ?? -1) >= targetSeq, 30_000, "b caught up");

    // gapless, duplicate-free: every seq from 0..N exactly once
    expect(b.view.seqGaps).toEqual([]);
    expect(b.view.duplicateSeqs).toBe(0);
    const bRecords = eventRecords(b.journal);
    const bSeqs = bRecords.map(r => r.seq);
    expect(bSeqs[0]).toBe(0);
    for (let i = 1; i < bSeqs.length; i++) {
      expect(bSeqs[i]).toBe(bSeqs[i - 1]! + 1);
    }
    expect(Math.max(...bSeqs)).toBeGreaterThan(resumeFrom);

    // and identical in content to the uninterrupted subscriber's stream
    const aBySeq = new Map(eventRecords(a.journal).map(r => [r.seq, r]));
    for (const rec of bRecords) {
      const twin = aBySeq.get(rec.seq);
      if (twin === undefined) continue;  // b may be ahead of a's high-water
      expect(canonicalJson(rec)).toBe(canonicalJson(twin));
    }
    const shared = bRecords.filter(r => aBySeq.has(r.seq)).length;
    expect(shared).toBeGreaterThan(resumeFrom);

    // command refusals surface verbatim through the same ack path
    const refused = await a.command("tally", { ballot: "ballot-9999" });
    expect(refused.ok).toBe(false);
    expect(refused.error).toBe("command_refused:unknown_ballot");

    // shut the session down; both clients see the drop prominently
    const bye = await a.command("shutdown");
    expect(bye.ok).toBe(true);
    await a.waitFor(v => v.connection === "lost", 15_000, "a sees drop");
    await b.waitFor(v => v.connection === "lost", 15_000, "b sees drop");
    const code = server.exitCode ?? (await once(server, "exit"))[0];
    expect(code).toBe(0);
  });
});
