/**
 * Terminal dashboard: renders the console view and drives a live session.
 *
 * Usage: node dist/dashboard.js <host:port> [--admin N] [--from-seq N]
 *
 * The screen redraws on every stream message. Nothing shown here is
 * predicted client-side: the badge, tallies, ports, and alarms all lag the
 * socket by exactly the messages that carried them.
 */
import * as readline from "node:readline";

import { OpconsoleClient } from "./client.js";
import { signedVote } from "./signing.js";
import type { BallotView, ConsoleViewState } from "./state.js";

const RESET = "\x1b[0m";
const BOLD = "\x1b[1m";
const DIM = "\x1b[2m";
const RED = "\x1b[31m";
const GREEN = "\x1b[32m";
const YELLOW = "\x1b[33m";
const MAGENTA = "\x1b[35m";
const CYAN = "\x1b[36m";
const INVERT = "\x1b[7m";

const LEVEL_COLOR: Record<string, string> = {
  STANDARD: GREEN,
  PROBATION: YELLOW,
  SEVERED: YELLOW,
  OFFLINE: MAGENTA,
  DECAPITATION: RED,
  IMMOLATION: RED,
};

function badge(level: string | null): string {
  if (!level) return `${DIM}[ no level yet ]${RESET}`;
  const color = LEVEL_COLOR[level] ?? "";
  return `${BOLD}${color}${INVERT} ${level} ${RESET}`;
}

function ballotLine(b: BallotView): string {
  const tally = `${b.votes.filter(v => v.choice === "approve").length}/${b.required}`;
  const target = b.toLevel ? ` -> ${b.toLevel}` : "";
  const state = b.outcome === "open" ? `${CYAN}open${RESET}`
    : b.outcome === "passed" ? `${GREEN}passed${RESET}` : `${RED}failed${RESET}`;
  return `  ${b.id} ${b.kind}${target}  approvals ${tally}  ${state}`;
}

export interface RenderOptions {
  sourceFilter?: string | null;
  eventRows?: number;
  adminId?: number;
}

export function render(view: ConsoleViewState, opts: RenderOptions = {}): string {
  const rows: string[] = [];
  const conn = view.connection === "live"
    ? `${GREEN}live${RESET}`
    : `${BOLD}${RED}${INVERT} CONNECTION ${view.connection.toUpperCase()} ${RESET}`;
  rows.push(`${BOLD}warden console${RESET}  ${view.scenario ?? "?"} seed=${view.seed ?? "?"}`
    + `  tick ${view.tick}  link ${conn}`);
  rows.push(`isolation ${badge(view.level)}  transitions ${view.levelHistory.length}`
    + (view.seqGaps.length ? `  ${RED}STREAM GAPS ${view.seqGaps.length}${RESET}` : "")
    + (view.duplicateSeqs ? `  ${RED}DUPES ${view.duplicateSeqs}${RESET}` : ""));

  const hb = view.heartbeat;
  const mark = (s: string) => s === "ok" ? `${GREEN}ok${RESET}`
    : s === "missed" ? `${RED}missed${RESET}` : `${DIM}${s}${RESET}`;
  rows.push(`heartbeat console->hyp ${mark(hb.consoleToHyp)}  hyp->console `
    + `${mark(hb.hypToConsole)}${hb.watchdogFired ? `  ${RED}${BOLD}WATCHDOG FIRED${RESET}` : ""}`);

  if (view.alarm) {
    rows.push(`${RED}${BOLD}ALARM${RESET} [${view.alarm.source}] ${view.alarm.reason} `
      + `${view.alarm.detail} (tick ${view.alarm.tick}, total ${view.alarmCount})`);
  }
  if (view.lastError) rows.push(`${RED}protocol error: ${view.lastError}${RESET}`);
  if (view.lastAck && !view.lastAck.ok) {
    rows.push(`${YELLOW}refused: ${view.lastAck.error}${RESET}`);
  }

  rows.push(`${BOLD}ballots${RESET}${view.ballots.size ? "" : `  ${DIM}none${RESET}`}`);
  for (const b of view.ballots.values()) rows.push(ballotLine(b));

  const ports = Array.from(view.ports.values());
  rows.push(`${BOLD}ports${RESET}  ${ports.length
    ? ports.map(p => `${p.id}(${p.deviceClass})`).join(" ")
    : `${DIM}all revoked or none granted${RESET}`}`);
  if (view.restriction) {
    rows.push(`  restriction: ${JSON.stringify(view.restriction)}`);
  }

  const filter = opts.sourceFilter ?? null;
  const eventRows = opts.eventRows ?? 12;
  const shown = view.recentEvents
    .filter(e => !filter || e.source === filter)
    .slice(-eventRows);
  rows.push(`${BOLD}events${RESET}${filter ? ` (source=${filter})` : ""}`);
  for (const e of shown) {
    rows.push(`  ${DIM}${String(e.seq).padStart(6)} t${String(e.tick).padEnd(6)}${RESET}`
      + ` ${e.source.padEnd(9)} ${e.type.padEnd(28)} ${e.summary}`);
  }
  rows.push(`${DIM}persona admin${opts.adminId ?? 1} | ballot <LEVEL> | vote <id> [deny]`
    + ` | tally <id> | directive <id> | repair <id> | transition <LEVEL> <approvals>`
    + ` | admin <n> | filter <src|all> | sever | restore | input <text>`
    + ` | pause | resume | step [n] | quit${RESET}`);
  return rows.join("\n");
}

async function dispatch(client: OpconsoleClient, adminRef: { id: number },
                        filterRef: { src: string | null },
                        line: string): Promise<string> {
  const [cmd, ...rest] = line.trim().split(/\s+/);
  const seed = client.view.seed;
  try {
    switch (cmd) {
      case "ballot": {
        const ack = await client.command("open_ballot", {
          proposal: { kind: "transition", to_level: rest[0] } });
        return ack.ok ? `opened ${ack.data}` : `refused: ${ack.error}`;
      }
      case "vote": {
        if (seed === null) return "no seed yet (hello pending)";
        const choice = rest[1] === "deny" ? "deny" : "approve";
        const ack = await client.command("admin_vote",
          signedVote(seed, rest[0] ?? "", adminRef.id, choice));
        return ack.ok ? `vote recorded` : `refused: ${ack.error}`;
      }
      case "tally": {
        const ack = await client.command("tally", { ballot: rest[0] });
        return ack.ok ? `tally: ${ack.data}` : `refused: ${ack.error}`;
      }
      case "directive": {
        const ack = await client.command("probation_directive", { ballot: rest[0] });
        return ack.ok ? "directive applied" : `refused: ${ack.error}`;
      }
      case "repair": {
        const ack = await client.command("manual_repair", { ballot: rest[0] });
        return ack.ok ? "repair done" : `refused: ${ack.error}`;
      }
      case "transition": {
        const ack = await client.command("console_transition", {
          to_level: rest[0], approvals: Number(rest[1] ?? 0) });
        return ack.ok ? "transition queued" : `refused: ${ack.error}`;
      }
      case "sever":
        return (await client.command("sever_console_link")).ok ? "link severed" : "refused";
      case "restore":
        return (await client.command("restore_link")).ok ? "link restored" : "refused";
      case "input": {
        const ack = await client.command("external_input", { payload: rest.join(" ") });
        return ack.ok ? "delivered" : `refused: ${ack.error}`;
      }
      case "pause":
      case "resume":
        return (await client.command(cmd)).data as string;
      case "step": {
        const ack = await client.command("step", { ticks: Number(rest[0] ?? 1) });
        return ack.data as string;
      }
      case "admin":
        adminRef.id = Number(rest[0] ?? 1);
        return `persona admin${adminRef.id}`;
      case "filter":
        filterRef.src = rest[0] === "all" ? null : rest[0] ?? null;
        return `filter ${filterRef.src ?? "off"}`;
      case "":
        return "";
      default:
        return `unknown command: ${cmd}`;
    }
  } catch (err) {
    return `error: ${(err as Error).message}`;
  }
}

export async function main(argv = process.argv.slice(2)): Promise<void> {
  const target = argv.find(a => !a.startsWith("--")) ?? "127.0.0.1:7733";
  const [host, portText] = target.split(":");
  const adminArg = argv.indexOf("--admin");
  const fromArg = argv.indexOf("--from-seq");
  const adminRef = { id: adminArg >= 0 ? Number(argv[adminArg + 1]) : 1 };
  const filterRef = { src: null as string | null };

  const client = new OpconsoleClient({
    host: host || "127.0.0.1",
    port: Number(portText ?? "7733"),
    fromSeq: fromArg >= 0 ? Number(argv[fromArg + 1]) : -1,
  });

  let status = "connected";
  const redraw = () => {
    process.stdout.write("\x1b[2J\x1b[H"
      + render(client.view, { sourceFilter: filterRef.src, adminId: adminRef.id })
      + `\n${status}\n> `);
  };
  let queued = false;
  client.onChange(() => {
    if (queued) return;
    queued = true;
    setTimeout(() => { queued = false; redraw(); }, 40);
  });

  await client.connect();
  const rl = readline.createInterface({ input: process.stdin });
  rl.on("line", async (line) => {
    if (line.trim() === "quit") {
      client.disconnect();
      rl.close();
      process.exit(0);
    }
    status = await dispatch(client, adminRef, filterRef, line);
    redraw();
  });
  redraw();
}

const isEntry = process.argv[1]?.endsWith("dashboard.js")
  || process.argv[1]?.endsWith("dashboard.ts");
if (isEntry) {
  main().catch((err) => {
    console.error(String(err));
    process.exit(1);
  });
}
