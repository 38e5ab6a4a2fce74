"""Command-line entry points: run, serve, replay."""
from __future__ import annotations

import argparse
import json
import sys

from .scenario import Scenario, default_scenario, load_scenario, workload_scenario
from .server import SimServer
from .sim import Simulation, replay_log


def _build_scenario(args) -> Scenario:
    if args.scenario:
        sc = load_scenario(args.scenario)
    elif getattr(args, "workload", None):
        sc = workload_scenario(args.workload)
    else:
        sc = default_scenario()
    if getattr(args, "seed", None) is not None:
        sc.seed = args.seed
    if getattr(args, "ticks", None) is not None:
        sc.ticks = args.ticks
    return sc


def cmd_run(args) -> int:
    try:
        sim = Simulation(_build_scenario(args))
    except ValueError as exc:
        print(json.dumps({"error": str(exc)}))
        return 2
    report = sim.run()
    if args.log:
        sim.log.write_jsonl(args.log)
    if args.audit:
        sim.broker.export_audit(args.audit)
    if args.transitions:
        sim.isolation.export_transitions(args.transitions)
    if args.sessions:
        sim.gateway.export_sessions(args.sessions)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0 if report.ok else 1


def cmd_serve(args) -> int:
    host, _, port = args.listen.rpartition(":")
    host = host or "127.0.0.1"
    try:
        sim = Simulation(_build_scenario(args))
    except ValueError as exc:
        print(json.dumps({"error": str(exc)}))
        return 2
    server = SimServer(sim, host=host, port=int(port), rate=args.rate,
                       log_path=args.log)
    print(json.dumps({"listening": {"host": server.address[0],
                                    "port": server.address[1]}}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    print(json.dumps({"stopped": True, "ticks": sim.clock.now,
                      "events": len(sim.log.records)}))
    return 0


def cmd_replay(args) -> int:
    try:
        match, sim, detail = replay_log(args.log)
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc)}))
        return 2
    out = {"match": match, "detail": detail, "digest": sim.log.digest(),
           "final_level": sim.isolation.level.name}
    print(json.dumps(out, indent=2, sort_keys=True))
    if args.verify:
        return 0 if match else 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wardsim",
                                     description="warden hypervisor simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario to completion")
    p_run.add_argument("--scenario", help="scenario JSON file")
    p_run.add_argument("--workload", help="run one library workload instead of a file")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--ticks", type=int)
    p_run.add_argument("--log", help="write the event log (JSON Lines)")
    p_run.add_argument("--audit", help="write the port audit trail (JSON Lines)")
    p_run.add_argument("--transitions", help="write isolation transitions (JSON Lines)")
    p_run.add_argument("--sessions", help="write network session records (JSON Lines)")
    p_run.set_defaults(fn=cmd_run)

    p_serve = sub.add_parser("serve", help="run interactively behind a socket")
    p_serve.add_argument("--scenario", help="scenario JSON file")
    p_serve.add_argument("--workload")
    p_serve.add_argument("--seed", type=int)
    p_serve.add_argument("--ticks", type=int)
    p_serve.add_argument("--listen", default="127.0.0.1:0", help="host:port (port 0 picks one)")
    p_serve.add_argument("--rate", type=float, default=50.0, help="ticks per second")
    p_serve.add_argument("--log", help="write the event log on shutdown")
    p_serve.set_defaults(fn=cmd_serve)

    p_replay = sub.add_parser("replay", help="re-execute a recorded log")
    p_replay.add_argument("--log", required=True)
    p_replay.add_argument("--verify", action="store_true",
                          help="exit nonzero unless the regenerated log is identical")
    p_replay.set_defaults(fn=cmd_replay)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
