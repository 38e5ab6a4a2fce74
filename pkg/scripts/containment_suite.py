#!/usr/bin/env python3
"""Run every adversarial workload and print a containment summary table."""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from wardsim.guests import workload_library
from wardsim.scenario import workload_scenario
from wardsim.sim import Simulation


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ticks", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--include-benign", action="store_true")
    args = ap.parse_args()

    names = [w.name for w in workload_library()
             if args.include_benign or w.name != "benign_echo"]
    width = max(len(n) for n in names)
    print(f"{'workload':<{width}}  {'final':<10} {'instr':>7} {'faults':>6} "
          f"{'audits':>6} {'ms':>6}  verdict")
    failures = 0
    for name in names:
        sc = workload_scenario(name, ticks=args.ticks, seed=args.seed)
        sc.assertions.heartbeats_uninterrupted = True
        t0 = time.perf_counter()
        report = Simulation(sc).run()
        ms = (time.perf_counter() - t0) * 1000
        bad = [k for k, a in report.assertions.items() if not a["passed"]]
        if bad:
            failures += 1
        print(f"{name:<{width}}  {report.final_level:<10} "
              f"{report.counts['instructions']:>7} {report.counts['faults']:>6} "
              f"{report.counts['audits']:>6} {ms:>6.0f}  "
              f"{'FAIL ' + ','.join(bad) if bad else 'contained'}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
