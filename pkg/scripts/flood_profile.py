#!/usr/bin/env python3
"""Profile interrupt deliveries per throttle window during a doorbell flood."""
import argparse
import sys
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from wardsim.scenario import workload_scenario
from wardsim.sim import Simulation


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ticks", type=int, default=600)
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--window", type=int, default=10)
    args = ap.parse_args()

    sim = Simulation(workload_scenario("interrupt_flood",
                                       ticks=args.ticks, seed=args.seed))
    sim.run()

    per_window: Counter = Counter()
    for e in sim.log.of_type("irq.raised"):
        if e.payload["result"] == "delivered":
            per_window[e.tick // args.window] += 1
    for e in sim.log.of_type("irq.delivered"):
        per_window[e.tick // args.window] += 1

    raised = sim.log.count_of("irq.raised")
    t = sim.broker.throttle
    print(f"raised {raised}, delivered {t.delivered_total}, "
          f"still queued {t.deferred_depth()}")
    print(f"{'window':>6}  {'ticks':<13} deliveries")
    for w in sorted(per_window):
        lo, hi = w * args.window, (w + 1) * args.window - 1
        n = per_window[w]
        print(f"{w:>6}  [{lo:>5},{hi:>5}]  {'#' * n} {n}")
    worst = max(per_window.values(), default=0)
    print(f"peak {worst}/window across {len(per_window)} windows")
    return 0


if __name__ == "__main__":
    sys.exit(main())
