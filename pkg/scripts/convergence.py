"""Convergence of the seeded harness under message loss.

For each drop rate and seed: produce blocks carrying registration traffic,
stop empty blocks, let sync quiesce, then report whether every node holds
the same state hash and how long that took in virtual time.

    python3 scripts/convergence.py --drops 0 0.1 0.2 0.3 --seeds 5
"""

import argparse
import json

from medledger.actors import register_actor
from medledger.net.node import NodeTiming
from medledger.scenario import Deployment
from medledger.state import Role


def trial(seed: int, drop: float, height: int, n_txs: int) -> dict:
    dep = Deployment.create(4, "toy", seed)
    net = dep.network(drop_prob=drop, seed=seed, timing=NodeTiming(empty_block_ms=100))
    for i in range(n_txs):
        who = dep.identity(f"actor{i}", Role.PATIENT)
        net.submit(dep.admin.tx(register_actor(dep.group, who)), f"v{i % 4}")
    reached = net.run_until(lambda: min(net.heights().values()) >= height)
    net.config.timing.empty_block_ms = 0
    t_stop = net.now
    idle = net.run_until(net.idle, max_ms=600_000)
    return {
        "seed": seed,
        "drop": drop,
        "reached_height": reached,
        "converged": idle and net.converged(),
        "height": max(net.heights().values()),
        "quiesce_ms": net.now - t_stop,
        "dropped": net.stats["dropped"],
        "sent": net.stats["sent"],
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--drops", type=float, nargs="+", default=[0.0, 0.1, 0.2])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--height", type=int, default=100)
    ap.add_argument("--txs", type=int, default=40)
    args = ap.parse_args()
    for drop in args.drops:
        rows = [trial(seed, drop, args.height, args.txs) for seed in range(args.seeds)]
        ok = sum(r["converged"] for r in rows)
        worst = max(r["quiesce_ms"] for r in rows)
        print(json.dumps({"drop": drop, "converged": f"{ok}/{len(rows)}", "worst_quiesce_ms": worst}))


if __name__ == "__main__":
    main()
