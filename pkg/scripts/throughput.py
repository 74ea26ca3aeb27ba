"""StoreRecord throughput across 4 simulated validators.

Artifact benchmark: times device sealing, submission and finality on every
validator for a batch of readings. Not a measurement from the original work.

    python3 scripts/throughput.py --count 1000 --group prod
"""

import argparse
import json
import time

from medledger.scenario import Workflow


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--group", choices=["toy", "prod"], default="prod")
    ap.add_argument("--validators", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    wf = Workflow.build(seed=args.seed, group=args.group, n_validators=args.validators).setup()
    start_height = wf.height()
    t0 = time.perf_counter()
    wf.ingest(args.count, seed=args.seed)
    ids = list(wf.device.sent)
    nodes = wf.net.nodes.values()
    wf.net.run_until(lambda: all(all(t in n.chain.tx_index for t in ids) for n in nodes))
    elapsed = time.perf_counter() - t0
    print(json.dumps({
        "group": args.group,
        "validators": args.validators,
        "txs": len(ids),
        "blocks": wf.height() - start_height,
        "wall_s": round(elapsed, 2),
        "tx_per_s": round(len(ids) / elapsed, 1),
        "virtual_ms": wf.net.now,
    }, indent=2))


if __name__ == "__main__":
    main()
