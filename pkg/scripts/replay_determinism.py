"""Build a seeded fixture chain, persist it, and replay it twice.

Prints the state hash from the in-memory chain, from an in-process replay of
the files on disk, and optionally from a fresh interpreter, so runs on
different machines can be compared.

    python3 scripts/replay_determinism.py --blocks 100 --seed 7 --out /tmp/chain
"""

import argparse
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from medledger.ledger import load_blocks, replay, save_block
from medledger.scenario import build_fixture_chain
from medledger.state import state_hash

_CHILD = """
import sys
from pathlib import Path
from medledger.ledger import Genesis, load_blocks, replay
from medledger.state import state_hash
d = Path(sys.argv[1])
g = Genesis.from_bytes((d / "genesis.bin").read_bytes())
print(state_hash(replay(g, load_blocks(d / "chain"))).hex())
"""


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--blocks", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--group", choices=["toy", "prod"], default="toy")
    ap.add_argument("--out", help="directory for genesis.bin and chain/ (default: a temp dir)")
    ap.add_argument("--no-subprocess", action="store_true")
    args = ap.parse_args()

    b = build_fixture_chain(args.blocks, seed=args.seed, group=args.group)
    out = Path(args.out or tempfile.mkdtemp(prefix="medledger-replay-"))
    (out / "genesis.bin").write_bytes(b.dep.genesis.to_bytes())
    for blk in b.blocks:
        save_block(out / "chain", blk)
    hashes = {
        "recorded": b.blocks[-1].state_root.hex(),
        "replay_memory": state_hash(replay(b.dep.genesis, b.blocks)).hex(),
        "replay_disk": state_hash(replay(b.dep.genesis, load_blocks(out / "chain"))).hex(),
    }
    if not args.no_subprocess:
        child = subprocess.run([sys.executable, "-c", _CHILD, str(out)], capture_output=True, text=True, check=True)
        hashes["replay_subprocess"] = child.stdout.strip()
    print(json.dumps({
        "blocks": args.blocks,
        "seed": args.seed,
        "dir": str(out),
        "records": len(b.state.records),
        "audit_events": len(b.state.audit_log),
        "identical": len(set(hashes.values())) == 1,
        **hashes,
    }, indent=2))


if __name__ == "__main__":
    main()
