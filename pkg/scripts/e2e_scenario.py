"""End-to-end workflow on a seeded 4-validator in-process network.

A patient registers a device and ingests readings, grants a cardiologist
access under a policy, the proxy serves the requests, the doctor decrypts
every reading, a researcher is denied, and after revocation every further
request is denied and logged.

    python3 scripts/e2e_scenario.py --readings 100 --group prod
"""

import argparse
import collections
import json
import time

from medledger.scenario import Workflow
from medledger.state import Decision


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--readings", type=int, default=100)
    ap.add_argument("--group", choices=["toy", "prod"], default="prod")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--drop", type=float, default=0.0, help="peer message drop probability")
    args = ap.parse_args()

    t0 = time.perf_counter()
    wf = Workflow.build(seed=args.seed, group=args.group, drop_prob=args.drop).setup()
    readings = wf.ingest(args.readings, seed=args.seed)
    wf.grant("g/doctor", wf.doctor, "role:cardiologist")
    wf.grant("g/researcher", wf.researcher, "role:cardiologist")
    doctor = wf.request(wf.doctor, "g/doctor", wf.record_ids)
    researcher = wf.request(wf.researcher, "g/researcher", wf.record_ids[:5])
    wf.run_proxy(doctor + researcher)
    exact = sum(wf.fetch(wf.doctor, q) == r.to_bytes() for q, r in zip(doctor, readings))

    wf.revoke("g/doctor")
    late = wf.request(wf.doctor, "g/doctor", wf.record_ids[:5])
    wf.run_proxy(late)
    state = wf.state
    per_request = collections.Counter(e.request_id for e in state.audit_log)
    decisions = collections.Counter(e.describe() for e in state.audit_log)
    summary = {
        "group": args.group,
        "readings": args.readings,
        "decrypted_exactly": exact,
        "researcher_denied": sum(state.requests[q].decision == Decision.DENIED for q in researcher),
        "denied_after_revoke": sum(state.requests[q].reason == "Revoked" for q in late),
        "audit_events": len(state.audit_log),
        "one_event_per_request": set(per_request.values()) == {1} and len(per_request) == len(state.requests),
        "decisions": dict(decisions),
        "height": wf.height(),
        "virtual_ms": wf.net.now,
        "wall_s": round(time.perf_counter() - t0, 2),
    }
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
