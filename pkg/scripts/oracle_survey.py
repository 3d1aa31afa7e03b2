"""Estimate how often each greedy layout mechanism misses the per-profile optimum.

    python3 scripts/oracle_survey.py --instances 20000 --seed 1

Instances come from the same generator as ``ias oracle-check``. The split
gadget is optionally solved too, to show how often it overshoots the
brute-force optimum (it is a relaxation, not an exact oracle).
"""

import argparse
import json

from ias import cli
from ias.model import BUDGET, COLUMN_SPARSE, ROW_SPARSE


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--split", action="store_true", help="also count split-gadget overshoots")
    args = ap.parse_args()

    for variant in (BUDGET, ROW_SPARSE, COLUMN_SPARSE):
        rep = cli.oracle_check(variant, args.instances, args.seed, args.split)
        rate = rep["greedy_suboptimal"] / args.instances
        line = {
            "family": variant,
            "instances": args.instances,
            "greedy_suboptimal": rep["greedy_suboptimal"],
            "rate": round(rate, 5),
            "network_mismatch": rep["network_mismatch"],
        }
        if args.split:
            line["split_overshoot"] = rep["split_gap"]
        print(json.dumps(line))


if __name__ == "__main__":
    main()
