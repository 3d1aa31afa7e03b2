"""Run the four synthetic experiments and write one CSV per experiment.

    python3 scripts/run_experiments.py --out results/ --reps 5000 --seed 0

Each CSV carries the resolved configuration in its first line, so a results
directory is self-describing.
"""

import argparse
import contextlib
import io
from pathlib import Path

from ias import cli

EXPERIMENTS = {
    "1": ("sweep-alpha", "experiment1_alpha.csv", []),
    "2": ("solve-constrained", "experiment2_threshold.csv", ["--v0-points", "11"]),
    "3": ("compare", "experiment3_baseline.csv", []),
    "4": ("experiment4", "experiment4_correlation.csv", []),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=5000, help="profiles per curve point (experiments 1, 3, 4)")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", choices=sorted(EXPERIMENTS), help="subset of experiments")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for key in args.only or sorted(EXPERIMENTS):
        command, name, extra = EXPERIMENTS[key]
        argv = [command, "--seed", str(args.seed), "--threads", str(args.threads), "--out", str(out / name), *extra]
        if command != "solve-constrained":
            argv += ["--reps", str(args.reps)]
        with contextlib.redirect_stdout(io.StringIO()):
            code = cli.main(argv)
        print(f"experiment {key}: exit {code} -> {out / name}")


if __name__ == "__main__":
    main()
