#!/usr/bin/env python3
"""Recovery experiments on the built-in synthetic groups.

For each requested group this generates a fresh corpus per repetition,
learns a rule set, and scores exact-match recovery, weight error, and
held-out event MAE.  Per-repetition rows land in a CSV per group, the
aggregate summary in one JSON file.

Typical full run (the published setup; slow on a laptop):

    python3 scripts/run_groups.py --out-dir results/
    python3 scripts/run_groups.py --groups group1 --repetitions 3 --n 1000
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tempologic.evaluation import CSV_HEADER, aggregate, csv_row, run_experiment
from tempologic.induction import TrainConfig
from tempologic.synth import PRESETS

# corpus sizes from the published recovery setup
DEFAULT_N = {"group1": 5000, "group2": 10000, "group3": 20000}


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--groups", nargs="+", default=list(DEFAULT_N),
                   choices=sorted(PRESETS))
    p.add_argument("--n", type=int, default=None,
                   help="sequences per corpus (default: per-group published size)")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", type=Path, default=Path("results"))
    p.add_argument("--quiet", action="store_true")
    return p.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    say = (lambda _msg: None) if args.quiet else print
    summary = {}
    for group in args.groups:
        n = args.n or DEFAULT_N[group]
        say(f"== {group}: n={n}, {args.repetitions} repetitions, "
            f"{args.restarts} restarts ==")
        config = TrainConfig(restarts=args.restarts, seed=args.seed,
                             workers=args.workers)
        reports = run_experiment(PRESETS[group], n, config,
                                 repetitions=args.repetitions, progress=say)
        rows = [csv_row(i, r) for i, r in enumerate(reports)]
        csv_path = args.out_dir / f"{group}.csv"
        csv_path.write_text(CSV_HEADER + "\n" + "\n".join(rows) + "\n")
        summary[group] = aggregate(reports)
        say(f"{group}: {json.dumps(summary[group])}")
    out = args.out_dir / "summary.json"
    out.write_text(json.dumps(summary, indent=2) + "\n")
    say(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
