"""Run the convergence study for one or more scenario files and print the reports.

    python3 scripts/run_convergence.py scenarios/linear_1d.cfg [more.cfg ...] [--out out/]
"""

import argparse
import sys
from pathlib import Path

from homog_rd.pipeline import StageError, run_convergence_study
from homog_rd.scenario import load_scenario


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="+")
    ap.add_argument("--out", default=None, help="write <name>.json reports here")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    status = 0
    for path in args.configs:
        cfg = load_scenario(path)
        try:
            rep = run_convergence_study(cfg, threads=args.threads)
        except StageError as exc:
            print(f"{cfg.name}: {exc}", file=sys.stderr)
            status = 2
            continue
        print(rep.to_text())
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{cfg.name}.json").write_text(rep.to_json())
        status = max(status, 0 if rep.passed else 2)
    return status


if __name__ == "__main__":
    sys.exit(main())
