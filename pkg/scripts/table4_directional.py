#!/usr/bin/env python3
"""Train baseline and DLPL on the default shifted-view benchmark for three seeds.

Results are cached in results/table4.json; rerunning only trains what is missing.
Run single-threaded for reproducible numbers:

    OMP_NUM_THREADS=1 OPENBLAS_NUM_THREADS=1 python3 scripts/table4_directional.py
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from dlpl.experiment import EPOCHS, SEEDS, directional, format_summary

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--cache", default=str(ROOT / "results" / "table4.json"))
    ap.add_argument("--runs-dir", default=str(ROOT / "results" / "table4_runs"))
    ap.add_argument("--epochs", type=int, default=EPOCHS)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(SEEDS))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    summary = directional(Path(args.cache), args.seeds, args.epochs, runs_dir=Path(args.runs_dir))
    print(format_summary(summary))
    Path(args.cache).with_name("table4_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
