"""Accuracy table over variants and depths, driven by a spec file.

Thin wrapper over ``gatlab run`` that prints the finished table.

    python3 scripts/run_table2.py configs/table2_synthetic.txt
    python3 scripts/run_table2.py configs/table2_synthetic.txt --dataset data/cora
"""
import argparse
from dataclasses import replace
from pathlib import Path

from gatlab.cli import execute_spec
from gatlab.config import load_spec


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("spec")
    ap.add_argument("--dataset", help="override the dataset named in the spec")
    ap.add_argument("--out", help="override the output directory")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    spec = load_spec(args.spec)
    if args.dataset:
        spec = replace(spec, dataset=args.dataset)
    out = Path(args.out or spec.out)
    rows = execute_spec(spec, out, args.workers)
    print(f"{'variant':<20}{'depth':>6}{'test':>10}{'std':>8}")
    for r in rows:
        print(f"{r['variant']:<20}{r['depth']:>6}{100 * r['test_mean']:>10.2f}{100 * r['test_std']:>8.2f}")
    print(f"table written to {out / 'table.csv'}")


if __name__ == "__main__":
    main()
