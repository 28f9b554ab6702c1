"""Run every diagnostic probe on the synthetic graph, one CSV per probe.

    python3 scripts/run_probes.py --out results/probes --seeds 3
    python3 scripts/run_probes.py --only oversmoothing gradient_vanishing
"""
import argparse
import time
from pathlib import Path

from gatlab.experiments import PROBES, run_probe, synthetic_default
from gatlab.graph import load_dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/probes")
    ap.add_argument("--dataset", help="dataset directory; defaults to the synthetic graph")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--only", nargs="*", choices=sorted(PROBES))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    ds = load_dataset(args.dataset) if args.dataset else synthetic_default(0)
    for name in args.only or list(PROBES):
        t0 = time.time()
        try:
            result = run_probe(name, ds, seeds=range(args.seeds), workers=args.workers)
        except MemoryError as exc:
            print(f"{name}: skipped ({exc})")
            continue
        path = result.write_csv(Path(args.out) / f"{name}.csv")
        print(f"{name}: {len(result.rows)} rows -> {path} ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
