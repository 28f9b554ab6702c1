"""Command-line front end: ``gatlab {prep,depth,run,probe,report}``.

Failures exit nonzero after printing a single line ``ERROR[<tag>] <message>``
to stderr, where ``<tag>`` is the exception class name.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentSpec, dump_kv, load_spec, parse_kv
from .experiments import PROBE_DEPTHS, PROBES, DEFAULT_PROBE_HP, ProbeResult, config_hash, run_probe, synthetic_default
from .graph import (
    CountMismatchError,
    Dataset,
    DatasetError,
    build_csr,
    degree_stats,
    generate_synthetic,
    load_dataset,
    random_split,
    save_dataset,
)
from .model import adaptive_depth
from .trainer import TrainingDiverged, hparam_sweep, run_seeds

log = logging.getLogger("gatlab")


class RunFailed(RuntimeError):
    pass


# --- argument helpers -------------------------------------------------------


def int_list(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def seed_list(text: str) -> list[int]:
    """``5`` means seeds 0..4; a comma list or range is taken literally."""
    if text.isdigit():
        return list(range(int(text)))
    return int_list(text)


def _open_dataset(ref: str | None) -> Dataset:
    if ref in (None, "synthetic"):
        return synthetic_default(0)
    return load_dataset(ref)


def _write_csv(path: Path, columns: list[str], rows: list[dict], comment: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in columns})


# --- prep -------------------------------------------------------------------


def _read_linqs(content: Path, cites: Path):
    """Cora-style ``.content`` (id, features..., label) and ``.cites`` files."""
    ids, feats, names = [], [], []
    for line in content.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        ids.append(parts[0])
        feats.append([float(x) for x in parts[1:-1]])
        names.append(parts[-1])
    index = {k: i for i, k in enumerate(ids)}
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names], dtype=np.int64)
    edges, dropped = [], 0
    for line in cites.read_text().splitlines():
        parts = line.split()
        if len(parts) != 2:
            continue
        if parts[0] in index and parts[1] in index:
            edges.append((index[parts[0]], index[parts[1]]))
        else:
            dropped += 1
    if dropped:
        log.warning("dropped %d citations to documents missing from the content file", dropped)
    return np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(feats), labels, len(classes)


def _read_matrix(path: Path, dtype) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"{path} not found")
    try:
        return np.loadtxt(path, delimiter=",", dtype=dtype, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"{path.name}: {exc}") from exc


def cmd_prep(args) -> int:
    if args.source == "synthetic":
        ds = generate_synthetic(
            n=args.n,
            avg_degree=args.avg_degree,
            num_classes=args.classes,
            feat_dim=args.feat_dim,
            homophily=args.homophily,
            split_sizes=tuple(args.split),
            seed=args.seed,
            noise=args.noise,
            name=args.name or "synthetic",
        )
    else:
        if args.content:
            edges, feats, labels, C = _read_linqs(Path(args.content), Path(args.cites))
        else:
            edges = _read_matrix(Path(args.edges), np.int64).reshape(-1, 2)
            feats = _read_matrix(Path(args.features), np.float64)
            labels = _read_matrix(Path(args.labels), np.int64).reshape(-1)
            C = int(labels.max()) + 1
        n = feats.shape[0]
        if labels.shape[0] != n:
            raise CountMismatchError(f"{labels.shape[0]} labels for {n} feature rows")
        graph = build_csr(edges, n)
        if args.splits:
            spl = json.loads(Path(args.splits).read_text())
            masks = []
            for key in ("train", "val", "test"):
                m = np.zeros(n, dtype=bool)
                m[np.asarray(spl[key], dtype=np.int64)] = True
                masks.append(m)
        else:
            masks = random_split(labels, tuple(args.split), np.random.default_rng(args.seed), args.per_class_train)
        ds = Dataset(args.name or "converted", graph, feats, labels, *masks, C, num_edges_raw=int(edges.shape[0]))
    save_dataset(ds, args.out)
    st = degree_stats(ds.graph)
    print(
        f"nodes={ds.num_nodes} edges={ds.graph.num_edges} listed_edges={ds.num_edges_raw} q={st.avg_degree_q:.4f} "
        f"min_degree={st.min_degree} max_degree={st.max_degree} isolated={st.num_isolated}"
    )
    print(f"wrote {args.out}")
    return 0


# --- depth ------------------------------------------------------------------


def cmd_depth(args) -> int:
    ds = load_dataset(args.dataset)
    L_real, L_sel = adaptive_depth(ds.num_nodes, ds.num_edges_raw)
    out = {"q": 2.0 * ds.num_edges_raw / ds.num_nodes, "L_real": L_real, "L_selected": L_sel}
    print(f"q={out['q']:.4f} L_real={L_real:.4f} L_selected={L_sel}")
    dest = Path(args.out) if args.out else Path(args.dataset)
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "depth.json").write_text(json.dumps(out, indent=2) + "\n")
    return 0


# --- run / report -----------------------------------------------------------

TABLE_COLUMNS = [
    "dataset",
    "variant",
    "depth",
    "test_mean",
    "test_std",
    "val_mean",
    "val_std",
    "learning_rate",
    "weight_decay",
    "beta",
    "num_seeds",
]


def _run_id(variant: str, depth: int, seed: int) -> str:
    return f"{variant}_d{depth}_s{seed}"


def _row_from_runs(dataset: str, variant: str, depth: int, runs: list[dict]) -> dict:
    tests = np.array([r["test_at_best"] for r in runs])
    vals = np.array([r["val_at_best"] for r in runs])
    hp = runs[0]["hparams"]
    return {
        "dataset": dataset,
        "variant": variant,
        "depth": depth,
        "test_mean": float(tests.mean()),
        "test_std": float(tests.std()),
        "val_mean": float(vals.mean()),
        "val_std": float(vals.std()),
        "learning_rate": hp["learning_rate"],
        "weight_decay": hp["weight_decay"],
        "beta": hp["beta"],
        "num_seeds": len(runs),
    }


def _write_table(out: Path, rows: list[dict], provenance: dict) -> None:
    comment = " ".join(f"{k}={json.dumps(v, separators=(',', ':'))}" for k, v in provenance.items())
    _write_csv(out / "table.csv", TABLE_COLUMNS, rows, comment)
    (out / "table.json").write_text(json.dumps({"provenance": provenance, "rows": rows}, indent=2) + "\n")


def execute_spec(spec: ExperimentSpec, out: Path, workers: int = 1) -> list[dict]:
    ds = _open_dataset(spec.dataset)
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    (out / "spec.txt").write_text(dump_kv(spec.to_mapping()))
    provenance = {
        "config_hash": config_hash(spec.to_mapping()),
        "seeds": spec.seeds,
        "version": __version__,
    }
    rows: list[dict] = []
    for variant in spec.variants:
        for depth in spec.depths:
            cfg = replace(spec.model, variant=variant, depth=depth)
            hp = spec.hparams
            try:
                if spec.grid:
                    hp = hparam_sweep(spec.grid, cfg, ds, spec.seeds, hp, workers).best
                summary = run_seeds(cfg, ds, hp, spec.seeds, workers)
            except (TrainingDiverged, MemoryError, ValueError) as exc:
                _write_table(out, rows, provenance)
                raise RunFailed(f"run {variant}_d{depth} failed: {exc}") from exc
            for seed, res in zip(spec.seeds, summary.results):
                rid = _run_id(variant, depth, seed)
                res.to_csv(runs_dir / f"{rid}.csv")
                record = {
                    "variant": variant,
                    "depth": depth,
                    "seed": seed,
                    "dataset": ds.name,
                    "hparams": {"learning_rate": hp.learning_rate, "weight_decay": hp.weight_decay, "beta": cfg.beta if hp.beta is None else hp.beta},
                    **res.summary(),
                }
                (runs_dir / f"{rid}.json").write_text(json.dumps(record, indent=2) + "\n")
            runs = [json.loads((runs_dir / f"{_run_id(variant, depth, s)}.json").read_text()) for s in spec.seeds]
            rows.append(_row_from_runs(ds.name, variant, depth, runs))
            log.info("%s depth %d: test %.4f +- %.4f", variant, depth, summary.test_mean, summary.test_std)
    _write_table(out, rows, provenance)
    return rows


def reaggregate(out: Path) -> list[dict]:
    """Rebuild table rows from the per-run JSON records, in the stored table's order."""
    table = json.loads((out / "table.json").read_text())
    runs = [json.loads(p.read_text()) for p in sorted((out / "runs").glob("*.json"))]
    rows = []
    for row in table["rows"]:
        group = sorted(
            (r for r in runs if r["variant"] == row["variant"] and r["depth"] == row["depth"]),
            key=lambda r: table["provenance"]["seeds"].index(r["seed"]),
        )
        if not group:
            raise RunFailed(f"no stored runs for {row['variant']} depth {row['depth']}")
        rows.append(_row_from_runs(row["dataset"], row["variant"], row["depth"], group))
    return rows


def cmd_run(args) -> int:
    if args.config:
        spec = load_spec(args.config)
    else:
        spec = ExperimentSpec()
    changes = {}
    if args.dataset:
        changes["dataset"] = args.dataset
    if args.depths:
        changes["depths"] = args.depths
    if args.seeds:
        changes["seeds"] = args.seeds
    if args.variant:
        changes["variants"] = args.variant.split(",")
    if changes:
        spec = replace(spec, **changes)
    out = Path(args.out or spec.out)
    rows = execute_spec(spec, out, args.workers)
    for r in rows:
        print(f"{r['variant']:<20} depth={r['depth']:<3} test={100 * r['test_mean']:.2f}±{100 * r['test_std']:.2f}")
    print(f"wrote {out / 'table.csv'}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    if not (out / "table.json").is_file():
        raise RunFailed(f"{out} holds no table.json")
    stored = json.loads((out / "table.json").read_text())["rows"]
    rows = reaggregate(out)
    worst = 0.0
    for a, b in zip(stored, rows):
        for k in ("test_mean", "test_std", "val_mean", "val_std"):
            worst = max(worst, abs(a[k] - b[k]))
    for r in rows:
        print(f"{r['dataset']},{r['variant']},{r['depth']},{r['test_mean']:.6f},{r['test_std']:.6f}")
    print(f"max deviation from stored table: {worst:.3g}")
    if worst > 1e-12:
        raise RunFailed(f"stored table disagrees with per-run records by {worst:.3g}")
    return 0


# --- probe ------------------------------------------------------------------


def cmd_probe(args) -> int:
    ds = _open_dataset(args.dataset)
    overrides = parse_kv(Path(args.config).read_text()) if args.config else {}
    spec = ExperimentSpec.from_mapping(overrides)
    hp = spec.hparams if args.config else DEFAULT_PROBE_HP
    config = spec.model
    depths = args.depths or PROBE_DEPTHS[args.preset]
    if args.preset == "fa" and ds.num_nodes > config.fa_cap:
        raise MemoryError(f"fa probe over {ds.num_nodes} nodes exceeds the fully adjacent cap of {config.fa_cap}")
    res: ProbeResult = run_probe(args.preset, ds, config, hp, depths, args.seeds or [0, 1, 2, 3, 4], args.workers)
    path = res.write_csv(Path(args.out or "probes") / f"{args.preset}.csv")
    print(f"wrote {path}")
    return 0


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *flags):
        if "dataset" in flags:
            sp.add_argument("--dataset", help="dataset directory, or 'synthetic'")
        if "out" in flags:
            sp.add_argument("--out", help="output directory")
        if "seeds" in flags:
            sp.add_argument("--seeds", type=seed_list, help="N for seeds 0..N-1, or a list")
        if "depths" in flags:
            sp.add_argument("--depths", type=int_list, help="e.g. 1..8 or 2,5,10")
        if "variant" in flags:
            sp.add_argument("--variant", help="model variant, comma separated for several")
        if "config" in flags:
            sp.add_argument("--config", help="key = value spec file")
        if "workers" in flags:
            sp.add_argument("--workers", type=int, default=1)

    prep = sub.add_parser("prep", help="write a dataset directory")
    prep.add_argument("source", choices=["synthetic", "convert"])
    prep.add_argument("--out", required=True)
    prep.add_argument("--name")
    prep.add_argument("--seed", type=int, default=0)
    prep.add_argument("--split", type=int_list, default=[140, 500, 1000], help="train,val,test sizes")
    prep.add_argument("--per-class-train", action="store_true", help="first split size is per class")
    prep.add_argument("--n", type=int, default=2700)
    prep.add_argument("--avg-degree", type=float, default=4.0)
    prep.add_argument("--classes", type=int, default=7)
    prep.add_argument("--feat-dim", type=int, default=64)
    prep.add_argument("--homophily", type=float, default=0.9)
    prep.add_argument("--noise", type=float, default=0.5)
    prep.add_argument("--edges")
    prep.add_argument("--features")
    prep.add_argument("--labels")
    prep.add_argument("--splits", help="JSON file with train/val/test index lists")
    prep.add_argument("--content", help="LINQS .content file")
    prep.add_argument("--cites", help="LINQS .cites file")
    prep.set_defaults(func=cmd_prep)

    depth = sub.add_parser("depth", help="sparsity-based depth advice")
    common(depth, "out")
    depth.add_argument("--dataset", required=True)
    depth.set_defaults(func=cmd_depth)

    run = sub.add_parser("run", help="train every (variant, depth) in a spec")
    common(run, "dataset", "out", "seeds", "depths", "variant", "config", "workers")
    run.set_defaults(func=cmd_run)

    probe = sub.add_parser("probe", help="emit plot data for a diagnostic preset")
    probe.add_argument("preset", choices=sorted(PROBES))
    common(probe, "dataset", "out", "seeds", "depths", "config", "workers")
    probe.set_defaults(func=cmd_probe)

    report = sub.add_parser("report", help="re-aggregate a results directory from its per-run records")
    report.add_argument("--out", required=True)
    report.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "prep" and args.source == "convert":
        if not (args.content and args.cites) and not (args.edges and args.features and args.labels):
            parser.error("convert needs --content/--cites or --edges/--features/--labels")
    try:
        return args.func(args)
    except (DatasetError, ConfigError, RunFailed, TrainingDiverged, MemoryError, ValueError, KeyError, OSError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"ERROR[{type(exc).__name__}] {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
