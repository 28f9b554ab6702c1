"""Experiment presets: the synthetic stand-in graph, depth sweeps, and the
diagnostic probes, each producing plot-ready rows."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .graph import Dataset, generate_synthetic
from .model import ModelConfig
from .trainer import HParams, SeedSummary, run_seeds

# Cora-sized default for probes and directional checks.
SYNTHETIC_DEFAULT = dict(
    n=2700,
    avg_degree=4.0,
    num_classes=7,
    feat_dim=64,
    homophily=0.9,
    split_sizes=(140, 500, 1000),
    noise=0.5,
)


def synthetic_default(seed: int = 0, **overrides) -> Dataset:
    params = {**SYNTHETIC_DEFAULT, **overrides}
    return generate_synthetic(seed=seed, name="synthetic-cora", **params)


def config_hash(*objs) -> str:
    def enc(o):
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        return o

    blob = json.dumps([enc(o) for o in objs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class ProbeResult:
    name: str
    columns: list[str]
    rows: list[dict]
    provenance: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            prov = " ".join(f"{k}={json.dumps(v, separators=(',', ':'))}" for k, v in self.provenance.items())
            fh.write(f"# {self.name} {prov}\n")
            writer = csv.DictWriter(fh, fieldnames=self.columns)
            writer.writeheader()
            for r in self.rows:
                writer.writerow({k: r[k] for k in self.columns})
        return path


def read_probe_csv(path: str | Path) -> tuple[str, list[dict]]:
    with open(path) as fh:
        comment = fh.readline().rstrip("\n")
        rows = list(csv.DictReader(fh))
    return comment, rows


def _sweep(
    dataset: Dataset,
    base: ModelConfig,
    hp: HParams,
    depths: Sequence[int],
    seeds: Sequence[int],
    workers: int = 1,
    **changes,
) -> dict[int, SeedSummary]:
    cfg = replace(base, **changes)
    return {d: run_seeds(replace(cfg, depth=d), dataset, hp, seeds, workers) for d in depths}


# --- probes -----------------------------------------------------------------

PROBE_DEPTHS = {
    "overfitting": [2, 5, 10, 15, 20, 25, 30],
    "oversmoothing": [2, 5, 10, 15, 20, 25, 30],
    "overcorrelation": [2, 5, 10, 15, 20, 25, 30],
    "gradient_vanishing": [2, 7],
    "oversquashing": [1, 2, 3, 4, 5, 6, 7, 8],
    "activation_sweep": [1, 2, 3, 4, 5, 6, 7, 8],
    "fa": [1, 2, 3, 4, 5, 6, 7, 8],
    "decoupled": [1, 2, 3, 4, 5, 6, 7, 8],
    "residual_comparison": [1, 2, 3, 4, 5, 6, 7, 8],
}

DEFAULT_PROBE_HP = HParams(learning_rate=0.01, weight_decay=5e-4, epochs=150, patience=50)


def probe_overfitting(dataset, config, hp, depths, seeds, workers=1) -> ProbeResult:
    res = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat")
    rows = []
    for d, s in res.items():
        tr = s.metric("train_at_best")
        rows.append(dict(depth=d, acc_train=tr[0], acc_test=s.test_mean, gap=tr[0] - s.test_mean))
    return ProbeResult("overfitting", ["depth", "acc_train", "acc_test", "gap"], rows)


def probe_oversmoothing(dataset, config, hp, depths, seeds, workers=1) -> ProbeResult:
    res = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat")
    rows = [dict(depth=d, acc=s.test_mean, smv=s.metric("smv_at_best")[0]) for d, s in res.items()]
    return ProbeResult("oversmoothing", ["depth", "acc", "smv"], rows)


def probe_overcorrelation(dataset, config, hp, depths, seeds, workers=1) -> ProbeResult:
    res = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat")
    rows = [dict(depth=d, acc=s.test_mean, corr=s.metric("corr_at_best")[0]) for d, s in res.items()]
    return ProbeResult("overcorrelation", ["depth", "acc", "corr"], rows)


def probe_gradient_vanishing(dataset, config, hp, depths, seeds, workers=1) -> ProbeResult:
    """Per-epoch first-layer gradient magnitude, averaged over seeds, no early stopping."""
    hp = replace(hp, patience=hp.epochs)
    rows = []
    for d in depths:
        s = run_seeds(replace(config, variant="gat", depth=d), dataset, hp, seeds, workers)
        n = min(len(r.traces) for r in s.results)
        grads = np.array([[t.grad_l1_mean for t in r.traces[:n]] for r in s.results]).mean(axis=0)
        accs = np.array([[t.acc_train for t in r.traces[:n]] for r in s.results]).mean(axis=0)
        rows += [dict(depth=d, epoch=e, grad_l1_mean=float(grads[e]), acc_train=float(accs[e])) for e in range(n)]
    return ProbeResult("gradient_vanishing", ["depth", "epoch", "grad_l1_mean", "acc_train"], rows)


def probe_oversquashing(dataset, config, hp, depths, seeds, workers=1) -> ProbeResult:
    const = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat")
    wide = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat_width_doubling")
    rows = [dict(depth=d, acc_constant=const[d].test_mean, acc_doubling=wide[d].test_mean) for d in depths]
    return ProbeResult("oversquashing", ["depth", "acc_constant", "acc_doubling"], rows)


def probe_activation_sweep(dataset, config, hp, depths, seeds, workers=1) -> ProbeResult:
    rows = []
    for act in ("leaky_relu", "sigmoid", "tanh"):
        res = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat", attention_activation=act)
        rows += [dict(depth=d, activation=act, acc=s.test_mean) for d, s in res.items()]
    return ProbeResult("activation_sweep", ["depth", "activation", "acc"], rows)


def probe_fa(dataset, config, hp, depths, seeds, workers=1) -> ProbeResult:
    if dataset.num_nodes > config.fa_cap:
        raise MemoryError(
            f"fa probe needs a {dataset.num_nodes}-node complete graph, above the cap of {config.fa_cap}"
        )
    plain = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat")
    fa = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat_fa")
    rows = [dict(depth=d, acc_plain=plain[d].test_mean, acc_fa=fa[d].test_mean) for d in depths]
    return ProbeResult("fa", ["depth", "acc_plain", "acc_fa"], rows)


def probe_decoupled(dataset, config, hp, depths, seeds, workers=1) -> ProbeResult:
    ent = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat")
    dec = _sweep(dataset, config, hp, depths, seeds, workers, variant="gat_decoupled", D_p=None)
    rows = [dict(depth=d, acc_entangled=ent[d].test_mean, acc_decoupled=dec[d].test_mean) for d in depths]
    return ProbeResult("decoupled", ["depth", "acc_entangled", "acc_decoupled"], rows)


def probe_residual_comparison(dataset, config, hp, depths, seeds, workers=1) -> ProbeResult:
    out = {}
    for kind in ("none", "input_residual", "initial_residual"):
        out[kind] = _sweep(dataset, config, hp, depths, seeds, workers, variant="adgat", residual=kind)
    rows = [
        dict(
            depth=d,
            acc_none=out["none"][d].test_mean,
            acc_input=out["input_residual"][d].test_mean,
            acc_initial=out["initial_residual"][d].test_mean,
        )
        for d in depths
    ]
    return ProbeResult("residual_comparison", ["depth", "acc_none", "acc_input", "acc_initial"], rows)


PROBES: dict[str, Callable[..., ProbeResult]] = {
    "overfitting": probe_overfitting,
    "oversmoothing": probe_oversmoothing,
    "overcorrelation": probe_overcorrelation,
    "gradient_vanishing": probe_gradient_vanishing,
    "oversquashing": probe_oversquashing,
    "activation_sweep": probe_activation_sweep,
    "fa": probe_fa,
    "decoupled": probe_decoupled,
    "residual_comparison": probe_residual_comparison,
}


def run_probe(
    name: str,
    dataset: Dataset,
    config: ModelConfig | None = None,
    hp: HParams = DEFAULT_PROBE_HP,
    depths: Sequence[int] | None = None,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    workers: int = 1,
) -> ProbeResult:
    if name not in PROBES:
        raise KeyError(f"unknown probe {name!r}; expected one of {sorted(PROBES)}")
    config = config or ModelConfig()
    depths = list(depths or PROBE_DEPTHS[name])
    result = PROBES[name](dataset, config, hp, depths, list(seeds), workers)
    result.provenance = {
        "config_hash": config_hash(config, hp, depths),
        "seeds": list(seeds),
        "dataset": dataset.name,
    }
    return result


# --- directional trends -----------------------------------------------------


@dataclass(frozen=True)
class DirectionalPreset:
    """Sizes for the three sign checks on the synthetic graph.

    The constant-width GAT sweep is shared by the ADGAT comparison and the
    width-doubling comparison, and the initial-residual ADGAT runs at the
    deepest depth double as one side of the residual comparison.
    """

    depths: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    squash_depths: tuple[int, ...] = (5, 6, 7, 8)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    hidden_dim: int = 32
    squash_base_width: int = 4
    beta: float = 0.5
    dropout: float = 0.5
    hp: HParams = HParams(learning_rate=0.01, weight_decay=5e-4, epochs=100, patience=30)


@dataclass
class DirectionalResult:
    gat: dict[int, float]
    adgat: dict[int, float]
    constant: dict[int, float]
    doubling: dict[int, float]
    residual_none: float
    residual_initial: float

    @property
    def gat_mean(self) -> float:
        return float(np.mean(list(self.gat.values())))

    @property
    def adgat_mean(self) -> float:
        return float(np.mean(list(self.adgat.values())))

    def checks(self) -> dict[str, bool]:
        return {
            "adgat_beats_gat": self.adgat_mean > self.gat_mean,
            "doubling_not_worse": all(self.doubling[d] >= self.constant[d] for d in self.doubling),
            "initial_residual_not_worse": self.residual_initial >= self.residual_none,
        }

    def rows(self) -> list[dict]:
        return [
            dict(
                depth=d,
                gat=self.gat[d],
                adgat=self.adgat[d],
                constant=self.constant.get(d, float("nan")),
                doubling=self.doubling.get(d, float("nan")),
            )
            for d in self.gat
        ]


def directional_trends(dataset: Dataset, preset: DirectionalPreset = DirectionalPreset(), workers: int = 1) -> DirectionalResult:
    hp = replace(preset.hp, dropout=preset.dropout)
    seeds = list(preset.seeds)
    base = ModelConfig(hidden_dim=preset.hidden_dim, beta=preset.beta, dropout=preset.dropout)
    mean = lambda res: {d: s.test_mean for d, s in res.items()}

    gat = _sweep(dataset, base, hp, preset.depths, seeds, workers, variant="gat")
    adgat = _sweep(dataset, base, hp, preset.depths, seeds, workers, variant="adgat", residual="initial_residual")
    if preset.squash_base_width == preset.hidden_dim:
        constant = {d: gat[d] for d in preset.squash_depths}
    else:
        constant = _sweep(
            dataset, base, hp, preset.squash_depths, seeds, workers, variant="gat", hidden_dim=preset.squash_base_width
        )
    doubling = _sweep(
        dataset,
        base,
        hp,
        preset.squash_depths,
        seeds,
        workers,
        variant="gat_width_doubling",
        hidden_dim=preset.squash_base_width,
    )
    deepest = max(preset.depths)
    none = run_seeds(replace(base, variant="adgat", depth=deepest, residual="none"), dataset, hp, seeds, workers)
    return DirectionalResult(
        gat=mean(gat),
        adgat=mean(adgat),
        constant=mean(constant),
        doubling=mean(doubling),
        residual_none=none.test_mean,
        residual_initial=adgat[deepest].test_mean,
    )
