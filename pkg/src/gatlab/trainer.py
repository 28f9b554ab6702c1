"""Seeded full-batch training with validation-based epoch selection,
multi-seed aggregation, and exhaustive hyperparameter search."""
from __future__ import annotations

import csv
import hashlib
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .graph import Dataset
from .metrics import EpochTrace, accuracy, corr, grad_first_layer_mean_abs, smv
from .model import Model, ModelConfig, build_model, forward

log = logging.getLogger(__name__)

LR_GRID = sorted(m * 10.0**e for m in (1, 5) for e in range(-6, -1))
WEIGHT_DECAY_GRID = [0.0] + sorted(m * 10.0**e for m in (1, 2, 5) for e in range(-6, -2))
BETA_GRID = [0.2, 0.5, 1.0, 2.0, 5.0]


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class HParams:
    learning_rate: float = 0.005
    weight_decay: float = 5e-4
    beta: float | None = None
    epochs: int = 500
    patience: int = 100
    dropout: float | None = None
    seed: int = 0
    track_smoothness: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience > self.epochs:
            raise ValueError("patience must not exceed epochs")

    def apply_to(self, config: ModelConfig) -> ModelConfig:
        changes = {}
        if self.beta is not None:
            changes["beta"] = self.beta
        if self.dropout is not None:
            changes["dropout"] = self.dropout
        return replace(config, **changes) if changes else config


@dataclass
class TrainResult:
    traces: list[EpochTrace]
    best_epoch: int
    test_at_best: float
    val_at_best: float
    train_at_best: float
    smv_at_best: float
    corr_at_best: float
    params_digest: str

    def to_csv(self, path: str | Path) -> None:
        rows = [t.as_row() for t in self.traces]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)

    def summary(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "test_at_best": self.test_at_best,
            "val_at_best": self.val_at_best,
            "train_at_best": self.train_at_best,
            "smv_at_best": self.smv_at_best,
            "corr_at_best": self.corr_at_best,
            "epochs_run": len(self.traces),
            "params_digest": self.params_digest,
        }


def select_best_epoch(val_accs: Sequence[float]) -> int:
    """Index of the highest validation accuracy, earliest on ties."""
    return int(np.argmax(np.asarray(val_accs)))


class Adam:
    def __init__(self, params, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Mapping) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = grads.get(p)
            if g is None:
                continue
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def training_loss(model: Model, dataset: Dataset, weight_decay: float, training: bool, seed: int):
    logits = forward(model, dataset, training=training, seed=seed)
    loss = ad.masked_cross_entropy(logits, dataset.labels, dataset.train_mask)
    if weight_decay:
        penalty = ad.add_scalars([ad.sum_squares(p) for p in model.parameters])
        loss = ad.add(loss, ad.scale(penalty, 0.5 * weight_decay))
    return logits, loss


def params_digest(model: Model) -> str:
    h = hashlib.sha256()
    for p in model.parameters:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()[:16]


def train(model: Model, dataset: Dataset, hp: HParams) -> TrainResult:
    """Adam on masked cross-entropy plus an L2 penalty.

    Row ``e`` of the trace describes the parameters entering epoch ``e``;
    the loss and gradient are those used for that epoch's update.
    """
    model.config = hp.apply_to(model.config)
    uses_dropout = model.config.dropout > 0
    opt = Adam(model.parameters, hp.learning_rate)
    traces: list[EpochTrace] = []
    best_val, best_logits, since_best = -1.0, None, 0

    for epoch in range(hp.epochs):
        logits, loss = training_loss(model, dataset, hp.weight_decay, True, hp.seed * 1_000_003 + epoch)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(f"loss became {loss.item()} at epoch {epoch}")
        grads = ad.backward(loss)
        g1 = grad_first_layer_mean_abs(grads, model)

        if uses_dropout:
            with ad.no_grad():
                eval_logits = forward(model, dataset, training=False).data
        else:
            eval_logits = logits.data
        if not np.all(np.isfinite(eval_logits)):
            raise TrainingDiverged(f"non-finite logits at epoch {epoch}")

        trace = EpochTrace(
            epoch=epoch,
            loss=loss.item(),
            acc_train=accuracy(eval_logits, dataset.labels, dataset.train_mask),
            acc_val=accuracy(eval_logits, dataset.labels, dataset.val_mask),
            acc_test=accuracy(eval_logits, dataset.labels, dataset.test_mask),
            grad_l1_mean=g1,
        )
        if hp.track_smoothness:
            trace.smv, trace.corr = smv(eval_logits), corr(eval_logits)
        traces.append(trace)

        if trace.acc_val > best_val:
            best_val, best_logits, since_best = trace.acc_val, eval_logits.copy(), 0
        else:
            since_best += 1
        if since_best >= hp.patience:
            break
        opt.step(grads)

    best = select_best_epoch([t.acc_val for t in traces])
    t = traces[best]
    return TrainResult(
        traces=traces,
        best_epoch=best,
        test_at_best=t.acc_test,
        val_at_best=t.acc_val,
        train_at_best=t.acc_train,
        smv_at_best=smv(best_logits),
        corr_at_best=corr(best_logits) if best_logits.shape[1] >= 2 else 0.0,
        params_digest=params_digest(model),
    )


# --- multi-seed runs --------------------------------------------------------


@dataclass
class SeedSummary:
    seeds: list[int]
    results: list[TrainResult]
    test_mean: float
    test_std: float
    val_mean: float
    val_std: float

    def metric(self, name: str) -> tuple[float, float]:
        vals = np.array([getattr(r, name) for r in self.results])
        return float(vals.mean()), float(vals.std())


def run_one(config: ModelConfig, dataset: Dataset, hp: HParams) -> TrainResult:
    cfg = hp.apply_to(config)
    model = build_model(cfg, dataset, seed=hp.seed)
    return train(model, dataset, hp)


def _run_one_args(args):
    return run_one(*args)


def summarize(seeds: Sequence[int], results: list[TrainResult]) -> SeedSummary:
    tests = np.array([r.test_at_best for r in results])
    vals = np.array([r.val_at_best for r in results])
    return SeedSummary(list(seeds), results, float(tests.mean()), float(tests.std()), float(vals.mean()), float(vals.std()))


def run_seeds(
    config: ModelConfig,
    dataset: Dataset,
    hp_base: HParams,
    seeds: Sequence[int],
    workers: int = 1,
) -> SeedSummary:
    """Train once per seed; aggregates are in seed order regardless of ``workers``."""
    if not seeds:
        raise ValueError("run_seeds needs at least one seed")
    jobs = [(config, dataset, replace(hp_base, seed=s)) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_args, jobs))
    else:
        results = []
        for s, job in zip(seeds, jobs):
            try:
                results.append(run_one(*job))
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"seed {s}: {exc}") from exc
    return summarize(seeds, results)


@dataclass
class SweepResult:
    best: HParams
    table: list[dict] = field(default_factory=list)


def hparam_sweep(
    grid: Mapping[str, Sequence],
    config: ModelConfig,
    dataset: Dataset,
    seeds: Sequence[int],
    hp_base: HParams = HParams(),
    workers: int = 1,
) -> SweepResult:
    """Exhaustive search; picks the highest mean validation accuracy at the best epoch.

    Ties go to the smaller learning rate, then the smaller weight decay.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("hyperparameter grid must be nonempty")
    known = {f.name for f in fields(HParams)}
    if set(grid) - known:
        raise ValueError(f"unknown grid keys {sorted(set(grid) - known)}")

    keys = list(grid)
    table = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        hp = replace(hp_base, **dict(zip(keys, combo)))
        row = {k: v for k, v in zip(keys, combo)}
        try:
            s = run_seeds(config, dataset, hp, seeds, workers)
            row.update(val_mean=s.val_mean, val_std=s.val_std, test_mean=s.test_mean, test_std=s.test_std, diverged=False)
        except TrainingDiverged as exc:
            log.warning("grid point %s diverged: %s", row, exc)
            row.update(val_mean=float("nan"), val_std=float("nan"), test_mean=float("nan"), test_std=float("nan"), diverged=True)
        row["_hp"] = hp
        table.append(row)

    alive = [r for r in table if not r["diverged"]]
    if not alive:
        raise TrainingDiverged("every grid point diverged")
    best = min(alive, key=lambda r: (-r["val_mean"], r["_hp"].learning_rate, r["_hp"].weight_decay))
    for r in table:
        r.pop("_hp")
    return SweepResult(best=replace(hp_base, **{k: best[k] for k in keys}), table=table)
