"""Diagnostics for deep attention stacks: smoothness, feature correlation,
accuracy, overfitting gap, and first-layer gradient magnitude."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

SMV_EXACT_MAX_NODES = 4000
SMV_SAMPLE_PAIRS = 20000


@dataclass
class EpochTrace:
    epoch: int
    loss: float
    acc_train: float
    acc_val: float
    acc_test: float
    grad_l1_mean: float
    smv: float | None = None
    corr: float | None = None

    def as_row(self) -> dict:
        return asdict(self)


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    # zero rows stay zero
    return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)


def smv(
    X: np.ndarray,
    exact_max_nodes: int = SMV_EXACT_MAX_NODES,
    num_pairs: int = SMV_SAMPLE_PAIRS,
    seed: int = 0,
) -> float:
    """Mean half-distance between row-normalised representations over ordered pairs.

    Exact for ``N <= exact_max_nodes``; above that, estimated from
    ``num_pairs`` seeded random ordered pairs with ``i != j``.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    if N < 2:
        raise ValueError("smv needs at least two rows")
    U = _unit_rows(X)
    if N > exact_max_nodes:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, N, size=num_pairs)
        j = (i + rng.integers(1, N, size=num_pairs)) % N
        return float(0.5 * np.mean(np.linalg.norm(U[i] - U[j], axis=1)))
    total = 0.0
    block = max(1, 2_000_000 // max(N * U.shape[1], 1))
    for start in range(0, N, block):
        diff = U[start : start + block, None, :] - U[None, :, :]
        total += np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).sum()
    return float(0.5 * total / (N * (N - 1)))


def corr(X: np.ndarray) -> float:
    """Mean absolute Pearson correlation over ordered pairs of distinct columns.

    Constant columns contribute zero.
    """
    X = np.asarray(X, dtype=np.float64)
    N, d = X.shape
    if d < 2:
        raise ValueError("corr needs at least two columns")
    if N < 2:
        raise ValueError("corr needs at least two rows")
    Z = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(Z * Z, axis=0))
    Z = np.divide(Z, norms, out=np.zeros_like(Z), where=norms > 0)
    R = np.abs(Z.T @ Z)
    np.fill_diagonal(R, 0.0)
    return float(R.sum() / (d * (d - 1)))


def predictions(logits: np.ndarray) -> np.ndarray:
    # argmax picks the lowest index on ties
    return np.argmax(logits, axis=1)


def accuracy(logits, labels: np.ndarray, mask: np.ndarray) -> float:
    values = logits if isinstance(logits, np.ndarray) else logits.data
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("accuracy mask selects no nodes")
    return float(np.mean(predictions(values[idx]) == np.asarray(labels)[idx]))


def grad_first_layer_mean_abs(grads: Mapping, model) -> float:
    W = model.first_attention_W
    if W not in grads:
        raise KeyError("no gradient recorded for the first attention layer's W")
    return float(np.mean(np.abs(grads[W])))


def overfit_gap(trace: EpochTrace) -> float:
    return trace.acc_train - trace.acc_test
