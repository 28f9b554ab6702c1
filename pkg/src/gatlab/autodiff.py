"""Reverse-mode differentiation over dense float64 matrices and edge segments.

Every operation returns a :class:`Tensor`. When any input requires a
gradient, the output records its parents and a backward rule; node ids are
issued from a global counter, so sorting the reachable nodes by id gives a
valid topological order (the tape).
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import EdgeSegments

_ids = itertools.count()
_recording = True

ACTIVATIONS = ("leaky_relu", "elu", "tanh", "sigmoid", "identity", "relu")


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "node_id", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.node_id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __mul__(self, c: float) -> "Tensor":
        return scale(self, c)

    __rmul__ = __mul__


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


def _record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.node_id = next(_ids)
    out.name = None
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
    return out


def check_finite(t: Tensor) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values in {t!r}")
    return t


# --- dense ops --------------------------------------------------------------


def matmul(X: Tensor, W: Tensor) -> Tensor:
    if X.shape[1] != W.shape[0]:
        raise ValueError(f"shape mismatch: {X.shape} @ {W.shape}")
    xd, wd = X.data, W.data
    return _record(xd @ wd, (X, W), lambda g: (g @ wd.T, xd.T @ g))


def add(A: Tensor, B: Tensor) -> Tensor:
    """Elementwise sum; ``B`` may be a 1×d row broadcast over rows of ``A``."""
    if A.shape == B.shape:
        return _record(A.data + B.data, (A, B), lambda g: (g, g))
    if B.shape == (1, A.shape[1]):
        return _record(A.data + B.data, (A, B), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ValueError(f"cannot add shapes {A.shape} and {B.shape}")


def linear(X: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(X, W)
    return out if b is None else add(out, b)


def scale(X: Tensor, c: float) -> Tensor:
    return _record(X.data * c, (X,), lambda g: (g * c,))


def sum_all(X: Tensor) -> Tensor:
    shape = X.shape
    return _record(np.array([[X.data.sum()]]), (X,), lambda g: (np.full(shape, g[0, 0]),))


def sum_squares(X: Tensor) -> Tensor:
    xd = X.data
    return _record(np.array([[np.sum(xd * xd)]]), (X,), lambda g: (2.0 * g[0, 0] * xd,))


def add_scalars(terms: Sequence[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    widths = np.cumsum([p.shape[1] for p in parts])[:-1]
    return _record(np.hstack([p.data for p in parts]), parts, lambda g: tuple(np.hsplit(g, widths)))


def slice_cols(X: Tensor, start: int, stop: int) -> Tensor:
    shape = X.shape
    if start == 0 and stop == shape[1]:
        return X

    def back(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _record(X.data[:, start:stop], (X,), back)


def mean_of(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    k = len(parts)
    data = sum(p.data for p in parts) / k
    return _record(data, parts, lambda g: tuple(g / k for _ in range(k)))


def gather_rows(X: Tensor, index: np.ndarray) -> Tensor:
    n = X.shape[0]

    def back(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, index, g)
        return (out,)

    return _record(X.data[index], (X,), back)


# --- activations ------------------------------------------------------------


def activation_values(x: np.ndarray, kind: str, slope: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Activation output and its elementwise derivative."""
    if kind == "identity":
        return x, np.ones_like(x)
    if kind == "leaky_relu":
        d = np.where(x > 0, 1.0, slope)
        return x * d, d
    if kind == "relu":
        d = (x > 0).astype(np.float64)
        return x * d, d
    if kind == "elu":
        em1 = np.expm1(np.minimum(x, 0.0))
        return np.where(x > 0, x, em1), np.where(x > 0, 1.0, em1 + 1.0)
    if kind == "tanh":
        y = np.tanh(x)
        return y, 1.0 - y * y
    if kind == "sigmoid":
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y * (1.0 - y)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation(X: Tensor, kind: str = "identity", slope: float = 0.2) -> Tensor:
    if kind == "identity":
        return X
    y, d = activation_values(X.data, kind, slope)
    return _record(y, (X,), lambda g: (g * d,))


def dropout(X: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; a no-op when ``rate == 0`` or ``rng`` is None."""
    if rate <= 0.0 or rng is None:
        return X
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    mask = (rng.random(X.shape) >= rate) / (1.0 - rate)
    return _record(X.data * mask, (X,), lambda g: (g * mask,))


# --- segment ops ------------------------------------------------------------


def segment_sum(values: np.ndarray, seg: EdgeSegments) -> np.ndarray:
    """Sum edge rows into their destination node, in edge order."""
    return np.asarray(seg.dst_matrix @ values)


def gather_edges(X: Tensor, seg: EdgeSegments, side: str) -> Tensor:
    """Rows of ``X`` for each edge's ``"src"`` or ``"dst"`` node.

    Same values as ``gather_rows``; the backward pass sums through a fixed
    sparse indicator instead of scattering.
    """
    if side == "dst":
        return _record(X.data[seg.dst], (X,), lambda g: (segment_sum(g, seg),))
    if side != "src":
        raise ValueError("side must be 'src' or 'dst'")
    return _record(X.data[seg.src], (X,), lambda g: (np.asarray(seg.src_matrix @ g),))


def segment_max(values: np.ndarray, seg: EdgeSegments) -> np.ndarray:
    return np.maximum.reduceat(values, seg.row_offsets[:-1], axis=0)


def segment_softmax(scores: Tensor, seg: EdgeSegments) -> Tensor:
    """Softmax over each destination's incoming edges. Columns are independent."""
    if scores.shape[0] != seg.num_edges:
        raise ValueError(f"{scores.shape[0]} scores for {seg.num_edges} edges")
    if seg.has_empty:
        node = int(np.flatnonzero(seg.sizes == 0)[0])
        raise ValueError(f"node {node} has no incoming edges; build the graph with self-loops")
    s = scores.data
    shifted = s - segment_max(s, seg)[seg.dst]
    ex = np.exp(shifted)
    y = ex / segment_sum(ex, seg)[seg.dst]

    def back(g):
        return (y * (g - segment_sum(g * y, seg)[seg.dst]),)

    return _record(y, (scores,), back)


def segment_weighted_sum(alpha: Tensor, M: Tensor, seg: EdgeSegments) -> Tensor:
    """Row ``i`` of the result is the alpha-weighted sum of edge rows of ``M`` into ``i``.

    With ``H`` alpha columns, ``M`` is split into ``H`` equal column blocks and
    block ``h`` is weighted by column ``h``.
    """
    E, H = alpha.shape
    if E != seg.num_edges or M.shape[0] != seg.num_edges or M.shape[1] % H:
        raise ValueError(f"misaligned edge arrays: alpha {alpha.shape}, M {M.shape}, {seg.num_edges} edges")
    k = M.shape[1] // H
    a, m = alpha.data, M.data
    aw = np.repeat(a, k, axis=1) if H > 1 else a
    out = segment_sum(aw * m, seg)

    def back(g):
        g_edge = g[seg.dst]
        ga = (g_edge * m).reshape(E, H, k).sum(axis=2)
        return (ga, aw * g_edge)

    return _record(out, (alpha, M), back)


def neighbor_aggregate(alpha: Tensor, X: Tensor, seg: EdgeSegments) -> Tensor:
    """``segment_weighted_sum(alpha, X[src], seg)`` without materialising ``X[src]``."""
    E, H = alpha.shape
    if E != seg.num_edges or X.shape[0] != seg.num_nodes or X.shape[1] % H:
        raise ValueError(f"misaligned inputs: alpha {alpha.shape}, X {X.shape}, {seg.num_edges} edges")
    N, k = seg.num_nodes, X.shape[1] // H
    xd = X.data
    mats = [sp.csr_matrix((alpha.data[:, h], seg.src, seg.row_offsets), shape=(N, N)) for h in range(H)]
    out = np.hstack([mats[h] @ xd[:, h * k : (h + 1) * k] for h in range(H)])

    def back(g):
        ga = np.empty((E, H))
        gx = np.empty_like(xd)
        for h in range(H):
            gh, xh = g[:, h * k : (h + 1) * k], xd[:, h * k : (h + 1) * k]
            ga[:, h] = np.einsum("ek,ek->e", gh[seg.dst], xh[seg.src])
            gx[:, h * k : (h + 1) * k] = mats[h].T @ gh
        return (ga, gx)

    return _record(out, (alpha, X), back)


def head_dot(X: Tensor, A: Tensor) -> Tensor:
    """Per-head inner products: ``X`` is N×(H·k), ``A`` is k×H, result N×H."""
    k, H = A.shape
    if X.shape[1] != H * k:
        raise ValueError(f"head_dot shape mismatch: {X.shape} vs {A.shape}")
    N = X.shape[0]
    x3 = X.data.reshape(N, H, k)
    ad = A.data

    def back(g):
        gx = (g[:, :, None] * ad.T[None, :, :]).reshape(N, H * k)
        ga = np.einsum("nhk,nh->kh", x3, g)
        return (gx, ga)

    return _record(np.einsum("nhk,kh->nh", x3, ad), (X, A), back)


def slice_rows(X: Tensor, start: int, stop: int) -> Tensor:
    shape = X.shape

    def back(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _record(X.data[start:stop], (X,), back)


def head_mean(X: Tensor, heads: int) -> Tensor:
    """Average ``heads`` equal column blocks of ``X``."""
    if heads == 1:
        return X
    N, width = X.shape
    k = width // heads
    out = X.data.reshape(N, heads, k).mean(axis=1)
    return _record(out, (X,), lambda g: (np.tile(g / heads, (1, heads)),))


def dense_attention(
    left: Tensor, right: Tensor, V: Tensor, kind: str = "leaky_relu", slope: float = 0.2
) -> Tensor:
    """Attention over every ordered node pair, without an edge array.

    Scores are ``act(left[i, h] + right[j, h])``, softmax-normalised over
    ``j``; head ``h`` aggregates column block ``h`` of ``V``.
    """
    N, H = left.shape
    k = V.shape[1] // H
    probs, derivs = [], []
    out = np.empty((N, H * k))
    for h in range(H):
        raw = left.data[:, h, None] + right.data[None, :, h]
        s, d = activation_values(raw, kind, slope)
        s = s - s.max(axis=1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=1, keepdims=True)
        out[:, h * k : (h + 1) * k] = p @ V.data[:, h * k : (h + 1) * k]
        probs.append(p)
        derivs.append(d)

    def back(g):
        gl = np.empty((N, H))
        gr = np.empty((N, H))
        gV = np.empty_like(V.data)
        for h in range(H):
            p, d = probs[h], derivs[h]
            gh = g[:, h * k : (h + 1) * k]
            vh = V.data[:, h * k : (h + 1) * k]
            gV[:, h * k : (h + 1) * k] = p.T @ gh
            gp = gh @ vh.T
            gs = p * (gp - np.sum(gp * p, axis=1, keepdims=True)) * d
            gl[:, h] = gs.sum(axis=1)
            gr[:, h] = gs.sum(axis=0)
        return (gl, gr, gV)

    return _record(out, (left, right, V), back)


# --- losses -----------------------------------------------------------------


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def masked_cross_entropy(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("cross-entropy mask selects no nodes")
    logp = log_softmax_rows(logits.data[idx])
    y = np.asarray(labels)[idx]
    loss = -np.mean(logp[np.arange(idx.size), y])
    shape = logits.shape

    def back(g):
        p = np.exp(logp)
        p[np.arange(idx.size), y] -= 1.0
        full = np.zeros(shape)
        full[idx] = p * (g[0, 0] / idx.size)
        return (full,)

    return _record(np.array([[loss]]), (logits,), back)


# --- backward ---------------------------------------------------------------


def tape_of(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss``, in creation (topological) order."""
    seen: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in seen:
            continue
        seen[t.node_id] = t
        stack.extend(t.parents)
    return [seen[k] for k in sorted(seen)]


def backward(loss: Tensor, keep_tape: bool = False) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` for every leaf tensor that requires one.

    The recorded graph is released afterwards unless ``keep_tape``.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape_of(loss)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1))}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape):
        g = grads.pop(node.node_id, None)
        if node.backward_fn is None:
            if node.requires_grad:
                leaves[node] = g if g is not None else np.zeros(node.shape)
            continue
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
        if not keep_tape:
            node.parents = ()
            node.backward_fn = None
    return leaves


def grad_check(
    forward: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_entries: int = 200,
    seed: int = 0,
) -> float:
    """Worst relative error between backward() and central differences.

    ``forward`` must rebuild the scalar loss from the current parameter
    values. Entries are subsampled to at most ``max_entries`` in total.
    """
    a, b = forward().data, forward().data
    if not np.array_equal(a, b):
        raise ValueError("grad_check needs a deterministic forward; disable dropout")

    grads = backward(forward())
    rng = np.random.default_rng(seed)
    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    picks = np.arange(total) if total <= max_entries else np.sort(rng.choice(total, max_entries, replace=False))
    bounds = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(bounds, flat, side="right") - 1)
        p = params[k]
        pos = np.unravel_index(flat - bounds[k], p.shape)
        orig = p.data[pos]
        p.data[pos] = orig + eps
        up = forward().item()
        p.data[pos] = orig - eps
        down = forward().item()
        p.data[pos] = orig
        num = (up - down) / (2 * eps)
        ana = grads.get(p, np.zeros(p.shape))[pos]
        denom = abs(num) + abs(ana)
        if denom >= 1e-8:
            worst = max(worst, abs(num - ana) / denom)
    return worst
