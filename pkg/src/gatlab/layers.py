"""Graph-attention layers: plain GAT, GAT with residual anchors, the
fully-adjacent variant, and attention propagation without transforms."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import AdjacencyCSR, make_fully_adjacent

RESIDUAL_KINDS = ("none", "input_residual", "initial_residual")
ATTENTION_ACTIVATIONS = ("leaky_relu", "sigmoid", "tanh")


@dataclass
class AttentionParams:
    """``W`` is d×(heads·d'), ``a`` is 2d'×heads (one column per head).

    ``W = None`` means the identity transform. ``W_res`` aligns the residual
    anchor to the output width; None means identity.
    """

    W: Tensor | None
    a: Tensor
    W_res: Tensor | None = None
    attention_activation: str = "leaky_relu"
    heads: int = 1
    negative_slope: float = 0.2

    def __post_init__(self) -> None:
        if self.a.shape[1] != self.heads or self.a.shape[0] % 2:
            raise ValueError(f"attention vector shape {self.a.shape} does not fit {self.heads} heads")
        if self.W is not None and self.W.shape[1] != self.heads * self.head_dim:
            raise ValueError(f"W has {self.W.shape[1]} columns, expected {self.heads}×{self.head_dim}")

    @property
    def head_dim(self) -> int:
        return self.a.shape[0] // 2

    @property
    def out_dim(self) -> int:
        return self.heads * self.head_dim

    def tensors(self) -> list[Tensor]:
        return [t for t in (self.W, self.a, self.W_res) if t is not None]


@dataclass(frozen=True)
class ResidualMode:
    kind: str = "initial_residual"
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in RESIDUAL_KINDS:
            raise ValueError(f"unknown residual mode {self.kind!r}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.beta != 0.0


def transform(H: Tensor, params: AttentionParams) -> Tensor:
    if params.W is None:
        if H.shape[1] != params.out_dim:
            raise ValueError(f"identity transform needs width {params.out_dim}, got {H.shape[1]}")
        return H
    if H.shape[1] != params.W.shape[0]:
        raise ValueError(f"input width {H.shape[1]} does not match W {params.W.shape}")
    return ad.matmul(H, params.W)


def _half_scores(WH_dst: Tensor, WH_src: Tensor, params: AttentionParams) -> tuple[Tensor, Tensor]:
    k = params.head_dim
    left = ad.head_dot(WH_dst, ad.slice_rows(params.a, 0, k))
    right = ad.head_dot(WH_src, ad.slice_rows(params.a, k, 2 * k))
    return left, right


def _edge_scores(WH_dst: Tensor, WH_src: Tensor, params: AttentionParams, graph: AdjacencyCSR) -> Tensor:
    seg = graph.segments
    left, right = _half_scores(WH_dst, WH_src, params)
    raw = ad.add(ad.gather_edges(left, seg, "dst"), ad.gather_edges(right, seg, "src"))
    return ad.activation(raw, params.attention_activation, params.negative_slope)


def attention_scores(H_src: Tensor, H_dst: Tensor, params: AttentionParams, graph: AdjacencyCSR) -> Tensor:
    """Unnormalised score of every edge, one column per head.

    The destination ``i`` of an edge supplies the first half of ``a`` and the
    neighbour ``j`` the second half.
    """
    if not graph.has_self_loops:
        raise ValueError("attention layers need a graph with self-loops")
    return _edge_scores(transform(H_dst, params), transform(H_src, params), params, graph)


def _aggregate(H: Tensor, params: AttentionParams, graph: AdjacencyCSR) -> Tensor:
    if not graph.has_self_loops:
        raise ValueError("attention layers need a graph with self-loops")
    seg = graph.segments
    WH = transform(H, params)
    alpha = ad.segment_softmax(_edge_scores(WH, WH, params, graph), seg)
    return ad.neighbor_aggregate(alpha, WH, seg)


def attention_weights(H: Tensor, params: AttentionParams, graph: AdjacencyCSR) -> Tensor:
    WH = transform(H, params)
    return ad.segment_softmax(_edge_scores(WH, WH, params, graph), graph.segments)


def gat_layer_forward(
    H: Tensor,
    params: AttentionParams,
    graph: AdjacencyCSR,
    sigma: str = "elu",
    concat: bool = True,
) -> Tensor:
    """One attention layer. Heads are concatenated, or averaged when ``concat`` is False."""
    out = _aggregate(H, params, graph)
    if not concat:
        out = ad.head_mean(out, params.heads)
    return ad.activation(out, sigma)


def _residual_term(anchor: Tensor, params: AttentionParams, width: int) -> Tensor:
    if params.W_res is not None:
        if anchor.shape[1] != params.W_res.shape[0] or params.W_res.shape[1] != width:
            raise ValueError(f"anchor width {anchor.shape[1]} incompatible with W_res {params.W_res.shape}")
        return ad.matmul(anchor, params.W_res)
    if anchor.shape[1] != width:
        raise ValueError(f"anchor width {anchor.shape[1]} differs from layer width {width}; supply W_res")
    return anchor


def adgat_layer_forward(
    H: Tensor,
    H_anchor: Tensor | None,
    params: AttentionParams,
    graph: AdjacencyCSR,
    mode: ResidualMode,
    sigma: str = "elu",
    concat: bool = True,
) -> Tensor:
    """Attention aggregation plus ``beta`` times the aligned anchor, then ``sigma``.

    For ``input_residual`` the anchor is ``H`` itself.
    """
    out = _aggregate(H, params, graph)
    if not concat:
        out = ad.head_mean(out, params.heads)
    if mode.active:
        anchor = H if mode.kind == "input_residual" else H_anchor
        if anchor is None:
            raise ValueError("initial_residual needs an anchor representation")
        out = ad.add(out, ad.scale(_residual_term(anchor, params, out.shape[1]), mode.beta))
    return ad.activation(out, sigma)


def decoupled_propagate(
    H: Tensor,
    params: AttentionParams,
    graph: AdjacencyCSR,
    D_p: int,
    sigma: str = "elu",
) -> Tensor:
    """One transform ``sigma(H W)`` followed by ``D_p`` attention propagation steps.

    Propagation steps reuse ``a`` on the current representation with an
    identity transform and no nonlinearity.
    """
    if D_p < 1:
        raise ValueError("D_p must be >= 1")
    Z = ad.activation(transform(H, params), sigma)
    prop = AttentionParams(None, params.a, None, params.attention_activation, params.heads, params.negative_slope)
    for _ in range(D_p):
        Z = _aggregate(Z, prop, graph)
    return Z


DEFAULT_FA_CAP = 5000


@lru_cache(maxsize=8)
def _complete_graph(n: int) -> AdjacencyCSR:
    return make_fully_adjacent(n)


def fa_wrap(
    H: Tensor,
    params: AttentionParams,
    num_nodes: int,
    sigma: str = "identity",
    concat: bool = False,
    cap: int = DEFAULT_FA_CAP,
    dense: bool = True,
) -> Tensor:
    """Attention layer over the complete graph (self-loops included).

    The dense path never builds the N² edge array; ``dense=False`` runs the
    ordinary edge-list layer on an explicit complete graph.
    """
    if num_nodes > cap:
        raise MemoryError(f"fully adjacent layer over {num_nodes} nodes exceeds the cap of {cap}")
    if H.shape[0] != num_nodes:
        raise ValueError("row count differs from num_nodes")
    if not dense:
        return gat_layer_forward(H, params, _complete_graph(num_nodes), sigma, concat)
    WH = transform(H, params)
    left, right = _half_scores(WH, WH, params)
    out = ad.dense_attention(left, right, WH, params.attention_activation, params.negative_slope)
    if not concat:
        out = ad.head_mean(out, params.heads)
    return ad.activation(out, sigma)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return ad.parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name=name)


def init_attention(
    rng: np.random.Generator,
    in_dim: int | None,
    head_dim: int,
    heads: int = 1,
    attention_activation: str = "leaky_relu",
    negative_slope: float = 0.2,
    res_dim: int | None = None,
) -> AttentionParams:
    """Seeded Glorot-uniform parameters. ``in_dim=None`` gives an identity transform."""
    W = None if in_dim is None else glorot(rng, in_dim, heads * head_dim, "W")
    a = glorot(rng, 2 * head_dim, heads, "a")
    W_res = None
    if res_dim is not None and res_dim != heads * head_dim:
        W_res = glorot(rng, res_dim, heads * head_dim, "W_res")
    return AttentionParams(W, a, W_res, attention_activation, heads, negative_slope)
