"""Model assembly: GAT stacks, the residual-anchored variant with MLP
pre/post processing, width doubling, fully-adjacent output, decoupled
propagation, and sparsity-based depth selection."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import AdjacencyCSR, Dataset
from .layers import (
    ATTENTION_ACTIVATIONS,
    DEFAULT_FA_CAP,
    RESIDUAL_KINDS,
    AttentionParams,
    ResidualMode,
    adgat_layer_forward,
    decoupled_propagate,
    fa_wrap,
    gat_layer_forward,
    glorot,
    init_attention,
)

VARIANTS = ("gat", "adgat", "gat_width_doubling", "gat_fa", "gat_decoupled")
MAX_HIDDEN_UNITS = 2**20


class DepthFormulaError(ValueError):
    """The sparsity formula is undefined for this graph."""


def adaptive_depth(num_nodes: int, num_edges_undirected: int, max_depth: int = 16) -> tuple[float, int]:
    """Depth at which a receptive field growing by the average degree covers the graph.

    With ``q = 2|E|/|V|``, solves ``(1 - q**L) / (1 - q) = |V|`` for ``L``
    and rounds half up, clamped to ``[1, max_depth]``.
    """
    if num_nodes <= 0:
        raise DepthFormulaError("adaptive depth undefined for a graph with no nodes; set depth explicitly")
    q = 2.0 * num_edges_undirected / num_nodes
    arg = 1.0 - num_nodes + 2.0 * num_edges_undirected
    if q <= 1.0 or arg <= 1.0:
        raise DepthFormulaError(
            f"adaptive depth undefined for q={q:.4g} (needs average degree > 1); set depth explicitly"
        )
    L_real = math.log(arg) / math.log(q)
    L_selected = int(math.floor(L_real + 0.5))
    return L_real, min(max(L_selected, 1), max_depth)


@dataclass
class ModelConfig:
    variant: str = "gat"
    depth: Union[int, str] = 2
    hidden_dim: int = 8
    heads: int = 1
    output_heads: int = 1
    residual: str = "initial_residual"
    beta: float = 1.0
    attention_activation: str = "leaky_relu"
    negative_slope: float = 0.2
    pre_mlp_layers: int = 1
    post_mlp_layers: int = 1
    dropout: float = 0.0
    D_p: int | None = None
    max_depth: int = 16
    fa_cap: int = DEFAULT_FA_CAP

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.depth != "adaptive" and (not isinstance(self.depth, int) or self.depth < 1):
            raise ValueError(f"depth must be a positive integer or 'adaptive', got {self.depth!r}")
        if self.hidden_dim < 1 or self.heads < 1 or self.output_heads < 1:
            raise ValueError("hidden_dim and head counts must be >= 1")
        if self.residual not in RESIDUAL_KINDS:
            raise ValueError(f"unknown residual mode {self.residual!r}")
        if self.attention_activation not in ATTENTION_ACTIVATIONS:
            raise ValueError(f"attention activation must be one of {ATTENTION_ACTIVATIONS}")
        if self.variant == "adgat" and (self.pre_mlp_layers < 1 or self.post_mlp_layers < 1):
            raise ValueError("adgat needs at least one pre-MLP and one post-MLP layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    def resolve_depth(self, dataset: Dataset) -> int:
        if self.depth == "adaptive":
            return adaptive_depth(dataset.num_nodes, dataset.num_edges_raw, self.max_depth)[1]
        return int(self.depth)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# --- layer descriptors ------------------------------------------------------


@dataclass
class DenseLayer:
    W: Tensor
    b: Tensor | None
    sigma: str = "elu"
    is_anchor: bool = False

    def tensors(self) -> list[Tensor]:
        return [self.W] + ([self.b] if self.b is not None else [])


@dataclass
class AttentionLayer:
    params: AttentionParams
    sigma: str
    concat: bool
    residual: ResidualMode | None = None
    fully_adjacent: bool = False

    def tensors(self) -> list[Tensor]:
        return self.params.tensors()


@dataclass
class PropagationLayer:
    params: AttentionParams
    D_p: int
    sigma: str = "elu"

    def tensors(self) -> list[Tensor]:
        return self.params.tensors()


Layer = Union[DenseLayer, AttentionLayer, PropagationLayer]


@dataclass
class Model:
    config: ModelConfig
    depth: int
    layers: list[Layer]
    num_classes: int
    graph: AdjacencyCSR
    hidden_widths: list[int] = field(default_factory=list)
    source_graph: AdjacencyCSR | None = None

    @property
    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer.tensors()]

    @property
    def first_attention_W(self) -> Tensor:
        for layer in self.layers:
            if isinstance(layer, (AttentionLayer, PropagationLayer)) and layer.params.W is not None:
                return layer.params.W
        raise ValueError("model has no attention layer with a transform")

    def param_shapes(self) -> list[tuple[int, int]]:
        return [t.shape for t in self.parameters]

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters)

    def state(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.parameters]

    def load_state(self, state: list[np.ndarray]) -> None:
        for t, v in zip(self.parameters, state):
            t.data[...] = v

    def forward(self, dataset: Dataset, training: bool = False, seed: int = 0) -> Tensor:
        return forward(self, dataset, training, seed)


def _dense(rng, d_in, d_out, sigma, bias=True, is_anchor=False) -> DenseLayer:
    b = ad.parameter(np.zeros((1, d_out)), name="b") if bias else None
    return DenseLayer(glorot(rng, d_in, d_out, "W"), b, sigma, is_anchor)


def build_model(config: ModelConfig, dataset: Dataset, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    depth = config.resolve_depth(dataset)
    d_in, C = dataset.feat_dim, dataset.num_classes
    h, H = config.hidden_dim, config.heads
    att = dict(attention_activation=config.attention_activation, negative_slope=config.negative_slope)
    layers: list[Layer] = []
    widths: list[int] = []

    if config.variant in ("gat", "gat_fa"):
        width = d_in
        for k in range(depth - 1):
            layers.append(AttentionLayer(init_attention(rng, width, h, H, **att), "elu", True))
            width = h * H
            widths.append(width)
        out = init_attention(rng, width, C, config.output_heads, **att)
        layers.append(AttentionLayer(out, "identity", False, fully_adjacent=config.variant == "gat_fa"))

    elif config.variant == "gat_width_doubling":
        widths = [h * 2**k for k in range(depth)]
        if sum(widths) * H > MAX_HIDDEN_UNITS:
            raise MemoryError(f"width doubling to depth {depth} needs {sum(widths) * H} hidden units")
        width = d_in
        for w in widths:
            layers.append(AttentionLayer(init_attention(rng, width, w, H, **att), "elu", True))
            width = w * H
        layers.append(_dense(rng, width, C, "identity"))

    elif config.variant == "adgat":
        width = h * H
        prev = d_in
        for k in range(config.pre_mlp_layers):
            layers.append(_dense(rng, prev, width, "elu", is_anchor=k == config.pre_mlp_layers - 1))
            prev = width
        mode = ResidualMode(config.residual, config.beta)
        for _ in range(depth):
            layers.append(AttentionLayer(init_attention(rng, width, h, H, res_dim=width, **att), "elu", True, mode))
            widths.append(width)
        for _ in range(config.post_mlp_layers - 1):
            layers.append(_dense(rng, width, width, "elu"))
        layers.append(_dense(rng, width, C, "identity"))

    elif config.variant == "gat_decoupled":
        D_p = config.D_p if config.D_p is not None else depth
        layers.append(PropagationLayer(init_attention(rng, d_in, h, H, **att), D_p))
        widths.append(h * H)
        layers.append(_dense(rng, h * H, C, "identity"))

    graph = dataset.graph.with_self_loops()
    model = Model(config, depth, layers, C, graph, widths, dataset.graph)
    if config.variant == "gat_fa" and dataset.num_nodes > config.fa_cap:
        raise MemoryError(f"fully adjacent layer over {dataset.num_nodes} nodes exceeds the cap of {config.fa_cap}")
    return model


def forward(model: Model, dataset: Dataset, training: bool = False, seed: int = 0) -> Tensor:
    """Logits for every node. Dropout is applied to each layer input only when training."""
    cfg = model.config
    rng = np.random.default_rng(seed) if training and cfg.dropout > 0 else None
    graph = model.graph if dataset.graph is model.source_graph else dataset.graph.with_self_loops()
    h = ad.Tensor(dataset.features)
    anchor = None
    for layer in model.layers:
        h = ad.dropout(h, cfg.dropout, rng)
        if isinstance(layer, DenseLayer):
            h = ad.activation(ad.linear(h, layer.W, layer.b), layer.sigma)
            if layer.is_anchor:
                anchor = h
        elif isinstance(layer, PropagationLayer):
            h = decoupled_propagate(h, layer.params, graph, layer.D_p, layer.sigma)
        elif layer.fully_adjacent:
            h = fa_wrap(h, layer.params, dataset.num_nodes, layer.sigma, layer.concat, cap=cfg.fa_cap)
        elif layer.residual is not None:
            h = adgat_layer_forward(h, anchor, layer.params, graph, layer.residual, layer.sigma, layer.concat)
        else:
            h = gat_layer_forward(h, layer.params, graph, layer.sigma, layer.concat)
    return h
