"""Graph topology, node-classification datasets, and their on-disk format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Invalid graph construction input."""


class DatasetError(ValueError):
    """Base class for dataset loading and validation failures."""


class MissingFileError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class SplitOverlapError(DatasetError):
    pass


class InfeasibleParametersError(ValueError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EdgeSegments:
    """Edge array grouped by destination node.

    Edge ``e`` carries a message from ``src[e]`` into ``dst[e]``; the edges
    of node ``i`` occupy ``row_offsets[i]:row_offsets[i + 1]``.
    """

    num_nodes: int
    row_offsets: np.ndarray
    src: np.ndarray
    dst: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    @cached_property
    def has_empty(self) -> bool:
        return bool(np.any(self.sizes == 0))

    @cached_property
    def src_order(self) -> np.ndarray:
        """Stable permutation grouping edges by source node."""
        return np.argsort(self.src, kind="stable")

    @cached_property
    def src_offsets(self) -> np.ndarray:
        offsets = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.src, minlength=self.num_nodes), out=offsets[1:])
        return offsets

    @cached_property
    def dst_matrix(self) -> sp.csr_matrix:
        """N×E indicator; row ``i`` selects the edges into ``i`` in edge order."""
        ones = np.ones(self.num_edges)
        return sp.csr_matrix((ones, np.arange(self.num_edges), self.row_offsets), shape=(self.num_nodes, self.num_edges))

    @cached_property
    def src_matrix(self) -> sp.csr_matrix:
        """N×E indicator; row ``j`` selects the edges leaving ``j``."""
        ones = np.ones(self.num_edges)
        return sp.csr_matrix((ones, self.src_order, self.src_offsets), shape=(self.num_nodes, self.num_edges))


@dataclass(frozen=True, eq=False)
class AdjacencyCSR:
    """Symmetric, deduplicated adjacency in compressed-row form.

    Row ``i`` lists the neighbours of ``i`` in ascending order.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    has_self_loops: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "row_offsets", _frozen(np.asarray(self.row_offsets, dtype=np.int64)))
        object.__setattr__(self, "col_indices", _frozen(np.asarray(self.col_indices, dtype=np.int64)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AdjacencyCSR):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.has_self_loops == other.has_self_loops
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    def neighbors(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i] : self.row_offsets[i + 1]]

    def degrees(self) -> np.ndarray:
        """Degree of each node, self-loops excluded."""
        deg = np.diff(self.row_offsets)
        if self.has_self_loops:
            deg = deg - 1
        return deg

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (|E|, 2) array with u < v, self-loops dropped."""
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.row_offsets))
        keep = rows < self.col_indices
        return np.stack([rows[keep], self.col_indices[keep]], axis=1)

    @property
    def num_edges(self) -> int:
        return int(self.edge_list().shape[0])

    def with_self_loops(self) -> "AdjacencyCSR":
        if self.has_self_loops:
            return self
        return build_csr(self.edge_list(), self.num_nodes, add_self_loops=True)

    @cached_property
    def segments(self) -> EdgeSegments:
        dst = np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(self.row_offsets))
        return EdgeSegments(self.num_nodes, self.row_offsets, self.col_indices, _frozen(dst))

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.num_nodes, self.num_nodes))
        A[self.segments.dst, self.segments.src] = 1.0
        return A

    def permute(self, perm: Sequence[int]) -> "AdjacencyCSR":
        """Relabel nodes so that old node ``perm[k]`` becomes node ``k``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.shape[0])
        edges = inv[self.edge_list()]
        return build_csr(edges, self.num_nodes, add_self_loops=self.has_self_loops)


def build_csr(
    edge_list: Iterable[tuple[int, int]] | np.ndarray,
    num_nodes: int,
    add_self_loops: bool = False,
) -> AdjacencyCSR:
    edges = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list, dtype=np.int64)
    edges = edges.reshape(-1, 2)
    bad = np.flatnonzero(np.any((edges < 0) | (edges >= num_nodes), axis=1))
    if bad.size:
        u, v = edges[bad[0]]
        raise GraphError(f"edge ({u}, {v}) out of range for {num_nodes} nodes")

    u, v = edges[:, 0], edges[:, 1]
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    if add_self_loops:
        loops = np.arange(num_nodes, dtype=np.int64)
        src = np.concatenate([src, loops])
        dst = np.concatenate([dst, loops])
    else:
        off = src != dst
        src, dst = src[off], dst[off]

    keys = np.unique(src * num_nodes + dst)
    rows, cols = np.divmod(keys, num_nodes)
    counts = np.bincount(rows, minlength=num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return AdjacencyCSR(num_nodes, offsets, cols, has_self_loops=add_self_loops)


def make_fully_adjacent(num_nodes: int) -> AdjacencyCSR:
    if num_nodes < 1:
        raise GraphError("fully adjacent graph needs at least one node")
    offsets = np.arange(num_nodes + 1, dtype=np.int64) * num_nodes
    cols = np.tile(np.arange(num_nodes, dtype=np.int64), num_nodes)
    return AdjacencyCSR(num_nodes, offsets, cols, has_self_loops=True)


@dataclass(frozen=True)
class DegreeStats:
    avg_degree_q: float
    min_degree: int
    max_degree: int
    num_isolated: int


def degree_stats(graph: AdjacencyCSR) -> DegreeStats:
    deg = graph.degrees()
    if graph.num_nodes == 0:
        return DegreeStats(0.0, 0, 0, 0)
    return DegreeStats(
        avg_degree_q=2.0 * graph.num_edges / graph.num_nodes,
        min_degree=int(deg.min()),
        max_degree=int(deg.max()),
        num_isolated=int(np.sum(deg == 0)),
    )


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    graph: AdjacencyCSR
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int
    num_edges_raw: int = field(default=-1)

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", _frozen(np.asarray(self.features, dtype=np.float64)))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))
        for name in ("train_mask", "val_mask", "test_mask"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=bool)))
        if self.num_edges_raw < 0:
            object.__setattr__(self, "num_edges_raw", self.graph.num_edges)
        self.validate()

    def validate(self) -> None:
        n = self.graph.num_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise CountMismatchError(f"features have {self.features.shape[0]} rows, graph has {n} nodes")
        if self.labels.shape != (n,):
            raise CountMismatchError(f"labels have length {self.labels.shape[0]}, graph has {n} nodes")
        for name in ("train_mask", "val_mask", "test_mask"):
            if getattr(self, name).shape != (n,):
                raise CountMismatchError(f"{name} has wrong length")
        if (self.train_mask & self.val_mask).any() or (self.train_mask & self.test_mask).any() or (
            self.val_mask & self.test_mask
        ).any():
            raise SplitOverlapError("train/val/test splits overlap")
        masked = self.train_mask | self.val_mask | self.test_mask
        lab = self.labels[masked]
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def feat_dim(self) -> int:
        return int(self.features.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.name == other.name
            and self.num_classes == other.num_classes
            and self.num_edges_raw == other.num_edges_raw
            and self.graph == other.graph
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.train_mask, other.train_mask)
            and np.array_equal(self.val_mask, other.val_mask)
            and np.array_equal(self.test_mask, other.test_mask)
        )

    __hash__ = None  # type: ignore[assignment]

    def permute(self, perm: Sequence[int]) -> "Dataset":
        perm = np.asarray(perm)
        return Dataset(
            self.name,
            self.graph.permute(perm),
            self.features[perm],
            self.labels[perm],
            self.train_mask[perm],
            self.val_mask[perm],
            self.test_mask[perm],
            self.num_classes,
            self.num_edges_raw,
        )


# --- on-disk format ---------------------------------------------------------

DATASET_FILES = ("meta.json", "edges.csv", "features.csv", "labels.csv", "splits.json")


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    edges = dataset.graph.edge_list()
    meta = {
        "name": dataset.name,
        "num_nodes": dataset.num_nodes,
        "num_edges": int(edges.shape[0]),
        "feat_dim": dataset.feat_dim,
        "num_classes": dataset.num_classes,
    }
    if dataset.num_edges_raw != meta["num_edges"]:
        # edges as listed in the source, before deduplication; adaptive depth reads this
        meta["num_edges_raw"] = dataset.num_edges_raw
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    np.savetxt(path / "edges.csv", edges, fmt="%d", delimiter=",")
    np.savetxt(path / "features.csv", dataset.features, fmt="%.17g", delimiter=",")
    np.savetxt(path / "labels.csv", dataset.labels, fmt="%d")
    splits = {
        "train": np.flatnonzero(dataset.train_mask).tolist(),
        "val": np.flatnonzero(dataset.val_mask).tolist(),
        "test": np.flatnonzero(dataset.test_mask).tolist(),
    }
    (path / "splits.json").write_text(json.dumps(splits) + "\n")
    return path


def _read_rows(path: Path, ncols: int | None) -> np.ndarray:
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            vals = line.split(",")
            if ncols is not None and len(vals) != ncols:
                raise CountMismatchError(f"{path.name}:{lineno}: expected {ncols} values, found {len(vals)}")
            rows.append(vals)
    return np.array(rows, dtype=object) if rows else np.zeros((0, ncols or 0), dtype=object)


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    for name in DATASET_FILES:
        if not (path / name).is_file():
            raise MissingFileError(f"{path / name} not found")

    meta = json.loads((path / "meta.json").read_text())
    n, d, C = int(meta["num_nodes"]), int(meta["feat_dim"]), int(meta["num_classes"])

    edges = _read_rows(path / "edges.csv", 2).astype(np.int64).reshape(-1, 2)
    if edges.shape[0] != int(meta["num_edges"]):
        raise CountMismatchError(f"edges.csv has {edges.shape[0]} edges, meta.json says {meta['num_edges']}")
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise CountMismatchError(f"edges.csv references nodes outside [0, {n})")

    features = _read_rows(path / "features.csv", d).astype(np.float64).reshape(-1, d)
    if features.shape[0] != n:
        raise CountMismatchError(f"features.csv has {features.shape[0]} rows, meta.json says {n}")

    labels = _read_rows(path / "labels.csv", 1).astype(np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise CountMismatchError(f"labels.csv has {labels.shape[0]} rows, meta.json says {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise LabelRangeError(f"labels.csv has labels outside [0, {C})")

    splits = json.loads((path / "splits.json").read_text())
    masks = []
    for key in ("train", "val", "test"):
        idx = np.asarray(splits.get(key, []), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise CountMismatchError(f"split {key!r} has indices outside [0, {n})")
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
        masks.append(mask)
    train, val, test = masks
    if (train & val).any() or (train & test).any() or (val & test).any():
        both = np.flatnonzero((train & val) | (train & test) | (val & test))
        raise SplitOverlapError(f"node {both[0]} appears in more than one split")

    graph = build_csr(edges, n)
    raw = int(meta.get("num_edges_raw", meta["num_edges"]))
    return Dataset(meta["name"], graph, features, labels, train, val, test, C, raw)


# --- synthetic data ---------------------------------------------------------


def random_split(
    labels: np.ndarray,
    split_sizes: tuple[int, int, int],
    rng: np.random.Generator,
    per_class_train: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random disjoint masks. With ``per_class_train`` the first size is per class."""
    n = labels.shape[0]
    n_train, n_val, n_test = split_sizes
    order = rng.permutation(n)
    if per_class_train:
        classes = np.unique(labels)
        train_idx = np.concatenate([order[labels[order] == c][:n_train] for c in classes])
    else:
        train_idx = order[:n_train]
    rest = order[~np.isin(order, train_idx)]
    if train_idx.size + n_val + n_test > n:
        raise InfeasibleParametersError(f"split sizes exceed {n} nodes")
    val_idx, test_idx = rest[:n_val], rest[n_val : n_val + n_test]
    masks = []
    for idx in (train_idx, val_idx, test_idx):
        m = np.zeros(n, dtype=bool)
        m[idx] = True
        masks.append(m)
    return masks[0], masks[1], masks[2]


def _sample_pairs_within(members: list[np.ndarray], weights: np.ndarray, count: int, rng) -> np.ndarray:
    block = rng.choice(len(members), size=count, p=weights)
    out = np.empty((count, 2), dtype=np.int64)
    for b in np.unique(block):
        sel = np.flatnonzero(block == b)
        nodes = members[b]
        k = nodes.shape[0]
        i = rng.integers(0, k, size=sel.size)
        j = (i + rng.integers(1, k, size=sel.size)) % k
        out[sel, 0] = nodes[i]
        out[sel, 1] = nodes[j]
    return out


def generate_synthetic(
    n: int,
    avg_degree: float,
    num_classes: int,
    feat_dim: int,
    homophily: float,
    split_sizes: tuple[int, int, int],
    seed: int,
    noise: float = 0.5,
    name: str = "synthetic",
) -> Dataset:
    """Stochastic-block graph with Gaussian class clusters as features.

    The expected number of edges is ``avg_degree * n / 2``, a fraction
    ``homophily`` of them intra-class. Class means are orthonormal, so
    ``feat_dim >= num_classes`` is required.
    """
    if n < num_classes or num_classes < 1:
        raise InfeasibleParametersError("need at least one node per class")
    if not 0.0 <= homophily <= 1.0:
        raise InfeasibleParametersError("homophily must lie in [0, 1]")
    if feat_dim < num_classes:
        raise InfeasibleParametersError("feat_dim must be >= num_classes for orthogonal class means")
    if avg_degree < 0 or noise < 0:
        raise InfeasibleParametersError("avg_degree and noise must be nonnegative")
    if sum(split_sizes) > n:
        raise InfeasibleParametersError(f"split sizes {split_sizes} exceed n={n}")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    members = [np.flatnonzero(labels == c) for c in range(num_classes)]
    sizes = np.array([m.shape[0] for m in members], dtype=np.float64)

    pairs_in = float(np.sum(sizes * (sizes - 1) / 2))
    pairs_out = n * (n - 1) / 2 - pairs_in
    m_target = avg_degree * n / 2
    m_in, m_out = homophily * m_target, (1 - homophily) * m_target
    if m_in > pairs_in or m_out > pairs_out:
        raise InfeasibleParametersError(
            f"avg_degree={avg_degree} with homophily={homophily} needs more edges than the blocks hold"
        )

    k_in = int(rng.binomial(int(pairs_in), m_in / pairs_in)) if m_in > 0 else 0
    k_out = int(rng.binomial(int(pairs_out), m_out / pairs_out)) if m_out > 0 else 0
    parts = []
    if k_in:
        w = sizes * (sizes - 1) / 2
        big = [m for m, s in zip(members, sizes) if s >= 2]
        parts.append(_sample_pairs_within(big, w[sizes >= 2] / pairs_in, k_in, rng))
    if k_out:
        u = rng.integers(0, n, size=k_out)
        v = rng.integers(0, n, size=k_out)
        same = labels[u] == labels[v]
        while same.any():
            v[same] = rng.integers(0, n, size=int(same.sum()))
            same = labels[u] == labels[v]
        parts.append(np.stack([u, v], axis=1))
    edges = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
    graph = build_csr(edges, n)

    means = np.linalg.qr(rng.standard_normal((feat_dim, num_classes)))[0].T
    features = means[labels] + noise * rng.standard_normal((n, feat_dim))
    train, val, test = random_split(labels, split_sizes, rng)
    return Dataset(name, graph, features, labels, train, val, test, num_classes)
