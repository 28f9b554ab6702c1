import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gatlab.graph import (
    CountMismatchError,
    Dataset,
    GraphError,
    InfeasibleParametersError,
    LabelRangeError,
    MissingFileError,
    SplitOverlapError,
    build_csr,
    degree_stats,
    generate_synthetic,
    load_dataset,
    make_fully_adjacent,
    save_dataset,
)


@st.composite
def edge_lists(draw, max_nodes=12):
    n = draw(st.integers(1, max_nodes))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
    return n, draw(st.lists(pairs, max_size=40))


def test_single_edge():
    g = build_csr([(0, 1)], 2)
    assert g.row_offsets.tolist() == [0, 1, 2]
    assert g.col_indices.tolist() == [1, 0]


def test_duplicates_and_reverse_edges_collapse():
    assert build_csr([(0, 1), (1, 0), (0, 1)], 2) == build_csr([(0, 1)], 2)


def test_self_loops_on_path():
    g = build_csr([(0, 1), (1, 2)], 3, add_self_loops=True)
    for i in range(3):
        assert i in g.neighbors(i)
    assert g.neighbors(1).tolist() == [0, 1, 2]


def test_out_of_range_edge_is_reported():
    with pytest.raises(GraphError, match=r"\(0, 5\)"):
        build_csr([(0, 1), (0, 5)], 3)


@given(edge_lists())
def test_csr_invariants(case):
    n, edges = case
    g = build_csr(edges, n)
    assert np.all(np.diff(g.row_offsets) >= 0)
    assert g.row_offsets[-1] == g.col_indices.size
    A = g.to_dense()
    assert np.array_equal(A, A.T)
    for i in range(n):
        row = g.neighbors(i)
        assert np.all(np.diff(row) > 0)  # sorted, no duplicates
    assert g.col_indices.size == 0 or (g.col_indices.min() >= 0 and g.col_indices.max() < n)


@given(edge_lists())
def test_rebuild_from_edge_list_is_identity(case):
    n, edges = case
    g = build_csr(edges, n)
    assert build_csr(g.edge_list(), n) == g


@given(edge_lists())
def test_self_loop_rows_contain_themselves(case):
    n, edges = case
    g = build_csr(edges, n, add_self_loops=True)
    assert all(i in g.neighbors(i) for i in range(n))


def test_fully_adjacent_small_cases():
    assert make_fully_adjacent(1).col_indices.tolist() == [0]
    g3 = make_fully_adjacent(3)
    assert all(g3.neighbors(i).tolist() == [0, 1, 2] for i in range(3))
    assert make_fully_adjacent(5).nnz == 25


@pytest.mark.parametrize("n", [2, 3, 7, 20])
def test_fully_adjacent_degree(n):
    assert degree_stats(make_fully_adjacent(n)).avg_degree_q == n - 1


def test_degree_stats_examples():
    assert degree_stats(build_csr([(0, 1)], 2)).avg_degree_q == 1.0
    k5 = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    assert degree_stats(build_csr(k5, 5)).avg_degree_q == 4.0
    # Cora-sized counts: q = 2 * 5429 / 2708
    assert 2 * 5429 / 2708 == pytest.approx(4.0096, abs=1e-4)


def test_degree_stats_counts_isolated():
    st_ = degree_stats(build_csr([(0, 1)], 4, add_self_loops=True))
    assert (st_.min_degree, st_.max_degree, st_.num_isolated) == (0, 1, 2)
    assert st_.avg_degree_q == 0.5


# --- datasets on disk -------------------------------------------------------


def toy4():
    g = build_csr([(0, 1), (1, 2), (2, 3)], 4)
    feats = np.array([[0.1, 1.0], [2.5, -3.0], [1e-17, 4.0], [np.pi, 0.0]])
    return Dataset(
        "toy4", g, feats, np.array([0, 1, 0, 1]),
        np.array([1, 0, 0, 0], bool), np.array([0, 1, 0, 0], bool), np.array([0, 0, 1, 1], bool), 2,
    )


def test_save_load_round_trip(tmp_path):
    ds = toy4()
    back = load_dataset(save_dataset(ds, tmp_path / "toy"))
    assert back == ds
    assert back.name == "toy4" and back.num_classes == 2 and back.num_edges_raw == 3
    assert np.array_equal(back.features, ds.features)
    for m in ("train_mask", "val_mask", "test_mask"):
        assert np.array_equal(getattr(back, m), getattr(ds, m))


def test_synthetic_round_trip(tmp_path):
    ds = generate_synthetic(100, 4, 3, 8, 0.8, (20, 20, 40), seed=2)
    assert load_dataset(save_dataset(ds, tmp_path / "s")) == ds


def test_missing_file(tmp_path):
    path = save_dataset(toy4(), tmp_path / "toy")
    (path / "labels.csv").unlink()
    with pytest.raises(MissingFileError):
        load_dataset(path)


def test_split_overlap(tmp_path):
    path = save_dataset(toy4(), tmp_path / "toy")
    (path / "splits.json").write_text(json.dumps({"train": [0], "val": [0, 1], "test": [2, 3]}))
    with pytest.raises(SplitOverlapError):
        load_dataset(path)


def test_label_out_of_range(tmp_path):
    path = save_dataset(toy4(), tmp_path / "toy")
    (path / "labels.csv").write_text("0\n1\n2\n1\n")
    with pytest.raises(LabelRangeError):
        load_dataset(path)


def test_count_mismatch(tmp_path):
    path = save_dataset(toy4(), tmp_path / "toy")
    meta = json.loads((path / "meta.json").read_text())
    meta["num_edges"] = 4
    (path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(CountMismatchError):
        load_dataset(path)


def test_error_kinds_are_distinct():
    kinds = {MissingFileError, CountMismatchError, LabelRangeError, SplitOverlapError}
    assert len(kinds) == 4
    assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)


def test_raw_edge_count_kept_from_meta(tmp_path):
    # a file listing the same edge twice keeps its raw count, as citation dumps do
    path = save_dataset(toy4(), tmp_path / "toy")
    (path / "edges.csv").write_text("0,1\n1,2\n2,3\n1,0\n")
    meta = json.loads((path / "meta.json").read_text())
    meta["num_edges"] = 4
    (path / "meta.json").write_text(json.dumps(meta))
    ds = load_dataset(path)
    assert ds.num_edges_raw == 4 and ds.graph.num_edges == 3


# --- synthetic generator ----------------------------------------------------


def test_noise_free_homophilous_graph():
    ds = generate_synthetic(90, 4, 3, 5, 1.0, (9, 9, 30), seed=0, noise=0.0)
    e = ds.graph.edge_list()
    assert np.all(ds.labels[e[:, 0]] == ds.labels[e[:, 1]])
    for c in range(3):
        rows = ds.features[ds.labels == c]
        assert np.all(rows == rows[0])


def test_synthetic_deterministic():
    a = generate_synthetic(400, 4, 3, 8, 0.9, (60, 100, 200), seed=11)
    b = generate_synthetic(400, 4, 3, 8, 0.9, (60, 100, 200), seed=11)
    assert a == b
    assert a != generate_synthetic(400, 4, 3, 8, 0.9, (60, 100, 200), seed=12)


def test_synthetic_average_degree():
    qs = [degree_stats(generate_synthetic(1000, 4, 5, 8, 0.9, (50, 50, 50), seed=s).graph).avg_degree_q for s in range(20)]
    assert all(abs(q - 4) <= 0.4 for q in qs)


def test_synthetic_homophily_fraction():
    ds = generate_synthetic(2000, 6, 4, 8, 0.7, (50, 50, 50), seed=5)
    e = ds.graph.edge_list()
    frac = np.mean(ds.labels[e[:, 0]] == ds.labels[e[:, 1]])
    assert frac == pytest.approx(0.7, abs=0.03)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=2, num_classes=3),
        dict(homophily=1.5),
        dict(feat_dim=2),
        dict(split_sizes=(50, 50, 50)),
        dict(avg_degree=-1.0),
        dict(avg_degree=200.0),
    ],
)
def test_synthetic_rejects_infeasible(kwargs):
    base = dict(n=100, avg_degree=4.0, num_classes=3, feat_dim=8, homophily=0.9, split_sizes=(10, 10, 10), seed=0)
    with pytest.raises(InfeasibleParametersError):
        generate_synthetic(**{**base, **kwargs})


def test_dataset_permute_round_trip(toy_dataset):
    perm = np.random.default_rng(0).permutation(toy_dataset.num_nodes)
    inv = np.argsort(perm)
    assert toy_dataset.permute(perm).permute(inv) == toy_dataset
