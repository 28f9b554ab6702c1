import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gatlab import autodiff as ad
from gatlab.autodiff import Tensor, parameter
from gatlab.graph import build_csr, make_fully_adjacent
from gatlab.layers import (
    AttentionParams,
    ResidualMode,
    adgat_layer_forward,
    attention_scores,
    attention_weights,
    decoupled_propagate,
    fa_wrap,
    gat_layer_forward,
    init_attention,
)

from conftest import dense_adjacency, random_graph


def act(x, kind, slope=0.2):
    return ad.activation_values(np.asarray(x, dtype=float), kind, slope)[0]


def dense_gat(H, W, a, A, kind="leaky_relu", sigma="identity", heads=1, concat=True):
    """Literal per-pair evaluation of the attention layer."""
    N = H.shape[0]
    k = a.shape[0] // 2
    WH = H @ W
    outs = []
    for h in range(heads):
        Z = WH[:, h * k : (h + 1) * k]
        out = np.zeros((N, k))
        for i in range(N):
            nbrs = np.flatnonzero(A[i])
            e = np.array([act(a[:k, h] @ Z[i] + a[k:, h] @ Z[j], kind) for j in nbrs])
            w = np.exp(e - e.max())
            w /= w.sum()
            out[i] = sum(wj * Z[j] for wj, j in zip(w, nbrs))
        outs.append(out)
    out = np.concatenate(outs, axis=1) if concat else np.mean(outs, axis=0)
    return act(out, sigma)


def params_from(W, a, W_res=None, kind="leaky_relu", heads=1):
    return AttentionParams(
        None if W is None else parameter(W), parameter(a), None if W_res is None else parameter(W_res), kind, heads
    )


def path3():
    return build_csr([(0, 1), (1, 2)], 3, add_self_loops=True)


# --- attention scores -------------------------------------------------------


def test_zero_attention_vector_gives_zero_scores(rng):
    g = random_graph(rng, 5)
    p = params_from(rng.normal(size=(3, 4)), np.zeros((8, 1)))
    s = attention_scores(Tensor(rng.normal(size=(5, 3))), Tensor(rng.normal(size=(5, 3))), p, g)
    assert not s.data.any()


def test_single_node_score(rng):
    g = build_csr([], 1, add_self_loops=True)
    W, a, h = rng.normal(size=(2, 2)), rng.normal(size=(4, 1)), rng.normal(size=(1, 2))
    s = attention_scores(Tensor(h), Tensor(h), params_from(W, a), g).data
    z = (h @ W)[0]
    assert s[0, 0] == pytest.approx(act(a[:, 0] @ np.concatenate([z, z]), "leaky_relu"), abs=1e-15)


@pytest.mark.parametrize("kind", ["leaky_relu", "sigmoid", "tanh"])
def test_path_scores_match_dense(kind):
    g = path3()
    W = np.array([[1.0, -0.5], [0.3, 2.0]])
    a = np.array([[0.7], [-1.1], [0.4], [0.9]])
    H = np.array([[1.0, 0.0], [0.5, -1.0], [-2.0, 0.25]])
    s = attention_scores(Tensor(H), Tensor(H), params_from(W, a, kind=kind), g).data[:, 0]
    Z = H @ W
    seg = g.segments
    expected = [act(a[:2, 0] @ Z[i] + a[2:, 0] @ Z[j], kind) for i, j in zip(seg.dst, seg.src)]
    np.testing.assert_allclose(s, expected, atol=1e-12)


def test_scores_need_self_loops(rng):
    g = build_csr([(0, 1)], 2)
    with pytest.raises(ValueError, match="self-loops"):
        attention_scores(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), params_from(np.eye(2), np.ones((4, 1))), g)


def test_width_mismatch(rng):
    g = path3()
    with pytest.raises(ValueError):
        gat_layer_forward(Tensor(np.ones((3, 5))), params_from(np.ones((4, 2)), np.ones((4, 1))), g)


# --- GAT layer --------------------------------------------------------------


def test_zero_attention_is_neighbourhood_mean(rng):
    g = random_graph(rng, 6)
    A = dense_adjacency(g)
    H, W = rng.normal(size=(6, 3)), rng.normal(size=(3, 2))
    out = gat_layer_forward(Tensor(H), params_from(W, np.zeros((4, 1))), g, sigma="elu").data
    expected = act(np.array([(H @ W)[A[i]].mean(axis=0) for i in range(6)]), "elu")
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_isolated_node_keeps_itself(rng):
    g = build_csr([(0, 1)], 3, add_self_loops=True)
    H, W = rng.normal(size=(3, 2)), rng.normal(size=(2, 2))
    out = gat_layer_forward(Tensor(H), params_from(W, rng.normal(size=(4, 1))), g, sigma="elu").data
    np.testing.assert_allclose(out[2], act(H[2] @ W, "elu"), atol=1e-15)


def test_identity_transform_matches_dense_oracle(rng):
    g = build_csr([(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], 4, add_self_loops=True)
    H, a = rng.normal(size=(4, 3)), rng.normal(size=(6, 1))
    out = gat_layer_forward(Tensor(H), params_from(np.eye(3), a), g, sigma="identity").data
    np.testing.assert_allclose(out, dense_gat(H, np.eye(3), a, dense_adjacency(g)), atol=1e-12)


@pytest.mark.parametrize("concat", [True, False])
def test_multi_head_matches_dense_oracle(rng, concat):
    g = random_graph(rng, 7)
    H, W, a = rng.normal(size=(7, 4)), rng.normal(size=(4, 9)), rng.normal(size=(6, 3))
    out = gat_layer_forward(Tensor(H), params_from(W, a, heads=3), g, "elu", concat).data
    np.testing.assert_allclose(out, dense_gat(H, W, a, dense_adjacency(g), sigma="elu", heads=3, concat=concat), atol=1e-12)


@given(st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_attention_rows_sum_to_one(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    p = params_from(rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), heads=2)
    alpha = attention_weights(Tensor(rng.normal(size=(n, 3))), p, g).data
    np.testing.assert_allclose(ad.segment_sum(alpha, g.segments), 1.0, atol=1e-9)


# --- ADGAT layer ------------------------------------------------------------


@given(st.integers(0, 2**31 - 1), st.sampled_from(["none", "input_residual", "initial_residual"]))
def test_beta_zero_is_bitwise_gat(seed, kind):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 8)
    H, anchor = Tensor(rng.normal(size=(8, 4))), Tensor(rng.normal(size=(8, 4)))
    p = params_from(rng.normal(size=(4, 4)), rng.normal(size=(4, 2)), heads=2)
    ref = gat_layer_forward(H, p, g, "elu").data
    out = adgat_layer_forward(H, anchor, p, g, ResidualMode(kind, 0.0), "elu").data
    assert np.array_equal(out, ref)


def test_uniform_attention_plus_anchor_closed_form(rng):
    g = random_graph(rng, 6)
    A = dense_adjacency(g)
    H, anchor = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    p = params_from(np.eye(3), np.zeros((6, 1)), W_res=np.eye(3))
    out = adgat_layer_forward(Tensor(H), Tensor(anchor), p, g, ResidualMode("initial_residual", 1.0), "identity").data
    expected = np.array([H[A[i]].mean(axis=0) for i in range(6)]) + anchor
    np.testing.assert_allclose(out, expected, atol=1e-12)


@pytest.mark.parametrize("kind", ["input_residual", "initial_residual"])
def test_adgat_matches_dense_oracle(rng, kind):
    g = random_graph(rng, 7)
    H, anchor = rng.normal(size=(7, 5)), rng.normal(size=(7, 6))
    W, a = rng.normal(size=(5, 4)), rng.normal(size=(4, 2))
    res_in = 5 if kind == "input_residual" else 6
    W_res = rng.normal(size=(res_in, 4))
    beta = 0.5
    p = params_from(W, a, W_res=W_res, heads=2)
    out = adgat_layer_forward(Tensor(H), Tensor(anchor), p, g, ResidualMode(kind, beta), "elu").data
    src = H if kind == "input_residual" else anchor
    pre = dense_gat(H, W, a, dense_adjacency(g), heads=2) + beta * src @ W_res
    np.testing.assert_allclose(out, act(pre, "elu"), atol=1e-12)


def test_identity_residual_needs_matching_width(rng):
    g = path3()
    p = params_from(rng.normal(size=(3, 2)), rng.normal(size=(4, 1)))
    with pytest.raises(ValueError, match="W_res"):
        adgat_layer_forward(Tensor(np.ones((3, 3))), Tensor(np.ones((3, 5))), p, g, ResidualMode("initial_residual", 1.0))


def test_incompatible_anchor_for_W_res(rng):
    g = path3()
    p = params_from(rng.normal(size=(3, 2)), rng.normal(size=(4, 1)), W_res=rng.normal(size=(4, 2)))
    with pytest.raises(ValueError):
        adgat_layer_forward(Tensor(np.ones((3, 3))), Tensor(np.ones((3, 5))), p, g, ResidualMode("initial_residual", 1.0))


def test_residual_mode_validation():
    with pytest.raises(ValueError):
        ResidualMode("skip", 1.0)
    with pytest.raises(ValueError):
        ResidualMode("initial_residual", -0.1)
    assert not ResidualMode("none", 3.0).active


def test_init_creates_W_res_only_when_widths_differ(rng):
    assert init_attention(rng, 5, 4, res_dim=4).W_res is None
    assert init_attention(rng, 5, 4, res_dim=7).W_res.shape == (7, 4)
    assert init_attention(rng, 5, 4).W_res is None


# --- decoupled propagation --------------------------------------------------


def test_single_step_is_gat_with_identity_transform(rng):
    g = random_graph(rng, 6)
    H, W, a = rng.normal(size=(6, 3)), rng.normal(size=(3, 4)), rng.normal(size=(8, 1))
    out = decoupled_propagate(Tensor(H), params_from(W, a), g, 1, "elu").data
    Z = act(H @ W, "elu")
    ref = gat_layer_forward(Tensor(Z), params_from(None, a), g, "identity").data
    np.testing.assert_allclose(out, ref, atol=1e-15)


def test_zero_attention_repeated_smoothing(rng):
    g = random_graph(rng, 6)
    A = dense_adjacency(g).astype(float)
    P = A / A.sum(axis=1, keepdims=True)
    H, W = rng.normal(size=(6, 3)), rng.normal(size=(3, 2))
    out = decoupled_propagate(Tensor(H), params_from(W, np.zeros((4, 1))), g, 4, "tanh").data
    np.testing.assert_allclose(out, np.linalg.matrix_power(P, 4) @ act(H @ W, "tanh"), atol=1e-12)


def test_three_steps_match_dense_iterate(rng):
    g = random_graph(rng, 5, p=0.5)
    A = dense_adjacency(g)
    H, W, a = rng.normal(size=(5, 3)), rng.normal(size=(3, 2)), rng.normal(size=(4, 1))
    Z = act(H @ W, "elu")
    for _ in range(3):
        Z = dense_gat(Z, np.eye(2), a, A)
    out = decoupled_propagate(Tensor(H), params_from(W, a), g, 3, "elu").data
    np.testing.assert_allclose(out, Z, atol=1e-10)


def test_decoupled_needs_a_step(rng):
    with pytest.raises(ValueError):
        decoupled_propagate(Tensor(np.ones((3, 2))), params_from(np.eye(2), np.ones((4, 1))), path3(), 0)


# --- fully adjacent layer ---------------------------------------------------


def test_fa_two_nodes(rng):
    H, W, a = rng.normal(size=(2, 3)), rng.normal(size=(3, 2)), rng.normal(size=(4, 1))
    out = fa_wrap(Tensor(H), params_from(W, a), 2).data
    np.testing.assert_allclose(out, dense_gat(H, W, a, np.ones((2, 2), bool)), atol=1e-12)


def test_fa_zero_attention_is_global_mean(rng):
    H, W = rng.normal(size=(9, 3)), rng.normal(size=(3, 2))
    out = fa_wrap(Tensor(H), params_from(W, np.zeros((4, 1))), 9, sigma="elu").data
    np.testing.assert_allclose(out, np.tile(act((H @ W).mean(axis=0), "elu"), (9, 1)), atol=1e-12)


def test_fa_equals_explicit_complete_graph(rng):
    H, W, a = rng.normal(size=(50, 4)), rng.normal(size=(4, 6)), rng.normal(size=(6, 2))
    p = params_from(W, a, heads=2)
    dense = fa_wrap(Tensor(H), p, 50, "elu", concat=True).data
    explicit = gat_layer_forward(Tensor(H), p, make_fully_adjacent(50), "elu", concat=True).data
    np.testing.assert_allclose(dense, explicit, atol=1e-12)
    edge = fa_wrap(Tensor(H), p, 50, "elu", concat=True, dense=False).data
    np.testing.assert_allclose(edge, explicit, atol=1e-12)


def test_fa_memory_guard():
    p = params_from(np.eye(2), np.ones((4, 1)))
    with pytest.raises(MemoryError):
        fa_wrap(Tensor(np.ones((11, 2))), p, 11, cap=10)


# --- shared properties ------------------------------------------------------


def _layer_outputs(H, anchor, g, p, N):
    return {
        "gat": gat_layer_forward(Tensor(H), p, g, "elu").data,
        "adgat": adgat_layer_forward(Tensor(H), Tensor(anchor), p, g, ResidualMode("initial_residual", 0.7), "elu").data,
        "decoupled": decoupled_propagate(Tensor(H), p, g, 2).data,
        "fa": fa_wrap(Tensor(H), p, N, "elu", concat=True).data,
    }


@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    N = 8
    g = random_graph(rng, N)
    H, anchor = rng.normal(size=(N, 3)), rng.normal(size=(N, 4))
    p = params_from(rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), W_res=rng.normal(size=(4, 4)), heads=2)
    perm = rng.permutation(N)
    base = _layer_outputs(H, anchor, g, p, N)
    moved = _layer_outputs(H[perm], anchor[perm], g.permute(perm), p, N)
    for name in base:
        np.testing.assert_allclose(moved[name], base[name][perm], atol=1e-9, err_msg=name)


def _grad_case(rng, N=7):
    g = random_graph(rng, N, p=0.5)
    H = Tensor(rng.normal(size=(N, 3)))
    anchor = Tensor(rng.normal(size=(N, 5)))
    W, a = parameter(rng.normal(size=(3, 4))), parameter(rng.normal(size=(4, 2)))
    W_res = parameter(rng.normal(size=(5, 4)))
    R = Tensor(rng.normal(size=(N, 4)))
    return g, H, anchor, W, a, W_res, R


@pytest.mark.parametrize("kind", ["leaky_relu", "sigmoid", "tanh"])
@pytest.mark.parametrize("layer", ["gat", "gat_mean", "adgat", "decoupled", "fa"])
def test_layer_gradients(rng, layer, kind):
    g, H, anchor, W, a, W_res, R = _grad_case(rng)
    p = AttentionParams(W, a, W_res, kind, 2)

    def loss():
        if layer == "gat":
            out = gat_layer_forward(H, p, g, "elu")
        elif layer == "gat_mean":
            out = gat_layer_forward(H, p, g, "elu", concat=False)
        elif layer == "adgat":
            out = adgat_layer_forward(H, anchor, p, g, ResidualMode("initial_residual", 0.5), "elu")
        elif layer == "decoupled":
            out = decoupled_propagate(H, p, g, 3)
        else:
            out = fa_wrap(H, p, H.shape[0], "elu", concat=True)
        width = out.shape[1]
        return ad.sum_all(ad.matmul(ad.activation(out, "tanh"), Tensor(R.data[:, :width].T)))

    params = [W, a] + ([W_res] if layer == "adgat" else [])
    assert ad.grad_check(loss, params) < 1e-4
