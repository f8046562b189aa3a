"""ST-GCN branch contracts: SGC oracle equivalence, equivariance, GRU behavior."""

import numpy as np
import pytest

from lipgcn.errors import UsageError
from lipgcn.graphs import AdjacencyMatrix
from lipgcn.numerics import Tensor, gradcheck_many, no_grad, ops
from lipgcn.params import ParamRegistry
from lipgcn.stgcn import BiGRU, STGCNLayer, make_branch, run_branch, sgc


def rownorm(rng, n, batch=None):
    shape = (batch, n, n) if batch else (n, n)
    raw = np.abs(rng.standard_normal(shape)) + 0.05
    return raw / raw.sum(axis=-1, keepdims=True)


def sgc_oracle(f, m, w, activation):
    """Explicit per-node aggregation, then per-channel linear map, then sigma."""
    B, N, T, C = f.shape
    out = np.zeros_like(f)
    for b in range(B):
        for t in range(T):
            agg = np.zeros((N, C))
            for i in range(N):
                for j in range(N):
                    agg[i] += m[i, j] * f[b, j, t]
            out[b, :, t, :] = agg @ w
    if activation == "relu":
        out = np.maximum(out, 0.0)
    return out


def test_sgc_identity_case(rng):
    f = rng.standard_normal((2, 5, 3, 4))
    out = sgc(Tensor(f), Tensor(np.eye(5)), Tensor(np.eye(4)), activation="identity")
    assert np.abs(out.data - f).max() < 1e-15


def test_sgc_matches_bruteforce_oracle_50_seeds():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 9))
        f = rng.standard_normal((2, n, 4, 3))
        m = rownorm(rng, n)
        w = rng.standard_normal((3, 3))
        got = sgc(Tensor(f), Tensor(m), Tensor(w), activation="relu").data
        want = sgc_oracle(f, m, w, "relu")
        assert np.abs(got - want).max() < 1e-9


def test_sgc_node_permutation_equivariance(rng):
    n = 6
    f = rng.standard_normal((1, n, 3, 4))
    m = rownorm(rng, n)
    w = rng.standard_normal((4, 4))
    perm = rng.permutation(n)
    base = sgc(Tensor(f), Tensor(m), Tensor(w)).data
    permuted = sgc(Tensor(f[:, perm]), Tensor(m[np.ix_(perm, perm)]), Tensor(w)).data
    assert np.abs(permuted - base[:, perm]).max() < 1e-12


def test_sgc_rejects_unnormalized_adjacency(rng):
    f = Tensor(rng.standard_normal((1, 20, 3, 2)))
    m = AdjacencyMatrix(Tensor(np.ones((20, 20))), kind="LCG", normalized=False)
    with pytest.raises(UsageError):
        sgc(f, m, Tensor(np.eye(2)))


def test_sgc_batched_adjacency(rng):
    f = rng.standard_normal((3, 5, 4, 2))
    m = rownorm(rng, 5, batch=3)
    w = rng.standard_normal((2, 2))
    got = sgc(Tensor(f), Tensor(m), Tensor(w), activation="identity").data
    for b in range(3):
        single = sgc(Tensor(f[b:b + 1]), Tensor(m[b]), Tensor(w),
                     activation="identity").data
        assert np.abs(got[b] - single[0]).max() < 1e-12


# layer -------------------------------------------------------------------------


def identity_layer(channels):
    reg = ParamRegistry(0)
    layer = STGCNLayer(channels, reg, "test", activation="identity")
    for tc in (layer.tc1, layer.tc2):
        k = np.zeros_like(tc.kernel.data)
        for c in range(channels):
            k[c, c, 1] = 1.0
        tc.kernel.data = k
        tc.bias.data = np.zeros_like(tc.bias.data)
    layer.w.data = np.eye(channels)
    return layer


def test_layer_identity_composition_doubles_input(rng):
    layer = identity_layer(3)
    f = rng.standard_normal((2, 6, 5, 3))
    out = layer(Tensor(f), Tensor(np.eye(6)))
    assert np.abs(out.data - 2.0 * f).max() < 1e-12


def test_layer_preserves_time_extent(rng):
    reg = ParamRegistry(1)
    layer = STGCNLayer(4, reg, "l")
    for t_len in (3, 7, 12):
        f = Tensor(rng.standard_normal((1, 5, t_len, 4)))
        out = layer(f, Tensor(rownorm(rng, 5)))
        assert out.shape == (1, 5, t_len, 4)


def test_layer_gradcheck(rng):
    reg = ParamRegistry(2)
    layer = STGCNLayer(3, reg, "l")
    f = Tensor(rng.standard_normal((1, 4, 5, 3)), requires_grad=True)
    m = Tensor(rownorm(rng, 4))
    probe = Tensor(rng.standard_normal((1, 4, 5, 3)))
    err = gradcheck_many(lambda: ops.sum_(ops.mul(layer(f, m), probe)),
                         [f] + reg.tensors())
    assert err < 1e-4


def test_layer_outputs_bounded_on_unit_inputs():
    # row-stochastic adjacency + bounded activations: no blow-up
    for seed in range(5):
        rng = np.random.default_rng(seed)
        reg = ParamRegistry(seed)
        layers = [STGCNLayer(4, reg, f"l{i}") for i in range(2)]
        f = Tensor(rng.uniform(-1, 1, size=(2, 20, 8, 4)))
        m = Tensor(rownorm(rng, 20))
        with no_grad():
            h = f
            for layer in layers:
                h = layer(h, m)
        assert np.abs(h.data).max() < 1e3


# BiGRU -------------------------------------------------------------------------


def test_bigru_zero_fixed_point():
    reg = ParamRegistry(0)
    gru = BiGRU(3, 2, reg, "g")
    out = gru(Tensor(np.zeros((2, 5, 3))))
    assert np.array_equal(out.data, np.zeros((2, 5, 4)))


def test_bigru_reversal_swaps_halves(rng):
    reg = ParamRegistry(1)
    gru = BiGRU(3, 2, reg, "g")
    # give both directions identical weights so orientation is the only difference
    for name in ("wx", "wh", "bx", "bh"):
        getattr(gru.bwd, name).data = getattr(gru.fwd, name).data.copy()
    x = rng.standard_normal((2, 6, 3))
    out = gru(Tensor(x)).data
    out_rev = gru(Tensor(x[:, ::-1].copy())).data
    H = 2
    assert np.abs(out_rev[:, :, :H] - out[:, ::-1, H:]).max() < 1e-12
    assert np.abs(out_rev[:, :, H:] - out[:, ::-1, :H]).max() < 1e-12


def test_bigru_gradcheck_toy(rng):
    reg = ParamRegistry(2)
    gru = BiGRU(2, 2, reg, "g")
    x = Tensor(rng.standard_normal((1, 5, 2)), requires_grad=True)
    probe = Tensor(rng.standard_normal((1, 5, 4)))
    err = gradcheck_many(lambda: ops.sum_(ops.mul(gru(x), probe)),
                         [x] + reg.tensors())
    assert err < 1e-4


# branch ------------------------------------------------------------------------


def test_run_branch_shape_contract(rng):
    reg = ParamRegistry(3)
    branch = make_branch("dag", channels=3, out_dim=8, registry=reg, n_layers=1)
    f = Tensor(rng.standard_normal((2, 20, 6, 3)))
    out = run_branch(f, branch, Tensor(rownorm(rng, 20)))
    assert out.shape == (2, 6, 8)


def test_run_branch_deterministic(rng):
    reg = ParamRegistry(4)
    branch = make_branch("sag", channels=2, out_dim=4, registry=reg)
    f = Tensor(rng.standard_normal((1, 20, 5, 2)))
    m = Tensor(rownorm(rng, 20))
    a = run_branch(f, branch, m).data
    b = run_branch(f, branch, m).data
    assert np.array_equal(a, b)


def test_run_branch_requires_adjacency(rng):
    reg = ParamRegistry(5)
    branch = make_branch("lcg", channels=2, out_dim=4, registry=reg)
    with pytest.raises(UsageError):
        run_branch(Tensor(rng.standard_normal((1, 20, 4, 2))), branch)


def test_run_branch_gradcheck(rng):
    reg = ParamRegistry(6)
    branch = make_branch("dag", channels=2, out_dim=4, registry=reg, n_layers=2)
    f = Tensor(rng.standard_normal((1, 6, 4, 2)), requires_grad=True)
    m = Tensor(rownorm(rng, 6))
    probe = Tensor(rng.standard_normal((1, 4, 4)))
    err = gradcheck_many(lambda: ops.sum_(ops.mul(run_branch(f, branch, m), probe)),
                         [f] + reg.tensors())
    assert err < 1e-4
