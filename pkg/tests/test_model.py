import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggforge.estimators import estimate_memory, estimate_work
from aggforge.generators import GenSpec, generate_edges, generate_features, generate_labels
from aggforge.graph import OperatorSpec, ap_reference, build_csr, in_degrees
from aggforge.model import (GraphContext, SageModel, backward, forward, gcn_normalize, load_checkpoint,
                            loss_grad, save_checkpoint, sgd_step)
from aggforge.training import TrainConfig, train

from conftest import G3_EDGES, random_edges


def _instance(seed, n=12, f=4, dims=(5, 4), l=3, density=0.25):
    rng = np.random.default_rng(seed)
    g = build_csr(random_edges(rng, n, density), n)
    x = rng.standard_normal((n, f))
    y = rng.integers(0, l, n)
    model = SageModel.init([f, *dims, l], seed=seed)
    return g, x, y, model


def _loss(model, ctx, x, y):
    return loss_grad(forward(model, ctx, x), y)[0]


def _max_rel(a, b, floor=1e-8):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def fd_gradients(model, ctx, x, y, eps=1e-5):
    grads = []
    for w in model.weights:
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            up = _loss(model, ctx, x, y)
            w[idx] = old - eps
            down = _loss(model, ctx, x, y)
            w[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    gx = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = _loss(model, ctx, x, y)
        x[idx] = old - eps
        down = _loss(model, ctx, x, y)
        x[idx] = old
        gx[idx] = (up - down) / (2 * eps)
    return grads, gx


# -- gcn_normalize -------------------------------------------------------------------

def test_gcn_normalize_examples():
    assert gcn_normalize(np.array([4.0]), np.array([2.0]), 1).tolist() == [3.0]
    assert gcn_normalize(np.array([0.0]), np.array([5.0]), 0).tolist() == [5.0]
    x = np.array([[3.0, -6.0], [1.0, 2.0]])
    out = gcn_normalize(np.zeros_like(x), x, np.array([2, 0]))
    assert out.tolist() == [[1.0, -2.0], [1.0, 2.0]]


@settings(max_examples=30, deadline=None)
@given(st.floats(-8, 8), st.integers(0, 50), st.integers(0, 2**31))
def test_gcn_normalize_homogeneous(c, deg, seed):
    rng = np.random.default_rng(seed)
    a, o = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_allclose(gcn_normalize(c * a, c * o, deg), c * gcn_normalize(a, o, deg),
                               rtol=1e-12, atol=1e-12)


# -- forward -------------------------------------------------------------------------

def test_zero_weights_give_zero_logits():
    g, x, _, _ = _instance(0)
    m = SageModel([np.zeros((4, 5)), np.zeros((5, 4)), np.zeros((4, 3))])
    assert np.all(forward(m, GraphContext(g), x) == 0)


def test_single_identity_layer_on_g3(g3):
    x = np.array([[1.0], [2.0], [4.0]])
    m = SageModel([np.eye(1)])
    agg = ap_reference(g3, x, None, OperatorSpec())
    expect = gcn_normalize(agg, x, in_degrees(g3))
    assert np.array_equal(forward(m, GraphContext(g3), x), expect)
    assert expect.ravel().tolist() == [2.5, 2.0, 7 / 3]


def test_forward_rejects_wrong_rows(g3):
    m = SageModel.init([2, 3, 2])
    with pytest.raises(ValueError):
        forward(m, GraphContext(g3), np.ones((4, 2)))
    with pytest.raises(ValueError):
        SageModel([np.ones((2, 3)), np.ones((4, 2))])


def test_permutation_equivariance():
    rng = np.random.default_rng(9)
    n = 15
    edges = random_edges(rng, n, 0.3)
    x = rng.standard_normal((n, 3))
    m = SageModel.init([3, 6, 2], seed=1)
    base = forward(m, GraphContext(build_csr(edges, n)), x)
    pi = rng.permutation(n)
    x_p = np.empty_like(x)
    x_p[pi] = x
    out = forward(m, GraphContext(build_csr(pi[edges], n)), x_p)
    np.testing.assert_allclose(out[pi], base, rtol=1e-12, atol=1e-14)


def test_glorot_bounds_and_seed():
    a = SageModel.init([10, 20, 3], seed=4)
    b = SageModel.init([10, 20, 3], seed=4)
    assert all(np.array_equal(p, q) for p, q in zip(a.weights, b.weights))
    assert np.abs(a.weights[0]).max() <= math.sqrt(6 / 30)
    assert a.dims == [10, 20, 3]


# -- loss --------------------------------------------------------------------------------

def test_loss_uniform_logits():
    loss, _ = loss_grad(np.zeros((4, 5)), np.array([0, 1, 2, 3]))
    assert loss == pytest.approx(math.log(5), rel=1e-15)


def test_loss_huge_margin():
    logits = np.array([[1e3, 0.0], [0.0, 1e3]])
    loss, dl = loss_grad(logits, np.array([0, 1]))
    assert loss == 0.0 and np.all(np.abs(dl) < 1e-300)


def test_loss_gradient_two_vertices():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((2, 3))
    y = np.array([2, 0])
    _, dz = loss_grad(z, y)
    fd = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += 1e-6
        zm[idx] -= 1e-6
        fd[idx] = (loss_grad(zp, y)[0] - loss_grad(zm, y)[0]) / 2e-6
    assert _max_rel(dz, fd) < 1e-6


def test_loss_masking_and_errors():
    z = np.random.default_rng(1).standard_normal((4, 2))
    y = np.array([0, -1, 1, 1])
    loss, dz = loss_grad(z, y, owner_mask=np.array([True, True, False, True]))
    assert np.all(dz[[1, 2]] == 0)
    ref, _ = loss_grad(z[[0, 3]], y[[0, 3]])
    assert loss == pytest.approx(ref)
    with pytest.raises(ValueError):
        loss_grad(z, np.full(4, -1))
    assert loss_grad(z, np.full(4, -1), normalizer=10)[0] == 0.0


# -- backward ----------------------------------------------------------------------------

def test_backward_needs_forward():
    m = SageModel.init([2, 2])
    with pytest.raises(RuntimeError):
        m.backward_layer(0, np.ones((3, 2)))


def test_zero_dlogits_give_zero_grads():
    g, x, _, m = _instance(1)
    ctx = GraphContext(g)
    logits = forward(m, ctx, x)
    grads, dx = backward(m, ctx, np.zeros_like(logits))
    assert all(np.all(gr == 0) for gr in grads) and np.all(dx == 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_finite_difference_gradients(seed):
    g, x, y, m = _instance(seed)
    ctx = GraphContext(g, block_size=5)
    logits = forward(m, ctx, x)
    _, dl = loss_grad(logits, y)
    grads, dx = backward(m, ctx, dl)
    fd_w, fd_x = fd_gradients(m, ctx, x, y)
    for a, b in zip(grads, fd_w):
        assert _max_rel(a, b) < 1e-4
    assert _max_rel(dx, fd_x) < 1e-4


# -- sgd / checkpoints -------------------------------------------------------------------------

def test_sgd_step_examples():
    w = np.array([[1.0, -2.0]])
    g = np.array([[0.5, 0.5]])
    m = SageModel([w], lr=0.0, wd=0.1)
    sgd_step(m, [g])
    assert m.weights[0].tolist() == [[1.0, -2.0]]
    m = SageModel([w], lr=0.1, wd=0.0)
    sgd_step(m, [g])
    assert m.weights[0].tolist() == [[1.0 - 0.05, -2.0 - 0.05]]
    a, b = SageModel([w], 0.1, 0.01), SageModel([w], 0.1, 0.01)
    for mm in (a, b):
        sgd_step(mm, [g])
        sgd_step(mm, [g])
    assert np.array_equal(a.weights[0], b.weights[0])
    with pytest.raises(ValueError):
        sgd_step(a, [np.ones((2, 2))])


def test_checkpoint_round_trip(tmp_path):
    m = SageModel.init([3, 4, 2], seed=5, lr=0.3, wd=1e-3)
    hdr, blob = save_checkpoint(tmp_path / "ckpt", m, extra={"epoch": 7})
    assert blob.stat().st_size == 8 * (12 + 8)
    back = load_checkpoint(tmp_path / "ckpt")
    assert back.lr == 0.3 and back.wd == 1e-3
    assert all(np.array_equal(p, q) for p, q in zip(m.weights, back.weights))


# -- training ------------------------------------------------------------------------------

def _sbm(seed=3, duplicate=True):
    spec = GenSpec("sbm", blocks=(100, 100), p_in=0.1, p_out=0.01, seed=seed, duplicate=duplicate, feat_dim=8)
    edges = generate_edges(spec)
    return build_csr(edges, 200), generate_features(spec), generate_labels(spec)


def test_sbm_loss_decreases():
    g, x, y = _sbm()
    res = train(TrainConfig(lr=0.05, epochs=10, seed=0), g, x, y)
    assert np.all(np.diff(res.losses()) < 0)


def test_distributed_gradients_match_single():
    g, x, y = _sbm()
    cfg = dict(lr=1.0, wd=0.0, epochs=1, seed=2)
    single = train(TrainConfig(**cfg), g, x, y)
    w0 = SageModel.init([8, 16, 16, 2], seed=2).weights
    g_single = [a - b for a, b in zip(w0, single.model.weights)]
    for k in (2, 3):
        dist = train(TrainConfig(algo="cd-0", k=k, **cfg), g, x, y)
        g_dist = [a - b for a, b in zip(w0, dist.model.weights)]
        for a, b in zip(g_dist, g_single):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-13)


def test_0c_sends_nothing_and_cdr_sends():
    g, x, y = _sbm()
    z = train(TrainConfig(algo="0c", k=2, epochs=3), g, x, y)
    assert [m.elements_sent for m in z.metrics] == [0, 0, 0]
    r = train(TrainConfig(algo="cd-r", k=2, r=2, epochs=4), g, x, y)
    assert all(m.elements_sent > 0 for m in r.metrics)
    assert np.all(np.isfinite(r.losses()))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(algo="single", k=2)
    with pytest.raises(ValueError):
        TrainConfig(algo="nope")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"algo": "cd-0", "bogus": 1})
    assert TrainConfig.from_dict({"algo": "cd-r", "k": 2, "r": 5}).r == 5


def test_metrics_csv_and_windows():
    g, x, y = _sbm()
    res = train(TrainConfig(epochs=12), g, x, y)
    lines = res.metrics_csv().splitlines()
    assert lines[0] == "epoch,loss,train_acc,elements_sent" and len(lines) == 13
    assert res.mean_epoch_time(1, 10) > 0 and res.mean_epoch_time(10, 20) > 0
    assert res.mean_epoch_time(30, 40) is None


# -- estimators ----------------------------------------------------------------------------

@pytest.mark.parametrize("hop,expect", [
    ((2449029, 51.5, 100), 12.61),
    ((596499, 51.5, 256), 7.86),
    ((233692, 5, 100), 0.116),
])
def test_estimate_work_examples(hop, expect):
    assert estimate_work([hop]).total == pytest.approx(expect, abs=0.01)


def test_estimate_work_rejects_negative():
    with pytest.raises(ValueError):
        estimate_work([(10, -1, 3)])
    assert estimate_work([]).total == 0


def test_estimate_memory_examples():
    assert estimate_memory(4, 3, 2, 2, 2) == {"weights": 14, "input": 12, "aggregation": 28,
                                             "mlp": 24, "total": 78}
    zero = estimate_memory(0, 3, 2, 2, 2)
    assert zero["total"] == zero["weights"] == 14
    a, b = estimate_memory(5, 7, 3, 2, 4), estimate_memory(10, 7, 3, 2, 4)
    for key in ("input", "aggregation", "mlp"):
        assert b[key] == 2 * a[key]


# -- generators -----------------------------------------------------------------------------

def test_generators():
    assert generate_edges(GenSpec("erdos_renyi", n=10, p=0.0)).shape == (0, 2)
    ba_u = generate_edges(GenSpec("barabasi_albert", n=1000, m=4, seed=1, duplicate=False))
    ba_d = generate_edges(GenSpec("barabasi_albert", n=1000, m=4, seed=1))
    assert len(ba_d) == 2 * len(ba_u) == 2 * 4 * (1000 - 4)
    s1 = GenSpec("sbm", blocks=(100, 100), p_in=0.1, p_out=0.01, seed=5)
    assert np.array_equal(generate_edges(s1), generate_edges(s1))
    assert generate_labels(s1).tolist() == [0] * 100 + [1] * 100
    x = generate_features(s1)
    assert x.shape == (200, 16) and x.min() >= -1 and x.max() < 1
    with pytest.raises(ValueError):
        GenSpec("barabasi_albert", n=3, m=3)
    with pytest.raises(ValueError):
        GenSpec("erdos_renyi", n=5, p=1.5)
