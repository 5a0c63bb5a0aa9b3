import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnucb import network as nw
from fnucb.environments import duplicate_transform, unit_sphere
from oracles import fd_gradient, naive_forward


# max ||phi||^2 over 1000 sphere samples (d=10, m=20, L=2, seed 0), computed through
# the layer-wise Gram in fnucb.analysis rather than the gradient kernel
KAPPA0 = 4.4340494123522705


def _dup_contexts(rng, n, d):
    return duplicate_transform(unit_sphere(rng, n, d // 2))


def test_param_count():
    assert nw.NetworkShape(10, 20, 2).p0 == 220
    assert nw.NetworkShape(6, 8, 3).p0 == 6 * 8 + 64 + 8


@pytest.mark.parametrize("d,m,L", [(3, 4, 2), (4, 3, 2), (4, 4, 1)])
def test_invalid_shapes(d, m, L):
    with pytest.raises(nw.ShapeError):
        nw.NetworkShape(d, m, L)


def test_init_structure():
    s = nw.NetworkShape(4, 2, 2)
    th = nw.init_params(s, 3)
    out = s.layers(th)[-1]
    assert np.array_equal(out[1:], -out[:1])

    s = nw.NetworkShape(4, 4, 3)
    th = nw.init_params(s, 5)
    W2 = s.layers(th)[1]
    assert np.all(W2[:2, 2:] == 0) and np.all(W2[2:, :2] == 0)
    assert np.array_equal(W2[:2, :2], W2[2:, 2:])


def test_init_reproducible():
    s = nw.NetworkShape(10, 20, 2)
    assert np.array_equal(nw.init_params(s, 7), nw.init_params(s, 7))
    assert not np.array_equal(nw.init_params(s, 7), nw.init_params(s, 8))


def test_init_variances():
    s = nw.NetworkShape(10, 200, 3)
    th = nw.init_params(s, 0)
    W1, W2, w = s.layers(th)
    assert np.var(W1[:100, :5]) == pytest.approx(4 / 200, rel=0.1)
    assert np.var(W2[:100, :100]) == pytest.approx(4 / 200, rel=0.05)
    assert np.var(w[:100]) == pytest.approx(2 / 200, rel=0.3)


@pytest.mark.parametrize("seed", range(5))
def test_zero_output_at_init(seed):
    s = nw.NetworkShape(10, 20, 2)
    th = nw.init_params(s, seed)
    X = _dup_contexts(np.random.default_rng(seed), 1000, 10)
    assert np.max(np.abs(nw.forward(s, th, X))) <= 1e-6


def test_forward_hand_value():
    s = nw.NetworkShape(2, 2, 2)
    th = np.array([1.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    assert nw.forward(s, th, [0.6, 0.8]) == pytest.approx(1.4 * math.sqrt(2), abs=1e-12)


@pytest.mark.parametrize("d,m,L", [(4, 4, 2), (6, 8, 3), (4, 6, 4)])
def test_forward_matches_naive(d, m, L):
    s = nw.NetworkShape(d, m, L)
    rng = np.random.default_rng(d * m * L)
    th = rng.normal(size=s.p0)
    for x in unit_sphere(rng, 5, d):
        assert nw.forward(s, th, x) == pytest.approx(naive_forward(th, x, d, m, L), rel=1e-12, abs=1e-12)
        # not scale invariant in theta
        assert nw.forward(s, 2 * th, x) == pytest.approx(naive_forward(2 * th, x, d, m, L), rel=1e-12, abs=1e-12)


def test_dimension_mismatch():
    s = nw.NetworkShape(4, 4, 2)
    th = nw.init_params(s, 0)
    with pytest.raises(nw.ShapeError):
        nw.forward(s, th, np.ones(6))
    with pytest.raises(nw.ShapeError):
        nw.gradient(s, th[:-1], np.ones(4))


@pytest.mark.parametrize("d,m,L", [(4, 4, 2), (10, 20, 2), (6, 8, 3)])
def test_gradient_finite_differences(d, m, L):
    s = nw.NetworkShape(d, m, L)
    rng = np.random.default_rng(11)
    th = nw.init_params(s, 1) + 0.1 * rng.normal(size=s.p0)
    for x in unit_sphere(rng, 3, d):
        g = nw.gradient(s, th, x)
        fd = fd_gradient(lambda t: nw.forward(s, t, x), th)
        assert np.max(np.abs(g - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_taylor_at_init():
    s = nw.NetworkShape(10, 20, 2)
    th0 = nw.init_params(s, 2)
    rng = np.random.default_rng(2)
    x = _dup_contexts(rng, 1, 10)[0]
    g = nw.gradient(s, th0, x)
    v = rng.normal(size=s.p0)
    for eps in (1e-4, 1e-5):
        lin = nw.forward(s, th0, x) + eps * g @ v
        assert abs(nw.forward(s, th0 + eps * v, x) - lin) <= 50 * eps ** 2 * (v @ v)


def test_dead_unit_gradient_zero():
    s = nw.NetworkShape(2, 2, 2)
    th = np.array([1.0, 0.0, -1.0, 0.0, 1.0, 1.0])   # second unit has pre-activation -x0 < 0
    g = nw.gradient(s, th, [0.6, 0.8])
    assert np.all(g[2:4] == 0) and g[5] == 0


def test_tangent_feature_shared_and_bounded():
    s = nw.NetworkShape(10, 20, 2)
    th0 = nw.init_params(s, 0)
    X = unit_sphere(np.random.default_rng(0), 1000, 10)
    phi = nw.tangent_feature(s, th0, X)
    assert np.array_equal(phi, nw.tangent_feature(s, th0.copy(), X))
    assert np.allclose(phi, nw.gradient(s, th0, X) / math.sqrt(20))
    # empirical kappa_0 = max ||phi||^2 over the sampled domain, frozen
    assert float(np.max(np.sum(phi * phi, axis=1))) == pytest.approx(KAPPA0, rel=1e-9)


def test_train_zero_steps_returns_start():
    s = nw.NetworkShape(4, 4, 2)
    th0 = nw.init_params(s, 0)
    X = unit_sphere(np.random.default_rng(0), 5, 4)
    cfg = nw.TrainConfig(steps=0)
    assert np.array_equal(nw.train_local(s, th0, X, np.ones(5), cfg), th0)
    warm = th0 + 1.0
    assert np.array_equal(nw.train_local(s, th0, X, np.ones(5), cfg, warm_start=warm), warm)


def test_one_step_closed_form():
    s = nw.NetworkShape(4, 4, 2)
    th0 = nw.init_params(s, 0)
    rng = np.random.default_rng(1)
    warm = th0 + 0.1 * rng.normal(size=s.p0)
    x = unit_sphere(rng, 1, 4)
    y = np.array([0.7])
    lr, lam = 1e-3, 0.5
    out = nw.train_local(s, th0, x, y, nw.TrainConfig(lr=lr, steps=1, lam=lam), warm_start=warm)
    # with n = 1 the mean objective equals the summed one
    expected = warm - lr * nw.objective_grad(s, th0, warm, x, y, lam)
    assert np.allclose(out, expected, rtol=0, atol=1e-14)


def test_training_descends():
    s = nw.NetworkShape(10, 20, 2)
    ok = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = unit_sphere(rng, 50, 10)
        y = np.cos(3 * X @ unit_sphere(rng, 1, 10)[0]) + 0.01 * rng.normal(size=50)
        _, losses = nw.train_local(s, nw.init_params(s, seed), X, y, nw.TrainConfig(lr=0.01, steps=30),
                                   return_losses=True)
        ok += bool(np.all(np.diff(losses) <= 1e-12))
    assert ok >= 19


def test_divergence_reports_step():
    s = nw.NetworkShape(4, 4, 2)
    th0 = nw.init_params(s, 0)
    X = unit_sphere(np.random.default_rng(0), 5, 4)
    with pytest.raises(nw.DivergenceError) as ei:
        nw.train_local(s, th0, X, 1e3 * np.ones(5), nw.TrainConfig(lr=1e3, steps=50))
    assert 0 <= ei.value.step < 50


def test_large_lambda_stays_at_init():
    s = nw.NetworkShape(10, 20, 2)
    th0 = nw.init_params(s, 0)
    rng = np.random.default_rng(0)
    X = unit_sphere(rng, 30, 10)
    y = rng.normal(size=30)
    dist = []
    for lam in (0.01, 0.1, 1.0, 10.0):
        th = nw.train_local(s, th0, X, y, nw.TrainConfig(lr=0.001, steps=30, lam=lam))
        dist.append(np.linalg.norm(th - th0))
    assert all(a > b for a, b in zip(dist, dist[1:]))


def test_stochastic_needs_rng_and_is_reproducible():
    s = nw.NetworkShape(4, 4, 2)
    th0 = nw.init_params(s, 0)
    X = unit_sphere(np.random.default_rng(0), 20, 4)
    y = np.ones(20)
    cfg = nw.TrainConfig(batch_size=4)
    with pytest.raises(ValueError):
        nw.train_local(s, th0, X, y, cfg)
    a = nw.train_local(s, th0, X, y, cfg, rng=np.random.default_rng(3))
    b = nw.train_local(s, th0, X, y, cfg, rng=np.random.default_rng(3))
    assert np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), half=st.sampled_from([1, 2, 5]), m=st.sampled_from([2, 4, 10]),
       L=st.integers(2, 4))
def test_zero_output_property(seed, half, m, L):
    s = nw.NetworkShape(2 * half, m, L)
    th = nw.init_params(s, seed)
    X = _dup_contexts(np.random.default_rng(seed), 4, 2 * half)
    assert np.max(np.abs(nw.forward(s, th, X))) <= 1e-9
