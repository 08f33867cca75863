import math

import numpy as np
import pytest

from ntklab import activations as A
from ntklab import network as Nw
from ntklab.gauss import SeededSampler
from ntklab.kernels import ArchitectureConfig, TrainingSet, theta_recursion
from ntklab.linalg import eigvalsh

relu = A.relu()
ident = A.identity()
tanh = A.parse_activation("tanh")


def scalar_params(W0, b0, W1, b1):
    return Nw.Params([np.array([[W0]], float), np.array([[W1]], float)], [np.array([b0], float), np.array([b1], float)])


def test_init_statistics():
    cfg = ArchitectureConfig(n0=1000, depth=2)
    p = Nw.init_params(cfg, (1000, 999, 1), SeededSampler(1))
    theta = p.flatten()
    assert theta.size >= 10 ** 6
    assert abs(theta.mean()) < 3e-3
    assert abs(theta.var() - 1.0) < 0.01
    p2 = Nw.init_params(ArchitectureConfig(n0=1000, rho_w=2.0), (1000, 999, 1), SeededSampler(1))
    w = np.concatenate([W.ravel() for W in p2.weights])
    assert abs(w.var() / 4.0 - 1.0) < 0.01


def test_init_determinism_and_widths():
    cfg = ArchitectureConfig(n0=3, depth=3)
    a = Nw.init_params(cfg, (3, 5, 4, 2), SeededSampler(9))
    b = Nw.init_params(cfg, (3, 5, 4, 2), SeededSampler(9))
    assert np.array_equal(a.flatten(), b.flatten())
    assert a.widths == (3, 5, 4, 2)
    with pytest.raises(ValueError):
        Nw.init_params(cfg, (2, 5, 4, 2), SeededSampler(9))
    with pytest.raises(ValueError):
        Nw.init_params(cfg, (3, 5, 2), SeededSampler(9))


def test_flatten_roundtrip():
    p = Nw.init_params(ArchitectureConfig(2, 3), (2, 4, 3, 2), SeededSampler(3))
    q = p.unflatten(p.flatten() * 2)
    assert np.array_equal(q.flatten(), 2 * p.flatten())


def test_forward_examples():
    cfg = ArchitectureConfig(n0=2, depth=2, beta=0.7)
    z = Nw.Params([np.zeros((3, 2)), np.zeros((1, 3))], [np.zeros(3), np.zeros(1)])
    assert Nw.forward(z, [1.0, -2.0], relu, cfg).output[0] == 0.0
    for beta in (0.0, 1.0, 3.5):
        out = Nw.forward(scalar_params(1, 0, 1, 0), [3.0], ident, ArchitectureConfig(1, 2, beta)).output
        assert out[0] == 3.0
    p = Nw.Params([np.array([[1.0], [-1.0]]), np.array([[1.0, 1.0]])], [np.zeros(2), np.zeros(1)])
    tr = Nw.forward(p, [2.0], relu, ArchitectureConfig(1, 2, 0.0))
    assert np.array_equal(tr.activations[1], np.array([2.0, 0.0]))
    assert tr.output[0] == pytest.approx(2.0 / math.sqrt(2))


def test_forward_bias_scaling():
    cfg = ArchitectureConfig(1, 2, beta=2.5)
    out = Nw.forward(scalar_params(0, 1, 0, 1), [1.0], ident, cfg).output
    assert out[0] == 2.5


def test_forward_reproducible(rng):
    cfg = ArchitectureConfig(3, 3)
    p = Nw.init_params(cfg, (3, 6, 6, 2), SeededSampler(0))
    x = rng.normal(size=3)
    a = Nw.forward(p, x, tanh, cfg)
    b = Nw.forward(p, x, tanh, cfg)
    for u, v in zip(a.preactivations, b.preactivations):
        assert np.array_equal(u, v)


@pytest.mark.parametrize("name", ["tanh", "erf", "gelu", "poly:0.2,1,0.3"])
def test_jacobian_matches_finite_differences(name, rng):
    spec = A.parse_activation(name)
    cfg = ArchitectureConfig(3, 3, 0.8)
    p = Nw.init_params(cfg, (3, 5, 4, 2), SeededSampler(11))
    x = rng.normal(size=3)
    J = Nw.jacobian(p, x, spec, cfg)
    th = p.flatten()
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        d = rng.normal(size=th.size)
        d /= np.linalg.norm(d)
        fp = Nw.forward(p.unflatten(th + h * d), x, spec, cfg).output
        fm = Nw.forward(p.unflatten(th - h * d), x, spec, cfg).output
        fd = (fp - fm) / (2 * h)
        an = J @ d
        worst = max(worst, float(np.max(np.abs(fd - an)) / max(np.max(np.abs(an)), 1e-8)))
    assert worst <= 1e-4


def test_jacobian_entrywise_fd(rng):
    cfg = ArchitectureConfig(2, 2, 0.6)
    p = Nw.init_params(cfg, (2, 3, 1), SeededSampler(5))
    x = rng.normal(size=2)
    J = Nw.jacobian(p, x, tanh, cfg)[0]
    th = p.flatten()
    for i in range(th.size):
        e = np.zeros(th.size)
        e[i] = 1e-5
        fd = (Nw.forward(p.unflatten(th + e), x, tanh, cfg).output[0]
              - Nw.forward(p.unflatten(th - e), x, tanh, cfg).output[0]) / 2e-5
        assert abs(fd - J[i]) <= 1e-5 * max(abs(J[i]), 1e-3)


def test_relu_jacobian_away_from_kinks(rng):
    cfg = ArchitectureConfig(2, 2, 1.0)
    p = Nw.init_params(cfg, (2, 6, 1), SeededSampler(2))
    checked = 0
    for _ in range(20):
        x = rng.normal(size=2)
        pre = Nw.forward(p, x, relu, cfg).preactivations[0]
        if np.min(np.abs(pre)) < 1e-3:
            continue
        J = Nw.jacobian(p, x, relu, cfg)[0]
        th = p.flatten()
        d = rng.normal(size=th.size)
        h = 1e-6
        fd = (Nw.forward(p.unflatten(th + h * d), x, relu, cfg).output[0]
              - Nw.forward(p.unflatten(th - h * d), x, relu, cfg).output[0]) / (2 * h)
        assert fd == pytest.approx(J @ d, rel=1e-5)
        checked += 1
    assert checked > 5


def test_output_layer_weight_gradient(rng):
    cfg = ArchitectureConfig(2, 3, 1.0)
    p = Nw.init_params(cfg, (2, 4, 5, 3), SeededSampler(4))
    x = rng.normal(size=2)
    tr = Nw.forward(p, x, tanh, cfg)
    J = Nw.jacobian(p, x, tanh, cfg)
    # flattened layout per layer: W row-major, then b
    off = (2 * 4 + 4) + (4 * 5 + 5)
    a = tr.activations[-1]
    for mu in range(3):
        block = J[mu, off:off + 15].reshape(3, 5)
        expect = np.zeros((3, 5))
        expect[mu] = a / math.sqrt(5)
        assert np.allclose(block, expect, atol=1e-14, rtol=0)


def test_perceptron_gradient_triple():
    spec = tanh
    W0, b0, W1, x = 0.7, -0.3, 1.4, 1.9
    p = scalar_params(W0, b0, W1, 0.0)
    J = Nw.jacobian(p, [x], spec, ArchitectureConfig(1, 2, 1.0))[0]
    u = W0 * x + b0
    ds = spec.derivative(u)
    # order: W0, b0, W1, b1
    assert J[0] == pytest.approx(x * W1 * ds, rel=1e-14)
    assert J[1] == pytest.approx(W1 * ds, rel=1e-14)
    assert J[2] == pytest.approx(spec.value(u), rel=1e-14)
    assert J[3] == 1.0


def test_perceptron_kernel_examples():
    assert Nw.perceptron_kernel(1, 0, 1, 2, 3, ident) == 13.0
    assert Nw.perceptron_kernel(1, 0, 0, 0, 0, relu) == 0.0
    for x, y in [(0.3, -1.2), (2.0, 0.5)]:
        assert Nw.perceptron_kernel(0.4, 0.1, -0.8, x, y, tanh) == Nw.perceptron_kernel(0.4, 0.1, -0.8, y, x, tanh)


@pytest.mark.parametrize("name", ["relu", "tanh", "identity"])
def test_empirical_ntk_matches_perceptron_sum(name):
    spec = A.parse_activation(name)
    cfg = ArchitectureConfig(1, 2, 1.3)
    s = SeededSampler(17)
    for k in range(10):
        p = Nw.init_params(cfg, (1, 7, 1), s.spawn(k + 1))
        xs = np.array([[0.4], [-1.1], [2.0]])
        T = Nw.empirical_ntk(p, xs, spec, cfg)
        for i in range(3):
            for j in range(3):
                ref = Nw.perceptron_ntk(p, xs[i, 0], xs[j, 0], spec, cfg)
                assert abs(T[i, j] - ref) <= 1e-12 * max(1.0, abs(ref))


def test_empirical_ntk_is_jacobian_gram(rng):
    cfg = ArchitectureConfig(3, 3, 0.5)
    p = Nw.init_params(cfg, (3, 4, 6, 2), SeededSampler(8))
    X = rng.normal(size=(5, 3))
    J = Nw.jacobian_batch(p, X, tanh, cfg).reshape(10, -1)
    T = Nw.empirical_ntk(p, X, tanh, cfg)
    assert np.allclose(T, J @ J.T, atol=1e-12, rtol=0)
    assert np.array_equal(T, T.T)
    w = eigvalsh(T)
    assert w[0] >= -1e-10 * w[-1]


def test_single_point_is_squared_jacobian_norm(rng):
    cfg = ArchitectureConfig(2, 2)
    p = Nw.init_params(cfg, (2, 8, 1), SeededSampler(1))
    x = rng.normal(size=2)
    T = Nw.empirical_ntk(p, x[None, :], relu, cfg)
    J = Nw.jacobian(p, x, relu, cfg)
    assert T.shape == (1, 1) and T[0, 0] == pytest.approx(float(J[0] @ J[0]), rel=1e-13)


def test_duplicate_inputs_give_identical_rows(rng):
    cfg = ArchitectureConfig(2, 3)
    p = Nw.init_params(cfg, (2, 5, 5, 1), SeededSampler(1))
    X = rng.normal(size=(4, 2))
    X[3] = X[1]
    T = Nw.empirical_ntk(p, X, relu, cfg)
    assert np.array_equal(T[1], T[3])


def test_monte_carlo_sentinel_and_agreement():
    cfg = ArchitectureConfig(2, 2, 1.0)
    X = TrainingSet(np.array([[1.0, 0.5], [-0.3, 0.8], [0.2, -1.0]]))
    mean, se = Nw.monte_carlo_ntk(cfg, (2, 1024, 1), X, relu, 1, SeededSampler(3))
    assert np.all(np.isnan(se)) and np.all(np.isfinite(mean))
    mean, se = Nw.monte_carlo_ntk(cfg, (2, 1024, 1), X, relu, 30, SeededSampler(3))
    exact = theta_recursion(X, relu, cfg)[-1].values
    assert np.all(np.abs(mean - exact) <= 3 * se + 1e-12)


def test_monte_carlo_clt_scaling():
    cfg = ArchitectureConfig(2, 2, 1.0)
    X = TrainingSet(np.array([[1.0, 0.5], [-0.3, 0.8], [0.2, -1.0]]))
    _, s1 = Nw.monte_carlo_ntk(cfg, (2, 32, 1), X, relu, 200, SeededSampler(4))
    _, s2 = Nw.monte_carlo_ntk(cfg, (2, 32, 1), X, relu, 400, SeededSampler(5))
    ratio = float(np.median(s2) / np.median(s1))
    assert abs(ratio - 1 / math.sqrt(2)) <= 0.2 / math.sqrt(2)


def test_width_sweep_decreases():
    cfg = ArchitectureConfig(2, 2, 1.0)
    X = TrainingSet(np.array([[1.0, 0.5], [-0.3, 0.8], [0.2, -1.0], [0.9, 0.9]]))
    exact = theta_recursion(X, relu, cfg)[-1].values
    rows = Nw.width_sweep(cfg, [16, 256, 4096], X, relu, 10, SeededSampler(6), exact)
    errs = [r.frobenius_error_vs_exact for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert all(r.sample_count == 10 for r in rows)
