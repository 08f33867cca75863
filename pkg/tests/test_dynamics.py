import math

import numpy as np
import pytest

from ntklab import activations as A
from ntklab import dynamics as D
from ntklab import network as Nw
from ntklab.gauss import NotPSDError, SeededSampler
from ntklab.kernels import ArchitectureConfig, KernelMatrix, TrainingSet
from ntklab.linalg import eigvalsh

from conftest import random_psd


def test_flow_t0_is_f0(rng):
    T = random_psd(rng, 5, floor=0.1)
    f0, y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    st = D.linearized_flow(T, f0, y, 0.0)
    assert np.array_equal(st.outputs, f0) and st.t == 0.0
    assert st.loss == pytest.approx(D.quadratic_loss(f0, y), abs=1e-12)


def test_flow_memorises(rng):
    T = random_psd(rng, 6, floor=0.2)
    f0, y = rng.normal(size=(6, 1)), rng.normal(size=(6, 1))
    lmin = float(eigvalsh(T)[0])
    st = D.linearized_flow(KernelMatrix(T, "theta", 2), f0, y, 50.0 / lmin)
    assert np.max(np.abs(st.outputs - y)) <= 1e-6
    assert st.loss == pytest.approx(D.quadratic_loss(st.outputs, y), abs=1e-12)


def test_flow_scalar_against_runge_kutta():
    theta, f0, y = 1.7, -0.4, 0.9
    n, t1 = 2000, 3.0
    dt = t1 / n
    f = f0
    rhs = lambda v: -theta * (v - y)
    for _ in range(n):
        k1 = rhs(f)
        k2 = rhs(f + 0.5 * dt * k1)
        k3 = rhs(f + 0.5 * dt * k2)
        k4 = rhs(f + dt * k3)
        f += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    st = D.linearized_flow(np.array([[theta]]), [f0], [y], t1)
    assert st.outputs[0, 0] == pytest.approx(f, abs=1e-12)
    assert st.outputs[0, 0] == pytest.approx(y + math.exp(-theta * t1) * (f0 - y), abs=1e-14)


def test_flow_errors(rng):
    T = random_psd(rng, 3, floor=0.1)
    with pytest.raises(ValueError):
        D.linearized_flow(T, np.zeros(3), np.ones(3), -1.0)
    with pytest.raises(NotPSDError):
        D.linearized_flow(np.diag([1.0, -1.0]), np.zeros(2), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        D.linearized_flow(T, np.zeros(2), np.ones(3), 1.0)


def test_semigroup(rng):
    T = random_psd(rng, 8, floor=0.05)
    fl = D.LinearFlow(T, np.zeros(8), np.ones(8))
    for t1, t2 in [(0.1, 0.3), (1.0, 2.5), (0.0, 0.7)]:
        assert np.max(np.abs(fl.propagator(t1) @ fl.propagator(t2) - fl.propagator(t1 + t2))) <= 1e-10


def test_loss_non_increasing(rng):
    T = random_psd(rng, 7, rank=4)
    fl = D.LinearFlow(T, rng.normal(size=7), rng.normal(size=7))
    losses = [fl.loss(t) for t in np.linspace(0, 10, 100)]
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


def test_loss_bound_examples(rng):
    T = random_psd(rng, 5, floor=0.1)
    y = rng.normal(size=5)
    assert D.loss_bound_check(T, y, y, np.linspace(0, 5, 20)) == 0.0
    lam = 0.8
    fl = D.LinearFlow(lam * np.eye(4), rng.normal(size=4), rng.normal(size=4))
    for t in (0.5, 1.0, 4.0):
        assert fl.loss(t) == pytest.approx(math.exp(-2 * lam * t) * fl.loss(0.0), rel=1e-10)
    for _ in range(20):
        n = int(rng.integers(2, 33))
        T = random_psd(rng, n, floor=1e-3)
        f0, y = rng.normal(size=n), rng.normal(size=n)
        l0 = D.LinearFlow(T, f0, y).loss(0.0)
        assert D.loss_bound_check(T, f0, y, np.linspace(0, 20, 50)) <= 1e-9 * l0


def test_gd_zero_targets_zero_outputs():
    cfg = ArchitectureConfig(2, 2, 0.0)
    p = Nw.Params([np.zeros((4, 2)), np.zeros((1, 4))], [np.zeros(4), np.zeros(1)])
    X = TrainingSet(np.array([[1.0, 2.0], [0.5, -1.0]]), np.zeros((2, 1)))
    res = D.gd_train(p, X, A.relu(), cfg, step_size=0.1, steps=20)
    assert np.all(res.losses == 0.0) and len(res.losses) == 21


def test_gd_scalar_closed_form():
    cfg = ArchitectureConfig(1, 1, 0.0)
    p = Nw.Params([np.zeros((1, 1))], [np.zeros(1)])
    X = TrainingSet(np.array([[1.0]]), np.array([[1.0]]))
    res = D.gd_train(p, X, A.identity(), cfg, step_size=0.1, steps=50)
    expect = 0.5 * 0.9 ** (2 * np.arange(51))
    assert np.max(np.abs(res.losses - expect)) <= 1e-12
    assert res.params.weights[0][0, 0] == pytest.approx(1 - 0.9 ** 50, abs=1e-12)


def test_gd_gradient_matches_jacobian(rng):
    cfg = ArchitectureConfig(2, 3, 0.7)
    p = Nw.init_params(cfg, (2, 5, 4, 2), SeededSampler(1))
    X = rng.normal(size=(4, 2))
    Y = rng.normal(size=(4, 2))
    spec = A.parse_activation("tanh")
    loss, gW, gb, out = D.loss_gradient(p, X, Y, spec, cfg)
    J = Nw.jacobian_batch(p, X, spec, cfg)
    g = np.einsum("im,imp->p", out - Y, J)
    flat = Nw.Params([w.copy() for w in gW], [b.copy() for b in gb]).flatten()
    assert np.allclose(flat, g, atol=1e-12, rtol=0)


def test_gd_monotone_at_small_step(rng):
    cfg = ArchitectureConfig(2, 2, 1.0)
    spec = A.parse_activation("tanh")
    X = TrainingSet(rng.normal(size=(6, 2)), rng.normal(size=(6, 1)))
    p = Nw.init_params(cfg, (2, 64, 1), SeededSampler(2))
    lmax = float(eigvalsh(Nw.empirical_ntk(p, X, spec, cfg))[-1])
    res = D.gd_train(p, X, spec, cfg, step_size=0.1 / lmax, steps=300)
    assert np.all(np.diff(res.losses) <= 0.0)


def test_gd_divergence_diagnostic(rng):
    cfg = ArchitectureConfig(2, 2, 1.0)
    X = TrainingSet(rng.normal(size=(4, 2)), rng.normal(size=(4, 1)))
    p = Nw.init_params(cfg, (2, 16, 1), SeededSampler(3))
    with pytest.raises(D.TrainingDivergence, match="step size"):
        D.gd_train(p, X, A.identity(), cfg, step_size=50.0, steps=200)
    with pytest.raises(ValueError):
        D.gd_train(p, X, A.identity(), cfg, step_size=0.0)


def test_gd_default_step_and_early_stop(rng):
    cfg = ArchitectureConfig(2, 2, 1.0)
    spec = A.parse_activation("tanh")
    X = TrainingSet(rng.normal(size=(5, 2)), rng.normal(size=(5, 1)))
    p = Nw.init_params(cfg, (2, 128, 1), SeededSampler(4))
    res = D.gd_train(p, X, spec, cfg, steps=20000, stop_below=1e-3)
    assert res.step_size == pytest.approx(D.default_step_size(p, X, spec, cfg))
    assert res.losses[-1] < 1e-3 and len(res.losses) < 20001


@pytest.fixture(scope="module")
def traj_data():
    rng = np.random.default_rng(1)
    return TrainingSet(rng.normal(size=(5, 2)), rng.normal(size=(5, 1)))


def test_trajectory_tanh_decreasing(traj_data):
    rows = D.trajectory_compare([64, 256, 1024], traj_data, A.parse_activation("tanh"),
                                ArchitectureConfig(2, 2, 1.0), [0.0, 0.5, 1.0, 2.0], SeededSampler(3))
    dev = [r.max_deviation for r in rows]
    assert dev[0] > dev[1] > dev[2]
    assert all(r.per_time[0] == 0.0 for r in rows)


def test_trajectory_identity_small(traj_data):
    rows = D.trajectory_compare([1024], traj_data, A.identity(), ArchitectureConfig(2, 2, 1.0),
                                [0.0, 1.0], SeededSampler(3), replicas=4)
    assert rows[0].per_time[0] == 0.0
    assert rows[0].max_deviation < 0.05
