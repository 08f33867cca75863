"""Training dynamics: exact linearised flow under a fixed kernel, and gradient descent.

Loss is (1/2) sum_j ||f(x_j) - y_j||^2 throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationSpec
from .gauss import SeededSampler
from .kernels import ArchitectureConfig, KernelMatrix, TrainingSet, theta_recursion
from .linalg import eigh, eigvalsh
from .network import Params, _backprop, empirical_ntk, forward_batch, init_params

DIVERGENCE_LOSS = 1e12


class TrainingDivergence(ArithmeticError):
    pass


def quadratic_loss(outputs: np.ndarray, targets: np.ndarray) -> float:
    r = np.asarray(outputs, dtype=float) - np.asarray(targets, dtype=float)
    return 0.5 * float(np.sum(r * r))


def _col(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    outputs: np.ndarray
    loss: float


class LinearFlow:
    """f(t) = y + V exp(-Lambda t) V^T (f0 - y), one eigendecomposition reused for all t."""

    def __init__(self, theta, f0, targets):
        T = np.asarray(theta.values if isinstance(theta, KernelMatrix) else theta, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValueError("theta must be square")
        if np.max(np.abs(T - T.T)) > 1e-12 * max(float(np.max(np.abs(T))), 1e-300):
            raise ValueError("theta must be symmetric")
        self.lam, self.V = eigh(0.5 * (T + T.T))
        if self.lam.size and self.lam[0] < -1e-10 * max(self.lam[-1], 0.0):
            from .gauss import NotPSDError

            raise NotPSDError(f"theta has eigenvalue {float(self.lam[0])!r} below -1e-10 * lambda_max")
        self.lam = np.maximum(self.lam, 0.0)
        self.y = _col(targets)
        self.f0 = _col(f0)
        if self.f0.shape != self.y.shape or self.f0.shape[0] != T.shape[0]:
            raise ValueError(f"f0 {self.f0.shape} and targets {self.y.shape} must be (N, n_out) with N={T.shape[0]}")
        self.c0 = self.V.T @ (self.f0 - self.y)

    def propagator(self, t: float) -> np.ndarray:
        """exp(-theta t)."""
        return (self.V * np.exp(-self.lam * t)) @ self.V.T

    def state(self, t: float) -> FlowState:
        if not t >= 0:
            raise ValueError("t must be >= 0")
        if t == 0:
            out = self.f0.copy()
        else:
            out = self.y + self.V @ (np.exp(-self.lam * t)[:, None] * self.c0)
        return FlowState(float(t), out, quadratic_loss(out, self.y))

    def loss(self, t: float) -> float:
        """Loss straight from the spectral coordinates (no cancellation against y)."""
        if not t >= 0:
            raise ValueError("t must be >= 0")
        c = np.exp(-self.lam * t)[:, None] * self.c0
        return 0.5 * float(np.sum(c * c))


def linearized_flow(theta, f0, targets, t: float) -> FlowState:
    if t < 0:
        raise ValueError("t must be >= 0")
    return LinearFlow(theta, f0, targets).state(t)


def loss_bound_check(theta, f0, targets, times) -> float:
    """max_t [loss(t) - exp(-2 lambda_min t) loss(0)], clipped at 0."""
    flow = LinearFlow(theta, f0, targets)
    lmin = float(flow.lam[0])
    l0 = flow.loss(0.0)
    worst = 0.0
    for t in times:
        worst = max(worst, flow.loss(float(t)) - math.exp(-2.0 * lmin * float(t)) * l0)
    return worst


# --------------------------------------------------------------------------
# gradient descent


def loss_gradient(params: Params, X: np.ndarray, Y: np.ndarray, spec: ActivationSpec,
                  cfg: ArchitectureConfig) -> tuple[float, list[np.ndarray], list[np.ndarray], np.ndarray]:
    """(loss, dW, db, outputs) for the quadratic loss, by reverse mode."""
    tr = forward_batch(params, X, spec, cfg)
    out = tr.output
    R = out - Y
    gWs, gbs = [], []
    deltas = _backprop(params, tr, spec)
    for l, W in enumerate(params.weights):
        # e[i, k] = sum_mu R[i, mu] D[i, mu, k]
        e = np.einsum("im,imk->ik", R, deltas[l])
        gWs.append(e.T @ tr.activations[l] / math.sqrt(W.shape[1]))
        gbs.append(cfg.beta * e.sum(axis=0))
    return 0.5 * float(np.sum(R * R)), gWs, gbs, out


def default_step_size(params: Params, X: TrainingSet, spec: ActivationSpec, cfg: ArchitectureConfig) -> float:
    """1 / (2 lambda_max) of the empirical NTK at these parameters."""
    lmax = float(eigvalsh(empirical_ntk(params, X, spec, cfg))[-1])
    if lmax <= 0:
        raise ValueError("empirical NTK vanishes; no default step size")
    return 0.5 / lmax


@dataclass(eq=False)
class TrainResult:
    losses: np.ndarray   # losses[k] = loss after k steps
    params: Params
    step_size: float
    outputs: dict = field(default_factory=dict)


def gd_train(params: Params, X: TrainingSet, spec: ActivationSpec, cfg: ArchitectureConfig,
             step_size: float | None = None, steps: int = 1000, stop_below: float | None = None,
             record_outputs_at=None) -> TrainResult:
    """Full-batch forward-Euler gradient descent on the quadratic loss.

    ``step_size=None`` uses :func:`default_step_size`. ``stop_below`` ends
    training early once the loss falls under it. ``record_outputs_at`` is an
    optional set of step indices whose network outputs are kept in
    ``result.outputs``.
    """
    if X.targets is None:
        raise ValueError("training needs targets")
    if step_size is None:
        step_size = default_step_size(params, X, spec, cfg)
    if not step_size > 0:
        raise ValueError("step_size must be > 0")
    p = params.copy()
    Xa, Y = X.inputs, X.targets
    record = set(int(k) for k in record_outputs_at) if record_outputs_at is not None else set()
    outputs = {}
    losses = []
    for k in range(steps + 1):
        loss, gW, gb, out = loss_gradient(p, Xa, Y, spec, cfg)
        if k in record:
            outputs[k] = out.copy()
        losses.append(loss)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise TrainingDivergence(
                f"loss {loss:.3e} at step {k} exceeds {DIVERGENCE_LOSS:.0e}; step size {step_size:.6g} "
                f"is too large (try <= {default_step_size(params, X, spec, cfg):.6g})")
        if k == steps or (stop_below is not None and loss < stop_below):
            break
        for W, g in zip(p.weights, gW):
            W -= step_size * g
        for b, g in zip(p.biases, gb):
            b -= step_size * g
    return TrainResult(np.array(losses), p, float(step_size), outputs)


@dataclass(frozen=True)
class TrajectoryRow:
    width: int
    replicas: int
    max_deviation: float                # mean over replicas of max_{t, i} |f_gd - f_lin|
    per_time: tuple[float, ...]         # mean over replicas, per requested time


def trajectory_compare(widths, X: TrainingSet, spec: ActivationSpec, cfg: ArchitectureConfig,
                       times, sampler: SeededSampler, replicas: int = 3,
                       step_fraction: float = 0.05) -> list[TrajectoryRow]:
    """Gradient descent at finite width vs linear flow under the exact Theta^(L).

    Both start from the network's own initial outputs. The step size is
    ``step_fraction / lambda_max(Theta)``; time t maps to round(t / step) steps
    and the flow is evaluated at that discretised time.
    """
    if X.targets is None:
        raise ValueError("trajectory comparison needs targets")
    Theta = theta_recursion(X, spec, cfg)[-1].values
    lmax = float(eigvalsh(Theta)[-1])
    eta = step_fraction / lmax
    times = [float(t) for t in times]
    ks = [int(round(t / eta)) for t in times]
    if not ks:
        raise ValueError("need at least one time")
    rows = []
    for wi, w in enumerate(widths):
        dev = np.zeros(len(times))
        for r in range(replicas):
            sub = sampler.spawn(((sampler.stream_id << 16) + (wi << 8) + r + 1) & (2 ** 64 - 1))
            shape = (cfg.n0,) + (int(w),) * (cfg.depth - 1) + (X.targets.shape[1],)
            params = init_params(cfg, shape, sub)
            res = gd_train(params, X, spec, cfg, eta, max(ks), record_outputs_at=ks)
            f0 = forward_batch(params, X.inputs, spec, cfg).output
            flow = LinearFlow(Theta, f0, X.targets)
            for ti, k in enumerate(ks):
                lin = flow.state(k * eta).outputs
                dev[ti] += float(np.max(np.abs(res.outputs[k] - lin)))
        dev /= replicas
        rows.append(TrajectoryRow(int(w), replicas, float(np.max(dev)), tuple(float(v) for v in dev)))
    return rows
