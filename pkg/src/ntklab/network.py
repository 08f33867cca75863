"""Finite-width fully connected networks in NTK parametrisation.

    f^(1)   = W^(0) x / sqrt(n0) + beta b^(0)
    f^(l+1) = W^(l) s(f^(l)) / sqrt(n_l) + beta b^(l)

Parameters are i.i.d. N(0, rho_w^2) / N(0, rho_b^2); the 1/sqrt(n) factors are
applied in the forward pass, never folded into the initialisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .activations import ActivationSpec
from .gauss import SeededSampler
from .kernels import ArchitectureConfig, TrainingSet


@dataclass(eq=False)
class Params:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {l}: weight {W.shape} and bias {b.shape} do not match")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input width {W.shape[1]} != {self.weights[l - 1].shape[0]}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(W.shape[0] for W in self.weights)

    @property
    def size(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        """W^(0) (row-major), b^(0), W^(1), b^(1), ..."""
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def unflatten(self, theta: np.ndarray) -> "Params":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {theta.shape}")
        Ws, bs, p = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(theta[p:p + W.size].reshape(W.shape).copy())
            p += W.size
            bs.append(theta[p:p + b.size].copy())
            p += b.size
        return Params(Ws, bs)

    def copy(self) -> "Params":
        return Params([W.copy() for W in self.weights], [b.copy() for b in self.biases])


@dataclass(eq=False)
class ForwardTrace:
    preactivations: list[np.ndarray]  # f^(1), ..., f^(L)
    activations: list[np.ndarray]     # x, s(f^(1)), ..., s(f^(L-1))

    @property
    def output(self) -> np.ndarray:
        return self.preactivations[-1]


def _check_widths(cfg: ArchitectureConfig, widths) -> tuple[int, ...]:
    widths = tuple(int(w) for w in widths)
    if len(widths) != cfg.depth + 1:
        raise ValueError(f"depth {cfg.depth} needs {cfg.depth + 1} widths, got {len(widths)}")
    if widths[0] != cfg.n0:
        raise ValueError(f"first width {widths[0]} != n0 = {cfg.n0}")
    if min(widths) < 1:
        raise ValueError("widths must be positive")
    return widths


def init_params(cfg: ArchitectureConfig, widths, sampler: SeededSampler) -> Params:
    """Draw W^(l) then b^(l), layer by layer, from one sampler stream."""
    widths = _check_widths(cfg, widths)
    Ws, bs = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        Ws.append(cfg.rho_w * sampler.standard_normal((n_out, n_in)))
        bs.append(cfg.rho_b * sampler.standard_normal(n_out))
    return Params(Ws, bs)


def forward_batch(params: Params, X: np.ndarray, spec: ActivationSpec, cfg: ArchitectureConfig) -> ForwardTrace:
    """Forward pass for a batch; arrays are ``(N, width)``."""
    a = np.atleast_2d(np.asarray(X, dtype=float))
    if a.shape[1] != params.widths[0]:
        raise ValueError(f"input dimension {a.shape[1]} != {params.widths[0]}")
    pre, acts = [], [a]
    L = len(params.weights)
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        f = a @ W.T / math.sqrt(W.shape[1]) + cfg.beta * b
        pre.append(f)
        if l < L - 1:
            a = spec.value(f)
            acts.append(a)
    return ForwardTrace(pre, acts)


def forward(params: Params, x, spec: ActivationSpec, cfg: ArchitectureConfig) -> ForwardTrace:
    x = np.asarray(x, dtype=float).ravel()
    tr = forward_batch(params, x[None, :], spec, cfg)
    return ForwardTrace([f[0] for f in tr.preactivations], [a[0] for a in tr.activations])


def _backprop(params: Params, tr: ForwardTrace, spec: ActivationSpec) -> list[np.ndarray]:
    """deltas[l] = d f^(L) / d f^(l+1), shape (N, n_L, n_{l+1})."""
    L = len(params.weights)
    N = tr.preactivations[0].shape[0]
    nL = params.widths[-1]
    D = np.broadcast_to(np.eye(nL), (N, nL, nL)).copy()
    deltas = [None] * L
    deltas[L - 1] = D
    for l in range(L - 1, 0, -1):
        W = params.weights[l]
        D = (D @ W) / math.sqrt(W.shape[1]) * spec.derivative(tr.preactivations[l - 1])[:, None, :]
        deltas[l - 1] = D
    return deltas


def jacobian_batch(params: Params, X, spec: ActivationSpec, cfg: ArchitectureConfig) -> np.ndarray:
    """d f^(L)_mu / d theta for every input: shape (N, n_L, P), flatten() order."""
    tr = forward_batch(params, X, spec, cfg)
    deltas = _backprop(params, tr, spec)
    blocks = []
    for l, W in enumerate(params.weights):
        D, a = deltas[l], tr.activations[l]
        gW = D[:, :, :, None] * a[:, None, None, :] / math.sqrt(W.shape[1])
        blocks.append(gW.reshape(D.shape[0], D.shape[1], -1))
        blocks.append(cfg.beta * D)
    return np.concatenate(blocks, axis=2)


def jacobian(params: Params, x, spec: ActivationSpec, cfg: ArchitectureConfig) -> np.ndarray:
    """Gradient of each output component over all parameters, shape (n_L, P)."""
    return jacobian_batch(params, np.asarray(x, dtype=float).ravel()[None, :], spec, cfg)[0]


def empirical_ntk(params: Params, X: TrainingSet | np.ndarray, spec: ActivationSpec,
                  cfg: ArchitectureConfig) -> np.ndarray:
    """Theta_{mu nu}(x_i, x_j) as an (N n_L, N n_L) matrix, row index i*n_L + mu.

    Uses the layerwise factorisation sum_l (D_i D_j^T) (a_i.a_j / n_l + beta^2),
    which equals J J^T without materialising the Jacobian.
    """
    Xa = X.inputs if isinstance(X, TrainingSet) else np.atleast_2d(np.asarray(X, dtype=float))
    tr = forward_batch(params, Xa, spec, cfg)
    deltas = _backprop(params, tr, spec)
    N, nL = Xa.shape[0], params.widths[-1]
    out = np.zeros((N, nL, N, nL))
    b2 = cfg.beta ** 2
    for l, W in enumerate(params.weights):
        a = tr.activations[l]
        G = a @ a.T / W.shape[1] + b2
        D = deltas[l]
        out += np.einsum("iak,jbk->iajb", D, D) * G[:, None, :, None]
    M = out.reshape(N * nL, N * nL)
    return 0.5 * (M + M.T)


def perceptron_kernel(W0: float, b0: float, W1: float, x: float, y: float,
                      spec: ActivationSpec, beta: float = 1.0) -> float:
    """Single hidden unit contribution to the NTK of a 1-n1-1 network.

    (xy + beta^2) W1^2 s'(u) s'(v) + s(u) s(v), with u = W0 x + beta b0 and
    v = W0 y + beta b0. beta = 1 is the plain perceptron.
    """
    u = W0 * x + beta * b0
    v = W0 * y + beta * b0
    ds = spec.derivative
    s = spec.value
    return float((x * y + beta * beta) * W1 * W1 * ds(u) * ds(v) + s(u) * s(v))


def perceptron_ntk(params: Params, x: float, y: float, spec: ActivationSpec, cfg: ArchitectureConfig) -> float:
    """(1/n1) sum_k perceptron_kernel(theta_k) + beta^2 for a 1-n1-1 network."""
    if params.widths[0] != 1 or params.widths[-1] != 1 or len(params.weights) != 2:
        raise ValueError("perceptron path needs widths (1, n1, 1)")
    W0 = params.weights[0][:, 0]
    b0 = params.biases[0]
    W1 = params.weights[1][0]
    n1 = W0.size
    tot = math.fsum(perceptron_kernel(W0[k], b0[k], W1[k], x, y, spec, cfg.beta) for k in range(n1))
    return tot / n1 + cfg.beta ** 2


def _replica_sampler(sampler: SeededSampler, k: int) -> SeededSampler:
    # replica streams live in a block above the parent's own stream id
    return sampler.spawn(((sampler.stream_id << 24) + k + 1) & (2 ** 64 - 1))


def monte_carlo_ntk(cfg: ArchitectureConfig, widths, X: TrainingSet, spec: ActivationSpec,
                    n_samples: int, sampler: SeededSampler) -> tuple[np.ndarray, np.ndarray]:
    """Mean empirical NTK over independent initialisations and its standard error.

    With one sample the standard error is all-NaN (undefined).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    widths = _check_widths(cfg, widths)
    acc = None
    acc2 = None
    for k in range(n_samples):
        params = init_params(cfg, widths, _replica_sampler(sampler, k))
        T = empirical_ntk(params, X, spec, cfg)
        if acc is None:
            acc = np.zeros_like(T)
            acc2 = np.zeros_like(T)
        acc += T
        acc2 += T * T
    mean = acc / n_samples
    if n_samples == 1:
        return mean, np.full_like(mean, np.nan)
    var = np.maximum(acc2 - n_samples * mean * mean, 0.0) / (n_samples - 1)
    return mean, np.sqrt(var / n_samples)


@dataclass(frozen=True)
class SweepRow:
    width: int
    sample_count: int
    frobenius_error_vs_exact: float
    median_stderr: float


def width_sweep(cfg: ArchitectureConfig, hidden_widths, X: TrainingSet, spec: ActivationSpec,
                n_samples: int, sampler: SeededSampler, exact: np.ndarray,
                n_out: int = 1) -> list[SweepRow]:
    """Relative Frobenius error ||mean - exact|| / ||exact|| for equal hidden widths."""
    exact = np.asarray(exact, dtype=float)
    if n_out != 1:
        exact = np.kron(exact, np.eye(n_out))
    rows = []
    for wi, w in enumerate(hidden_widths):
        widths = (cfg.n0,) + (int(w),) * (cfg.depth - 1) + (n_out,)
        sub = sampler.spawn(((sampler.stream_id << 8) + wi + 1) & (2 ** 64 - 1))
        mean, se = monte_carlo_ntk(cfg, widths, X, spec, n_samples, sub)
        err = float(np.linalg.norm(mean - exact) / np.linalg.norm(exact))
        rows.append(SweepRow(int(w), n_samples, err, float(np.median(se))))
    return rows
