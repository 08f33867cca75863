"""Infinite-width kernels over a training set.

Layer recursion (``E`` is over f ~ N(0, Sigma_hat^(l)) restricted to pairs):

    Sigma_hat^(l+1) = rho_w^2 E[s(f) s(f)]   + rho_b^2 beta^2
    Sigma^(l+1)     =         E[s(f) s(f)]   + beta^2
    Sigma_dot^(l+1) = rho_w^2 E[s'(f) s'(f)]
    Theta^(l+1)     = Theta^(l) * Sigma_dot^(l+1) + Sigma^(l+1)

with Theta^(1) = x.y / n0 + beta^2. Two first-layer conventions exist for
Sigma_hat^(1); ``standard`` (the default) is the one that makes Theta agree
with the finite-width NTK of :mod:`ntklab.network`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationSpec
from .gauss import (QuadratureRule, check_pairwise_psd, default_rule, expectation_matrix,
                    relu_closed_form_matrix)

KINDS = ("sigma_hat", "sigma", "sigma_dot", "theta")
CONVENTIONS = ("standard", "paper_verbatim")
METHODS = ("auto", "quadrature", "closed_form")


@dataclass(frozen=True)
class ArchitectureConfig:
    n0: int
    depth: int = 2
    beta: float = 1.0
    rho_w: float = 1.0
    rho_b: float = 1.0
    layer1_convention: str = "standard"

    def __post_init__(self):
        if int(self.n0) != self.n0 or self.n0 < 1:
            raise ValueError(f"n0 must be a positive integer, got {self.n0!r}")
        if int(self.depth) != self.depth or self.depth < 1:
            raise ValueError(f"depth must be a positive integer, got {self.depth!r}")
        for name in ("beta", "rho_w", "rho_b"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.rho_w <= 0 or self.rho_b <= 0:
            raise ValueError("rho_w and rho_b must be strictly positive")
        if self.layer1_convention not in CONVENTIONS:
            raise ValueError(f"layer1_convention must be one of {CONVENTIONS}")

    def with_depth(self, depth: int) -> "ArchitectureConfig":
        return ArchitectureConfig(self.n0, depth, self.beta, self.rho_w, self.rho_b, self.layer1_convention)


def _proportional(x: np.ndarray, y: np.ndarray, rel: float = 1e-12) -> bool:
    xx, yy, xy = float(x @ x), float(y @ y), float(x @ y)
    if xx == 0.0 or yy == 0.0:
        return True
    return xx * yy - xy * xy <= rel * xx * yy


@dataclass(eq=False)
class TrainingSet:
    """Inputs ``(N, n0)`` and optional targets ``(N, n_out)``.

    Repeated inputs are allowed to load (they are reported by
    :meth:`duplicate_pairs`) so that degenerate Gram matrices can be studied.
    """

    inputs: np.ndarray
    targets: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("training set needs a nonempty (N, n0) input array")
        if not np.all(np.isfinite(X)):
            raise ValueError("training inputs must be finite")
        self.inputs = X
        if self.targets is not None:
            Y = np.asarray(self.targets, dtype=float)
            if Y.ndim == 1:
                Y = Y[:, None]
            if Y.shape[0] != X.shape[0]:
                raise ValueError(f"{Y.shape[0]} targets for {X.shape[0]} inputs")
            self.targets = Y

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    @property
    def n0(self) -> int:
        return self.inputs.shape[1]

    def duplicate_pairs(self) -> list[tuple[int, int]]:
        """Index pairs (i < j) with bitwise-equal inputs."""
        X = self.inputs
        return [(i, j) for i in range(self.N) for j in range(i + 1, self.N) if np.array_equal(X[i], X[j])]

    def is_distinct(self) -> bool:
        return not self.duplicate_pairs()

    def proportional_pairs(self, rel: float = 1e-12) -> list[tuple[int, int]]:
        """Pairs with x_i = lambda x_j up to relative collinearity ``rel``.

        A zero input is proportional to everything.
        """
        X = self.inputs
        return [(i, j) for i in range(self.N) for j in range(i + 1, self.N) if _proportional(X[i], X[j], rel)]

    def is_pairwise_non_proportional(self, rel: float = 1e-12) -> bool:
        return not self.proportional_pairs(rel)

    def permuted(self, perm) -> "TrainingSet":
        perm = np.asarray(perm)
        return TrainingSet(self.inputs[perm], None if self.targets is None else self.targets[perm])


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    values: np.ndarray
    kind: str
    layer: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.layer < 1:
            raise ValueError("layer must be >= 1")
        V = np.asarray(self.values, dtype=float)
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise ValueError("kernel matrix must be square")
        V = np.triu(V) + np.triu(V, 1).T
        V.setflags(write=False)
        object.__setattr__(self, "values", V)

    @property
    def N(self) -> int:
        return self.values.shape[0]


def _resolve_method(spec: ActivationSpec, method: str) -> str:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    closed = spec.kind in ("relu", "identity")
    if method == "closed_form" and not closed:
        raise ValueError(f"no closed form for activation {spec.kind!r}")
    if method == "auto":
        return "closed_form" if closed else "quadrature"
    return method


def _expectations(K: np.ndarray, spec: ActivationSpec, rule, method: str, which: str) -> np.ndarray:
    """E[s s] (which='value') or E[s' s'] (which='derivative') over N(0, K)."""
    method = _resolve_method(spec, method)
    if method == "closed_form":
        if spec.kind == "identity":
            check_pairwise_psd(K)
            return np.array(K, dtype=float) if which == "value" else np.ones_like(K)
        return relu_closed_form_matrix(K, derivative=(which == "derivative"))
    f = spec.value if which == "value" else spec.derivative
    return expectation_matrix(K, f, f, rule or default_rule())


def sigma_hat_layer1(X: TrainingSet, cfg: ArchitectureConfig) -> KernelMatrix:
    G = X.inputs @ X.inputs.T
    if cfg.layer1_convention == "standard":
        V = cfg.rho_w ** 2 * G / cfg.n0 + cfg.rho_b ** 2 * cfg.beta ** 2
    else:
        V = cfg.rho_w ** 2 * G / math.sqrt(cfg.n0) + cfg.beta * cfg.rho_b ** 2
    return KernelMatrix(V, "sigma_hat", 1)


def theta_layer1(X: TrainingSet, cfg: ArchitectureConfig) -> KernelMatrix:
    return KernelMatrix(X.inputs @ X.inputs.T / cfg.n0 + cfg.beta ** 2, "theta", 1)


def _check_prev(prev: KernelMatrix):
    if prev.kind != "sigma_hat":
        raise ValueError(f"expected a sigma_hat matrix, got {prev.kind}")


def sigma_hat_next(prev: KernelMatrix, spec: ActivationSpec, cfg: ArchitectureConfig,
                   rule: QuadratureRule | None = None, method: str = "auto") -> KernelMatrix:
    _check_prev(prev)
    E = _expectations(prev.values, spec, rule, method, "value")
    return KernelMatrix(cfg.rho_w ** 2 * E + cfg.rho_b ** 2 * cfg.beta ** 2, "sigma_hat", prev.layer + 1)


def sigma_next(prev_hat: KernelMatrix, spec: ActivationSpec, cfg: ArchitectureConfig,
               rule: QuadratureRule | None = None, method: str = "auto") -> KernelMatrix:
    _check_prev(prev_hat)
    E = _expectations(prev_hat.values, spec, rule, method, "value")
    return KernelMatrix(E + cfg.beta ** 2, "sigma", prev_hat.layer + 1)


def sigma_dot_next(prev_hat: KernelMatrix, spec: ActivationSpec, cfg: ArchitectureConfig,
                   rule: QuadratureRule | None = None, method: str = "auto") -> KernelMatrix:
    _check_prev(prev_hat)
    E = _expectations(prev_hat.values, spec, rule, method, "derivative")
    return KernelMatrix(cfg.rho_w ** 2 * E, "sigma_dot", prev_hat.layer + 1)


@dataclass
class KernelStack:
    """All kernels up to a depth; ``sigma``/``sigma_dot`` start at layer 2."""

    sigma_hat: list[KernelMatrix]
    sigma: list[KernelMatrix]
    sigma_dot: list[KernelMatrix]
    theta: list[KernelMatrix]

    def all(self) -> list[KernelMatrix]:
        out = []
        for layer in range(1, len(self.theta) + 1):
            for seq in (self.sigma_hat, self.sigma, self.sigma_dot, self.theta):
                out.extend(m for m in seq if m.layer == layer)
        return out


def kernel_stack(X: TrainingSet, spec: ActivationSpec, cfg: ArchitectureConfig,
                 rule: QuadratureRule | None = None, L: int | None = None,
                 method: str = "auto") -> KernelStack:
    L = cfg.depth if L is None else int(L)
    if L < 1:
        raise ValueError("depth must be >= 1")
    if X.n0 != cfg.n0:
        raise ValueError(f"inputs have dimension {X.n0}, config says n0={cfg.n0}")
    hat = [sigma_hat_layer1(X, cfg)]
    theta = [theta_layer1(X, cfg)]
    sig, dot = [], []
    b2 = cfg.beta ** 2
    for layer in range(2, L + 1):
        K = hat[-1].values
        Ev = _expectations(K, spec, rule, method, "value")
        Ed = _expectations(K, spec, rule, method, "derivative")
        s = KernelMatrix(Ev + b2, "sigma", layer)
        sd = KernelMatrix(cfg.rho_w ** 2 * Ed, "sigma_dot", layer)
        sig.append(s)
        dot.append(sd)
        theta.append(KernelMatrix(theta[-1].values * sd.values + s.values, "theta", layer))
        hat.append(KernelMatrix(cfg.rho_w ** 2 * Ev + cfg.rho_b ** 2 * b2, "sigma_hat", layer))
    return KernelStack(hat, sig, dot, theta)


def theta_recursion(X: TrainingSet, spec: ActivationSpec, cfg: ArchitectureConfig,
                    rule: QuadratureRule | None = None, L: int | None = None,
                    method: str = "auto") -> list[KernelMatrix]:
    """Theta^(1..L) over ``X``; ``L`` defaults to ``cfg.depth``."""
    return kernel_stack(X, spec, cfg, rule, L, method).theta
