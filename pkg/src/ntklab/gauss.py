"""Bivariate Gaussian expectations, seeded normal sampling, PSD factors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import ndtri

from . import _accel, _quad
from .activations import Evaluator

DEFAULT_ORDER = 64
_RADIUS = 10.0  # radial cutoff; Gaussian tail mass beyond is ~exp(-50)
_PANEL_NODES = 16


class NotPSDError(ValueError):
    """A covariance or kernel matrix is not positive semi-definite."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


@dataclass(frozen=True)
class Cov2:
    a: float
    b: float
    c: float

    def __post_init__(self):
        a, b, c = float(self.a), float(self.b), float(self.c)
        scale = max(abs(a), abs(b), 1e-300)
        if not all(math.isfinite(v) for v in (a, b, c)):
            raise NotPSDError(f"non-finite covariance entries ({a}, {b}, {c})")
        if a < -1e-12 * scale or b < -1e-12 * scale:
            raise NotPSDError(f"negative variance in Cov2(a={a}, b={b})")
        a, b = max(a, 0.0), max(b, 0.0)
        if c * c > a * b + 1e-12 * scale * scale:
            raise NotPSDError(f"Cov2(a={a}, b={b}, c={c}) violates c^2 <= ab")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature tables derived from one ``order`` parameter.

    ``nodes``/``weights`` are the Gauss-Hermite rule normalised to the standard
    normal (weights sum to 1). The polar-sector tables used by
    :func:`expectation_pair` have 2*order radial nodes (order/8 panels of 16
    Gauss-Legendre points on [0, 10]) and order/2 angular nodes per sector.
    """

    order: int = DEFAULT_ORDER

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("quadrature order must be >= 1")

    @cached_property
    def _hermite(self):
        x, w = np.polynomial.hermite.hermgauss(self.order)
        return x, w

    @property
    def raw_weights(self) -> np.ndarray:
        """Physicists' Gauss-Hermite weights (sum to sqrt(pi))."""
        return self._hermite[1]

    @property
    def nodes(self) -> np.ndarray:
        return math.sqrt(2.0) * self._hermite[0]

    @property
    def weights(self) -> np.ndarray:
        return self._hermite[1] / math.sqrt(math.pi)

    @cached_property
    def radial(self):
        panels = max(1, self.order // 8)
        x, w = np.polynomial.legendre.leggauss(_PANEL_NODES)
        edges = np.linspace(0.0, _RADIUS, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        r = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        w = (half[:, None] * w[None, :]).ravel()
        # (radial nodes, weights with r e^{-r^2/2}, half-line weights with phi(r))
        return r, w * r * np.exp(-0.5 * r * r), w * np.exp(-0.5 * r * r) / math.sqrt(2.0 * math.pi)

    @cached_property
    def angular(self):
        return np.polynomial.legendre.leggauss(max(2, self.order // 2))

    def tables(self):
        r, rw, lw = self.radial
        an, aw = self.angular
        return r, rw, lw, an, aw


_DEFAULT_RULE = QuadratureRule()


def default_rule() -> QuadratureRule:
    return _DEFAULT_RULE


def _is_kernel_evaluator(f) -> bool:
    return isinstance(f, Evaluator)


def expectation_pair(cov: Cov2, g, h, rule: QuadratureRule | None = None) -> float:
    """E[g(u) h(v)] for (u, v) ~ N(0, [[a, c], [c, b]]).

    ``g`` and ``h`` are :class:`Evaluator` objects (fast path) or any
    vectorised callables (numpy path).
    """
    if not isinstance(cov, Cov2):
        cov = Cov2(*cov)
    rule = rule or _DEFAULT_RULE
    tabs = rule.tables()
    if _accel.USE_NUMBA and _is_kernel_evaluator(g) and _is_kernel_evaluator(h):
        return float(_quad._expect_nb(g.code, g.coeffs, h.code, h.coeffs, cov.a, cov.b, cov.c, *tabs))
    return _quad.expect_np(g, h, cov.a, cov.b, cov.c, *tabs)


def expectation_hermite(cov: Cov2, g, h, rule: QuadratureRule | None = None) -> float:
    """Tensor Gauss-Hermite estimate of E[g(u) h(v)]; kept for comparison only.

    Converges slowly for ReLU-type kinks and steep sigmoids, which is why
    :func:`expectation_pair` uses the polar-sector rule.
    """
    if not isinstance(cov, Cov2):
        cov = Cov2(*cov)
    rule = rule or _DEFAULT_RULE
    z, w = rule.nodes, rule.weights
    a, b, c = cov.a, cov.b, cov.c
    if a == 0.0:
        return float(g(np.zeros(1))[0]) * float(w @ h(math.sqrt(b) * z))
    sa = math.sqrt(a)
    s = math.sqrt(max(b - c * c / a, 0.0))
    u = sa * z[:, None] * np.ones_like(z)[None, :]
    v = (c / sa) * z[:, None] + s * z[None, :]
    return float(w @ (g(u) * h(v)) @ w)


def expectation_matrix(K: np.ndarray, g, h, rule: QuadratureRule | None = None) -> np.ndarray:
    """Matrix of E[g(f_i) h(f_j)] for f ~ N(0, K); upper triangle mirrored.

    Raises :class:`NotPSDError` naming the first offending (i, j) entry.
    """
    K = np.ascontiguousarray(K, dtype=float)
    check_pairwise_psd(K)
    rule = rule or _DEFAULT_RULE
    tabs = rule.tables()
    if _accel.USE_NUMBA and _is_kernel_evaluator(g) and _is_kernel_evaluator(h):
        return _quad._assemble_nb(K, g.code, g.coeffs, h.code, h.coeffs, *tabs)
    return _quad.assemble_np(K, g, h, *tabs)


def check_pairwise_psd(K: np.ndarray) -> None:
    """Every 2x2 principal minor must be a valid :class:`Cov2`."""
    d = np.diag(K)
    scale = max(float(np.max(np.abs(d))) if d.size else 0.0, 1e-300)
    bad = np.flatnonzero(d < -1e-12 * scale)
    if bad.size:
        i = int(bad[0])
        raise NotPSDError(f"negative diagonal entry K[{i},{i}] = {float(d[i])!r}", (i, i))
    dd = np.maximum(d, 0.0)
    excess = K * K - np.outer(dd, dd) - 1e-12 * np.maximum.outer(dd, dd) ** 2
    np.fill_diagonal(excess, -1.0)
    if np.any(excess > 0) or not np.all(np.isfinite(K)):
        idx = np.argwhere((excess > 0) | ~np.isfinite(K))
        i, j = (int(v) for v in idx[0])
        raise NotPSDError(
            f"entry ({i},{j}) = {float(K[i, j])!r} violates |K_ij| <= sqrt(K_ii K_jj) "
            f"(K_ii={float(K[i, i])!r}, K_jj={float(K[j, j])!r})", (i, j))


def relu_expectation_closed_form(cov: Cov2) -> float:
    """Arc-cosine formula for E[relu(u) relu(v)]."""
    if not isinstance(cov, Cov2):
        cov = Cov2(*cov)
    if cov.a <= 0.0 or cov.b <= 0.0:
        raise ValueError("closed form needs strictly positive variances")
    root = math.sqrt(cov.a * cov.b)
    theta = math.acos(min(1.0, max(-1.0, cov.c / root)))
    return root / (2.0 * math.pi) * (math.sin(theta) + (math.pi - theta) * math.cos(theta))


def relu_closed_form_matrix(K: np.ndarray, derivative: bool = False) -> np.ndarray:
    """Arc-cosine kernels over a PSD matrix: E[relu relu] or E[step step].

    Zero-variance rows take their limits (both are 0 there).
    """
    K = np.asarray(K, dtype=float)
    check_pairwise_psd(K)
    d = np.maximum(np.diag(K), 0.0)
    root = np.sqrt(np.outer(d, d))
    np.fill_diagonal(root, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(root > 0, K / np.where(root > 0, root, 1.0), 1.0)
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    np.fill_diagonal(theta, 0.0)
    if derivative:
        out = (math.pi - theta) / (2.0 * math.pi)
        out[root == 0] = 0.0
    else:
        out = root / (2.0 * math.pi) * (np.sin(theta) + (math.pi - theta) * np.cos(theta))
    return np.triu(out) + np.triu(out, 1).T


# --------------------------------------------------------------------------
# sampling

_TWO_M53 = 2.0 ** -53


class SeededSampler:
    """Counter-based normal stream keyed by ``(seed, stream_id)``.

    Uniforms come from Philox-4x64 raw words (53 high bits, centred in their
    cell so they never hit 0 or 1); normals by the inverse CDF. Two samplers
    with the same key produce the same sequence on every platform.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & (2 ** 64 - 1)
        self.stream_id = int(stream_id) & (2 ** 64 - 1)
        self.reset()

    def reset(self) -> None:
        self._bits = np.random.Philox(key=self.seed | (self.stream_id << 64))

    def spawn(self, stream_id: int) -> "SeededSampler":
        """Independent stream sharing this sampler's seed."""
        return SeededSampler(self.seed, stream_id)

    def uniform(self, size) -> np.ndarray:
        n = int(np.prod(size))
        raw = self._bits.random_raw(n) >> np.uint64(11)
        return ((raw.astype(np.float64) + 0.5) * _TWO_M53).reshape(size)

    def standard_normal(self, size) -> np.ndarray:
        return ndtri(self.uniform(size))

    def __repr__(self):
        return f"SeededSampler(seed={self.seed}, stream_id={self.stream_id})"


def sample_normal_vector(sampler: SeededSampler, cov_factor: np.ndarray) -> np.ndarray:
    L = np.asarray(cov_factor, dtype=float)
    return L @ sampler.standard_normal(L.shape[1])


def psd_square_root(matrix: np.ndarray) -> np.ndarray:
    """Factor F with F F^T = matrix, via pivoted Cholesky (see ``linalg``)."""
    from .linalg import psd_factor

    return psd_factor(matrix)
