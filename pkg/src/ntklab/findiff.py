"""Finite-difference calculus, polynomial detection and non-alignment probes.

Conventions: Delta_h f(x) = f(x + h) - f(x), and for mixed increments
Delta^{n+1}_{(h, h_{n+1})} f(x) = Delta^n_h f(x + h_{n+1}) - Delta^n_h f(x).
Identity checkers return left side minus right side; with ``with_scale=True``
they also return max |f| over every point they evaluated, the natural scale
for the residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .activations import ActivationSpec
from .gauss import SeededSampler

Fn = Callable[[float], float]


def _f(f, x: float) -> float:
    return float(f(x))


class _Recorder:
    """Wraps f and remembers max |f| over the points it was asked for."""

    def __init__(self, f):
        self.f = f
        self.scale = 0.0

    def __call__(self, x):
        v = float(self.f(x))
        self.scale = max(self.scale, abs(v))
        return v


# --------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class IncrementVector:
    h: tuple[float, ...]

    def __post_init__(self):
        h = tuple(float(v) for v in np.atleast_1d(self.h))
        if not all(math.isfinite(v) for v in h):
            raise ValueError("increments must be finite")
        object.__setattr__(self, "h", h)

    def __len__(self):
        return len(self.h)


def nth_difference(f: Fn, x: float, h) -> float:
    """Mixed-increment difference by the defining recursion (2^n evaluations)."""
    hs = h.h if isinstance(h, IncrementVector) else tuple(float(v) for v in np.atleast_1d(h))

    def rec(x0: float, m: int) -> float:
        if m == 0:
            return _f(f, x0)
        return rec(x0 + hs[m - 1], m - 1) - rec(x0, m - 1)

    return rec(float(x), len(hs))


def uniform_nth_difference(f: Fn, x: float, h: float, n: int) -> float:
    """sum_k (-1)^(n-k) C(n,k) f(x + k h)."""
    if n < 0:
        raise ValueError("order must be >= 0")
    terms = [(-1) ** (n - k) * math.comb(n, k) * _f(f, x + k * h) for k in range(n + 1)]
    return math.fsum(terms)


def kh_coefficients(n: int, k: int) -> tuple[int, ...]:
    """a^(n)_j, j = 0..n(k-1): the n-fold convolution of k ones (exact integers)."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be >= 1")
    a = [1] * k
    for _ in range(n - 1):
        out = [0] * (len(a) + k - 1)
        for j, v in enumerate(a):
            for i in range(k):
                out[j + i] += v
        a = out
    return tuple(a)


def check_kh_identity(p: Fn, y: float, h: float, n: int, k: int, with_scale: bool = False):
    """Delta^n_{kh} p(y) - sum_j a^(n)_j Delta^n_h p(y + j h)."""
    rec = _Recorder(p)
    lhs = uniform_nth_difference(rec, y, k * h, n)
    rhs = math.fsum(a * uniform_nth_difference(rec, y + j * h, h, n)
                    for j, a in enumerate(kh_coefficients(n, k)))
    r = lhs - rhs
    return (r, rec.scale) if with_scale else r


def check_leibniz_identity(g: Fn, x: float, h: float, n: int, with_scale: bool = False):
    """Delta^{n+1}_h (t g(t))(x) - [x Delta^{n+1}_h g(x) + (n+1) h Delta^n_h g(x+h)]."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rec = _Recorder(g)
    lhs = uniform_nth_difference(lambda t: t * rec(t), x, h, n + 1)
    rhs = x * uniform_nth_difference(rec, x, h, n + 1) + (n + 1) * h * uniform_nth_difference(rec, x + h, h, n)
    r = lhs - rhs
    scale = rec.scale * max(1.0, abs(x) + (n + 1) * abs(h))
    return (r, scale) if with_scale else r


def chain_shift_check(f: Fn, alpha: float, beta: float, x: float, y: float, h: float,
                      with_scale: bool = False):
    """Difference in y of f(alpha x + beta y) minus (Delta_{beta h} f)(alpha x + beta y)."""
    rec = _Recorder(f)
    lhs = rec(alpha * x + beta * (y + h)) - rec(alpha * x + beta * y)
    t = alpha * x + beta * y
    rhs = rec(t + beta * h) - rec(t)
    r = lhs - rhs
    return (r, rec.scale) if with_scale else r


# --------------------------------------------------------------------------
# polynomial detection


@dataclass(frozen=True)
class DegreeVerdict:
    polynomial: bool
    degree: int | None       # None when non-polynomial
    order_tested: int        # smallest vanishing order n, or max_order
    max_abs_difference: float
    scale: float

    def as_dict(self) -> dict:
        return {"polynomial": self.polynomial, "degree": self.degree, "order_tested": self.order_tested,
                "max_abs_difference": self.max_abs_difference, "scale": self.scale}


def polynomial_degree_estimate(f: Fn, domain: tuple[float, float], max_order: int,
                               tol: float = 1e-7, stencils: int = 200, seed: int = 0) -> DegreeVerdict:
    """Smallest n <= max_order with |Delta^n_h f| <= tol * max|f| on every stencil.

    For each n, ``stencils`` stencils with h log-uniform in
    [1e-3 |D|, min(0.25 |D|, |D| / n)] and base point uniform so the whole
    stencil stays inside D. The scale max|f| is taken over a 1001-point grid
    of D plus every stencil point.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise ValueError("domain must be an interval lo < hi")
    width = hi - lo
    sampler = SeededSampler(seed, 0xD1FF)
    grid = np.linspace(lo, hi, 1001)
    fv = np.vectorize(lambda t: float(f(t)))
    scale = float(np.max(np.abs(fv(grid))))
    plans = []
    for n in range(1, max_order + 1):
        hmax = min(0.25 * width, width / n)
        hmin = min(1e-3 * width, hmax)
        u = sampler.uniform((stencils, 2))
        h = hmin * (hmax / hmin) ** u[:, 0]
        x = lo + u[:, 1] * (width - n * h)
        pts = x[:, None] + np.arange(n + 1)[None, :] * h[:, None]
        vals = fv(pts)
        scale = max(scale, float(np.max(np.abs(vals))))
        coef = np.array([(-1) ** (n - k) * math.comb(n, k) for k in range(n + 1)], dtype=float)
        plans.append(float(np.max(np.abs(vals @ coef))))
    thresh = tol * max(scale, 1e-300)
    for n, worst in enumerate(plans, start=1):
        if worst <= thresh:
            return DegreeVerdict(True, n - 1, n, worst, scale)
    return DegreeVerdict(False, None, max_order, plans[-1], scale)


# --------------------------------------------------------------------------
# probes and non-alignment


@dataclass(frozen=True, eq=False)
class ProbePair:
    z: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        w = np.asarray(self.w, dtype=float).ravel()
        if z.shape != w.shape:
            raise ValueError("z and w must have equal length")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)

    @property
    def N(self) -> int:
        return self.z.size


def total_nonalignment_check(pair: ProbePair) -> tuple[bool, tuple[int, int] | None]:
    """(True, None) or (False, (i, j)) with 1-based indices of the first aligned pair.

    Pair (i, j) is aligned when |z_i w_j - z_j w_i| <= 1e-12 (|z_i w_j| + |z_j w_i|).
    """
    z, w = pair.z, pair.w
    for i in range(pair.N):
        for j in range(i + 1, pair.N):
            a, b = z[i] * w[j], z[j] * w[i]
            if abs(a - b) <= 1e-12 * (abs(a) + abs(b)):
                return False, (i + 1, j + 1)
    return True, None


DEFAULT_GRID = np.linspace(-3.0, 3.0, 41)


def linear_combination_residual(spec: ActivationSpec | Fn, u, pair: ProbePair, grid=None) -> float:
    """max over (t1, t2) in grid x grid of |sum_i u_i s(t1 z_i + t2 w_i)|.

    ``grid`` is a 1-D lattice used on both axes or an explicit (M, 2) array.
    """
    u = np.asarray(u, dtype=float).ravel()
    if u.size != pair.N:
        raise ValueError("u must have one entry per probe coordinate")
    if not np.any(u):
        raise ValueError("u must be nonzero")
    g = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    if g.ndim == 1:
        t1, t2 = np.meshgrid(g, g, indexing="ij")
        T = np.stack([t1.ravel(), t2.ravel()], axis=1)
    else:
        T = g
    s = spec.value if isinstance(spec, ActivationSpec) else np.vectorize(lambda t: float(spec(t)))
    args = T[:, :1] * pair.z[None, :] + T[:, 1:2] * pair.w[None, :]
    return float(np.max(np.abs(s(args) @ u)))


def moment_matrix(degree: int, pair: ProbePair) -> np.ndarray:
    """Rows [z_i^a w_i^b] over a + b <= degree (graded order)."""
    cols = [(a, t - a) for t in range(degree + 1) for a in range(t, -1, -1)]
    return np.stack([pair.z ** a * pair.w ** b for a, b in cols], axis=1)


def construct_degenerate_direction(degree: int, pair: ProbePair) -> np.ndarray | None:
    """Unit u with sum_i u_i q(z_i, w_i) = 0 for every bivariate q of degree <= ``degree``.

    Any degree-``degree`` polynomial activation then satisfies
    sum_i u_i s(t1 z_i + t2 w_i) = 0 identically. Returns None when N does
    not exceed the monomial count (d+1)(d+2)/2.
    """
    ok, where = total_nonalignment_check(pair)
    if not ok:
        raise ValueError(f"probe pair is aligned at indices {where}")
    dim = (degree + 1) * (degree + 2) // 2
    if pair.N <= dim:
        return None
    M = moment_matrix(degree, pair)
    colscale = np.max(np.abs(M), axis=0)
    colscale[colscale == 0] = 1.0
    _, _, Vt = np.linalg.svd((M / colscale).T)
    u = Vt[-1]
    k = int(np.argmax(np.abs(u)))
    return u / np.linalg.norm(u) * (1.0 if u[k] > 0 else -1.0)


def _vandermonde(x: float, r: int) -> np.ndarray:
    return float(x) ** np.arange(r, dtype=float)


def _all_distinct(v: np.ndarray) -> bool:
    s = np.sort(v)
    return bool(np.all(np.diff(s) != 0))


def _check_rows(B: np.ndarray) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] == 0:
        raise ValueError("B must be a nonempty 2-D array")
    return B


def _repeated_row(B: np.ndarray):
    for i in range(B.shape[0]):
        for j in range(i + 1, B.shape[0]):
            if np.array_equal(B[i], B[j]):
                return i, j
    return None


def _int_search(accept, limit: int):
    for x in range(1, limit + 1):
        if accept(float(x)):
            return float(x)
    raise ArithmeticError("integer probe search exhausted; rows too close for double precision")


def distinct_combination_probe(B, search_limit: int = 100000) -> np.ndarray:
    """Vandermonde y(x) = (1, x, ..., x^(r-1)) with B y pairwise distinct.

    x is the first integer 1, 2, 3, ... that separates every row.
    """
    B = _check_rows(B)
    bad = _repeated_row(B)
    if bad is not None:
        raise ValueError(f"rows {bad[0]} and {bad[1]} of B are identical")
    r = B.shape[1]
    x = _int_search(lambda t: _all_distinct(B @ _vandermonde(t, r)), search_limit)
    return _vandermonde(x, r)


def nonaligned_pair_probe(B, search_limit: int = 100000) -> tuple[ProbePair, np.ndarray, np.ndarray]:
    """(pair, y1, y2): z = B y2, w = B y1 totally non-aligned.

    Stage one picks x1 with every w_i = p_i(x1) nonzero; stage two picks x2
    separating the ratios z_i / w_i, which is exactly non-alignment.
    """
    B = _check_rows(B)
    N, r = B.shape
    for i in range(N):
        if not np.any(B[i]):
            raise ValueError(f"row {i} of B is zero, hence proportional to every row")
        for j in range(i + 1, N):
            if _rows_proportional(B[i], B[j]):
                raise ValueError(f"rows {i} and {j} of B are proportional")

    def w_ok(t):
        return bool(np.all(B @ _vandermonde(t, r) != 0))

    x1 = _int_search(w_ok, search_limit)
    y1 = _vandermonde(x1, r)
    w = B @ y1

    def z_ok(t):
        pair = ProbePair(B @ _vandermonde(t, r), w)
        return total_nonalignment_check(pair)[0]

    x2 = _int_search(z_ok, search_limit)
    y2 = _vandermonde(x2, r)
    return ProbePair(B @ y2, w), y1, y2


def _rows_proportional(a: np.ndarray, b: np.ndarray, rel: float = 1e-12) -> bool:
    aa, bb, ab = float(a @ a), float(b @ b), float(a @ b)
    return aa * bb - ab * ab <= rel * aa * bb


# --------------------------------------------------------------------------
# randomized identity suite


IDENTITY_FUNCTIONS: dict[str, Fn] = {
    "tanh": math.tanh,
    "erf": math.erf,
    "sin": math.sin,
    "exp_neg_sq": lambda t: math.exp(-t * t),
    "cubic": lambda t: t ** 3 - 2.0 * t + 0.5,
}


def identity_suite(trials: int, seed: int, max_n: int = 6, max_k: int = 6) -> dict:
    """Randomised residuals of the kh, Leibniz and chain-shift identities.

    Returns per-identity worst ``|residual| / max(scale, tiny)`` plus the
    exact kh row-sum check.
    """
    s = SeededSampler(seed, 0x1D)
    names = list(IDENTITY_FUNCTIONS)
    worst = {"kh_identity": 0.0, "leibniz_identity": 0.0, "chain_shift": 0.0}
    for t in range(trials):
        u = s.uniform(8)
        f = IDENTITY_FUNCTIONS[names[t % len(names)]]
        n = 1 + int(u[0] * max_n)
        k = 1 + int(u[1] * max_k)
        y, h = 2 * u[2] - 1, 2 * u[3] - 1
        r, sc = check_kh_identity(f, y, h, n, k, with_scale=True)
        worst["kh_identity"] = max(worst["kh_identity"], abs(r) / max(sc, 1e-300))
        r, sc = check_leibniz_identity(f, 2 * y, h, n - 1, with_scale=True)
        worst["leibniz_identity"] = max(worst["leibniz_identity"], abs(r) / max(sc, 1e-300))
        a, b = 4 * u[4] - 2, 4 * u[5] - 2
        r, sc = chain_shift_check(f, a, b, 2 * u[6] - 1, 2 * u[7] - 1, h, with_scale=True)
        worst["chain_shift"] = max(worst["chain_shift"], abs(r) / max(sc, 1e-300))
    rowsums = all(sum(kh_coefficients(n, k)) == k ** n for n in range(1, max_n + 1) for k in range(1, max_k + 1))
    return {"trials": trials, "seed": seed, "worst_relative_residual": worst, "kh_row_sums_exact": rowsums}
