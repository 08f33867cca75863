"""Quadrature kernels for bivariate Gaussian expectations E[g(u) h(v)].

Polar-sector rule: with (u, v) = A z, z ~ N(0, I2), write z = r (cos t, sin t).
The rays where u = 0 or v = 0 split the circle into four sectors; inside each
sector the integrand is smooth in both r and t even for ReLU / step
activations, so Gauss-Legendre in t and composite Gauss-Legendre in r (weight
r exp(-r^2/2) folded into the radial weights) converge geometrically.

Rank-one covariances use the 1-D line rule, folded onto the half line.

Both a numba and a numpy implementation live here; the numba one is used when
``_accel.USE_NUMBA`` is set.
"""
import math

import numpy as np

from .activations import DERF, DGELU, DTANH, ERF, GELU, POLY, RELU, STEP, TANH
from ._accel import njit, prange

TWO_PI = 2.0 * math.pi


# --------------------------------------------------------------------------
# numba path


@njit(cache=True, fastmath=False)
def _act_nb(code, coeffs, x):
    if code == POLY:
        out = 0.0
        for k in range(coeffs.shape[0] - 1, -1, -1):
            out = out * x + coeffs[k]
        return out
    if code == RELU:
        return x if x > 0.0 else 0.0
    if code == STEP:
        return 1.0 if x > 0.0 else 0.0
    if code == TANH:
        return math.tanh(x)
    if code == DTANH:
        t = math.tanh(x)
        return 1.0 - t * t
    if code == ERF:
        return math.erf(x)
    if code == DERF:
        return 1.1283791670955126 * math.exp(-x * x)
    if code == GELU:
        return 0.5 * x * (1.0 + math.erf(x * 0.7071067811865476))
    if code == DGELU:
        return 0.5 * (1.0 + math.erf(x * 0.7071067811865476)) + x * 0.3989422804014327 * math.exp(-0.5 * x * x)
    return math.nan


@njit(cache=True)
def _sector_breaks(sa, m, s):
    br = np.empty(5)
    br[0] = 0.5 * math.pi
    br[1] = 1.5 * math.pi
    t0 = math.atan2(-m, s) % TWO_PI
    br[2] = t0
    br[3] = (t0 + math.pi) % TWO_PI
    br[:4] = np.sort(br[:4])
    br[4] = br[0] + TWO_PI
    return br


@njit(cache=True)
def _line_nb(cg, kg, ch, kh, sa, sb, t, lw):
    # E[g(sa z) h(sb z)], z ~ N(0,1); sb may be negative
    tot = 0.0
    for j in range(t.shape[0]):
        x = t[j]
        tot += lw[j] * (_act_nb(cg, kg, sa * x) * _act_nb(ch, kh, sb * x)
                        + _act_nb(cg, kg, -sa * x) * _act_nb(ch, kh, -sb * x))
    return tot


@njit(cache=True, fastmath=True)
def _fill_nb(code, coeffs, scale, r, out):
    # out[j] = act(scale * r[j]); the branch sits outside the loop so LLVM can
    # vectorise the simple cases. tanh goes through exp, which is several
    # times cheaper than libm tanh and exact to a few ulp in absolute terms.
    n = r.shape[0]
    if code == RELU:
        for j in range(n):
            x = scale * r[j]
            out[j] = x if x > 0.0 else 0.0
    elif code == STEP:
        for j in range(n):
            out[j] = 1.0 if scale * r[j] > 0.0 else 0.0
    elif code == TANH:
        for j in range(n):
            x = scale * r[j]
            e = math.exp(-2.0 * abs(x))
            t = (1.0 - e) / (1.0 + e)
            out[j] = t if x >= 0.0 else -t
    elif code == DTANH:
        for j in range(n):
            e = math.exp(-2.0 * abs(scale * r[j]))
            out[j] = 4.0 * e / ((1.0 + e) * (1.0 + e))
    elif code == POLY:
        m = coeffs.shape[0]
        for j in range(n):
            out[j] = coeffs[m - 1]
        for k in range(m - 2, -1, -1):
            ck = coeffs[k]
            for j in range(n):
                out[j] = out[j] * (scale * r[j]) + ck
    else:
        for j in range(n):
            out[j] = _act_nb(code, coeffs, scale * r[j])


@njit(cache=True)
def _expect_nb(cg, kg, ch, kh, a, b, c, r, rw, lw, an, aw):
    if a <= 0.0 and b <= 0.0:
        return _act_nb(cg, kg, 0.0) * _act_nb(ch, kh, 0.0)
    if a <= 0.0:
        return _act_nb(cg, kg, 0.0) * _line_nb(POLY, np.ones(1), ch, kh, 0.0, math.sqrt(b), r, lw)
    if b <= 0.0:
        return _act_nb(ch, kh, 0.0) * _line_nb(cg, kg, POLY, np.ones(1), math.sqrt(a), 0.0, r, lw)
    det = a * b - c * c
    if det < 1e-12 * a * b:
        sgn = 1.0 if c >= 0.0 else -1.0
        return _line_nb(cg, kg, ch, kh, math.sqrt(a), sgn * math.sqrt(b), r, lw)
    sa = math.sqrt(a)
    m = c / sa
    s = math.sqrt(max(b - c * c / a, 0.0))
    br = _sector_breaks(sa, m, s)
    nr = r.shape[0]
    gb = np.empty(nr)
    hb = np.empty(nr)
    tot = 0.0
    for k in range(4):
        lo = br[k]
        hi = br[k + 1]
        half = 0.5 * (hi - lo)
        if half <= 0.0:
            continue
        mid = 0.5 * (hi + lo)
        sec = 0.0
        for i in range(an.shape[0]):
            phi = mid + half * an[i]
            cp = math.cos(phi)
            sp = math.sin(phi)
            _fill_nb(cg, kg, sa * cp, r, gb)
            _fill_nb(ch, kh, m * cp + s * sp, r, hb)
            acc = 0.0
            for j in range(nr):
                acc += rw[j] * gb[j] * hb[j]
            sec += aw[i] * acc
        tot += half * sec
    return tot / TWO_PI


@njit(cache=True, parallel=True)
def _assemble_nb(K, cg, kg, ch, kh, r, rw, lw, an, aw):
    n = K.shape[0]
    npairs = n * (n + 1) // 2
    ii = np.empty(npairs, dtype=np.int64)
    jj = np.empty(npairs, dtype=np.int64)
    p = 0
    for i in range(n):
        for j in range(i, n):
            ii[p] = i
            jj[p] = j
            p += 1
    out = np.empty((n, n))
    for q in prange(npairs):
        i = ii[q]
        j = jj[q]
        a = K[i, i]
        if i == j:
            val = _line_nb(cg, kg, ch, kh, math.sqrt(max(a, 0.0)), math.sqrt(max(a, 0.0)), r, lw) \
                if a > 0.0 else _act_nb(cg, kg, 0.0) * _act_nb(ch, kh, 0.0)
        else:
            val = _expect_nb(cg, kg, ch, kh, a, K[j, j], K[i, j], r, rw, lw, an, aw)
        out[i, j] = val
        out[j, i] = val
    return out


# --------------------------------------------------------------------------
# numpy path


def _line_np(g, h, sa, sb, t, lw):
    return float(lw @ (g(sa * t) * h(sb * t) + g(-sa * t) * h(-sb * t)))


def _one(x):
    return np.ones_like(np.asarray(x, dtype=float))


def expect_np(g, h, a, b, c, r, rw, lw, an, aw):
    if a <= 0.0 and b <= 0.0:
        return float(g(np.zeros(1))[0] * h(np.zeros(1))[0])
    if a <= 0.0:
        return float(g(np.zeros(1))[0]) * _line_np(_one, h, 0.0, math.sqrt(b), r, lw)
    if b <= 0.0:
        return float(h(np.zeros(1))[0]) * _line_np(g, _one, math.sqrt(a), 0.0, r, lw)
    det = a * b - c * c
    if det < 1e-12 * a * b:
        sgn = 1.0 if c >= 0.0 else -1.0
        return _line_np(g, h, math.sqrt(a), sgn * math.sqrt(b), r, lw)
    sa = math.sqrt(a)
    m = c / sa
    s = math.sqrt(max(b - c * c / a, 0.0))
    t0 = math.atan2(-m, s) % TWO_PI
    br = np.sort([0.5 * math.pi, 1.5 * math.pi, t0, (t0 + math.pi) % TWO_PI])
    br = np.append(br, br[0] + TWO_PI)
    half = 0.5 * np.diff(br)
    mid = 0.5 * (br[1:] + br[:-1])
    phi = (mid[:, None] + half[:, None] * an[None, :]).ravel()
    wphi = (half[:, None] * aw[None, :]).ravel()
    P = sa * np.cos(phi)
    Q = m * np.cos(phi) + s * np.sin(phi)
    vals = g(np.outer(r, P)) * h(np.outer(r, Q))
    return float(rw @ vals @ wphi) / TWO_PI


def assemble_np(K, g, h, r, rw, lw, an, aw):
    n = K.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        a = K[i, i]
        if a > 0.0:
            sa = math.sqrt(a)
            out[i, i] = _line_np(g, h, sa, sa, r, lw)
        else:
            out[i, i] = float(g(np.zeros(1))[0] * h(np.zeros(1))[0])
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = expect_np(g, h, a, K[j, j], K[i, j], r, rw, lw, an, aw)
    return out
