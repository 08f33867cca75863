"""Activation functions with value and almost-everywhere derivative.

Each :class:`ActivationSpec` hands out two :class:`Evaluator` objects,
``spec.value`` and ``spec.derivative``. Evaluators are vectorised numpy
callables that also carry an integer code plus coefficient array, which is all
the numba quadrature kernels need to evaluate them without Python callbacks.

ReLU's derivative at the kink is taken to be 0 (the left limit).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf

# evaluator codes shared with the jitted kernels
POLY = 0
RELU = 1
STEP = 2
TANH = 3
DTANH = 4
ERF = 5
DERF = 6
GELU = 7
DGELU = 8

KINDS = ("relu", "tanh", "erf", "identity", "polynomial", "gelu")

_SQRT2 = math.sqrt(2.0)
_TWO_OVER_SQRTPI = 2.0 / math.sqrt(math.pi)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _horner(coeffs: np.ndarray, x):
    out = np.zeros_like(np.asarray(x, dtype=float))
    for c in coeffs[::-1]:
        out = out * x + c
    return out


def evaluate_code(code: int, coeffs: np.ndarray, x):
    """Vectorised evaluation of an evaluator code (numpy path)."""
    x = np.asarray(x, dtype=float)
    if code == POLY:
        return _horner(coeffs, x)
    if code == RELU:
        return np.maximum(x, 0.0)
    if code == STEP:
        return (x > 0.0).astype(float)
    if code == TANH:
        return np.tanh(x)
    if code == DTANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if code == ERF:
        return _erf(x)
    if code == DERF:
        return _TWO_OVER_SQRTPI * np.exp(-x * x)
    if code == GELU:
        return 0.5 * x * (1.0 + _erf(x / _SQRT2))
    if code == DGELU:
        return 0.5 * (1.0 + _erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)
    raise ValueError(f"unknown evaluator code {code}")


@dataclass(frozen=True)
class Evaluator:
    """A scalar function R -> R usable both from numpy and from numba kernels."""

    code: int
    coeffs: np.ndarray = field(repr=False, compare=False)
    label: str = ""

    def __call__(self, x):
        out = evaluate_code(self.code, self.coeffs, x)
        return float(out) if np.ndim(out) == 0 else out


def _trim(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float).ravel()
    if c.size == 0:
        c = np.zeros(1)
    nz = np.flatnonzero(c)
    return c[: nz[-1] + 1].copy() if nz.size else np.zeros(1)


@dataclass(frozen=True)
class ActivationSpec:
    """Named activation. ``coefficients`` are monomial-basis, lowest order first."""

    name: str
    kind: str
    coefficients: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "polynomial":
            c = _trim(self.coefficients)
            object.__setattr__(self, "coefficients", tuple(float(v) for v in c))
            if not all(math.isfinite(v) for v in self.coefficients):
                raise ValueError("polynomial coefficients must be finite")
        elif self.kind == "identity":
            object.__setattr__(self, "coefficients", (0.0, 1.0))
        elif self.coefficients:
            raise ValueError(f"{self.kind} takes no coefficients")

    @property
    def polynomial_degree(self) -> int | None:
        if self.kind in ("polynomial", "identity"):
            return len(self.coefficients) - 1
        return None

    @property
    def kinks(self) -> tuple[float, ...]:
        """Points where the function is not differentiable."""
        return (0.0,) if self.kind == "relu" else ()

    @property
    def value(self) -> Evaluator:
        if self.kind in ("polynomial", "identity"):
            return Evaluator(POLY, np.array(self.coefficients), self.name)
        code = {"relu": RELU, "tanh": TANH, "erf": ERF, "gelu": GELU}[self.kind]
        return Evaluator(code, np.zeros(1), self.name)

    @property
    def derivative(self) -> Evaluator:
        label = self.name + "'"
        if self.kind in ("polynomial", "identity"):
            c = np.array(self.coefficients)
            d = c[1:] * np.arange(1, c.size) if c.size > 1 else np.zeros(1)
            return Evaluator(POLY, _trim(d), label)
        code = {"relu": STEP, "tanh": DTANH, "erf": DERF, "gelu": DGELU}[self.kind]
        return Evaluator(code, np.zeros(1), label)

    def __str__(self) -> str:
        if self.kind == "polynomial":
            return "poly:" + ",".join(repr(c) for c in self.coefficients)
        return self.kind


def relu() -> ActivationSpec:
    return ActivationSpec("relu", "relu")


def identity() -> ActivationSpec:
    return ActivationSpec("identity", "identity")


def polynomial(coefficients) -> ActivationSpec:
    spec = ActivationSpec("", "polynomial", tuple(coefficients))
    object.__setattr__(spec, "name", str(spec))
    return spec


def parse_activation(text: str) -> ActivationSpec:
    """Parse the CLI/config spelling: relu, tanh, erf, identity, gelu, poly:c0,c1,..."""
    text = text.strip()
    if text.startswith("poly:"):
        body = text[len("poly:"):]
        try:
            coeffs = [float(tok) for tok in body.split(",")]
        except ValueError:
            raise ValueError(f"bad polynomial coefficients in {text!r}") from None
        return polynomial(coeffs)
    if text in ("relu", "tanh", "erf", "identity", "gelu"):
        return ActivationSpec(text, text)
    raise ValueError(f"unknown activation {text!r}")


def eval(spec: ActivationSpec, x):  # noqa: A001 - mirrors the operation name
    return spec.value(x)


def eval_derivative(spec: ActivationSpec, x):
    return spec.derivative(x)
