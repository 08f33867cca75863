"""Eigenvalue extremes and positive-definiteness verdicts for kernel matrices."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationSpec
from .gauss import QuadratureRule
from .kernels import ArchitectureConfig, KernelMatrix, TrainingSet, kernel_stack
from .linalg import eigvalsh

DEFAULT_RELATIVE_TOL = 1e-8

SPD = "strictly_positive_definite"
PSD = "positive_semi_definite"
INDEFINITE = "indefinite"


@dataclass(frozen=True)
class SpectralReport:
    lambda_min: float
    lambda_max: float
    verdict: str
    relative_tol: float
    matrix_kind: str = "matrix"
    layer: int = 0
    flags: tuple[str, ...] = field(default=())

    @property
    def ratio(self) -> float:
        return self.lambda_min / self.lambda_max if self.lambda_max > 0 else float("nan")

    def as_dict(self) -> dict:
        return {
            "matrix_kind": self.matrix_kind,
            "layer": self.layer,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "verdict": self.verdict,
            "relative_tol": self.relative_tol,
            "flags": list(self.flags),
        }


def _as_array(M) -> np.ndarray:
    return np.asarray(M.values if isinstance(M, KernelMatrix) else M, dtype=float)


def min_max_eigenvalues(M) -> tuple[float, float]:
    A = _as_array(M)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.size == 0:
        raise ValueError("need a nonempty square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    scale = float(np.max(np.abs(A)))
    asym = float(np.max(np.abs(A - A.T)))
    if asym > 1e-12 * scale:
        raise ValueError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    w = eigvalsh(0.5 * (A + A.T))
    return float(w[0]), float(w[-1])


def classify(lmin: float, lmax: float, relative_tol: float) -> str:
    if lmin > relative_tol * max(lmax, 1e-300):
        return SPD
    if lmin >= -relative_tol * max(lmax, 0.0):
        return PSD
    return INDEFINITE


def spd_verdict(M, relative_tol: float = DEFAULT_RELATIVE_TOL, matrix_kind: str | None = None,
                layer: int | None = None, flags=()) -> SpectralReport:
    lmin, lmax = min_max_eigenvalues(M)
    if isinstance(M, KernelMatrix):
        matrix_kind = matrix_kind or M.kind
        layer = M.layer if layer is None else layer
    return SpectralReport(lmin, lmax, classify(lmin, lmax, relative_tol), float(relative_tol),
                          matrix_kind or "matrix", int(layer or 0), tuple(flags))


def hypothesis_flags(X: TrainingSet, cfg: ArchitectureConfig) -> list[str]:
    """Violated positivity hypotheses: repeated inputs, or proportional inputs at beta = 0."""
    flags = []
    for i, j in X.duplicate_pairs():
        flags.append(f"repeated_inputs:{i},{j}")
    if cfg.beta == 0:
        for i, j in X.proportional_pairs():
            flags.append(f"proportional_inputs_beta0:{i},{j}")
    return flags


def positivity_report(X: TrainingSet, spec: ActivationSpec, cfg: ArchitectureConfig,
                      rule: QuadratureRule | None = None, L: int | None = None,
                      relative_tol: float = DEFAULT_RELATIVE_TOL, method: str = "auto") -> list[SpectralReport]:
    """Reports for theta, sigma_hat (layers 1..L) and sigma (layers 2..L).

    Hypothesis violations are attached to every report as flags; the
    computation still runs.
    """
    flags = tuple(hypothesis_flags(X, cfg))
    stack = kernel_stack(X, spec, cfg, rule, L, method)
    out = []
    for layer in range(1, len(stack.theta) + 1):
        for seq in (stack.theta, stack.sigma_hat, stack.sigma):
            for m in seq:
                if m.layer == layer:
                    out.append(spd_verdict(m, relative_tol, flags=flags))
    return out
