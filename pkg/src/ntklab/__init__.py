"""Infinite-width and empirical neural tangent kernels, positivity checks and dynamics."""
from ._accel import backend
from .activations import ActivationSpec, parse_activation
from .gauss import Cov2, NotPSDError, QuadratureRule, SeededSampler
from .kernels import ArchitectureConfig, KernelMatrix, TrainingSet, kernel_stack, theta_recursion
from .spectra import SpectralReport, positivity_report, spd_verdict

__all__ = [
    "ActivationSpec", "ArchitectureConfig", "Cov2", "KernelMatrix", "NotPSDError", "QuadratureRule",
    "SeededSampler", "SpectralReport", "TrainingSet", "backend", "kernel_stack", "parse_activation",
    "positivity_report", "spd_verdict", "theta_recursion",
]
__version__ = "0.1.0"
