"""``ntk`` command line: kernel | empirical | spectrum | train | flow | findiff.

Exit codes: 0 success, 1 validation error (bad flags, config, data),
2 numerical failure (non-PSD kernel, divergence, non-convergence).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import _accel
from .activations import ActivationSpec, parse_activation
from .findiff import identity_suite, polynomial_degree_estimate
from .gauss import NotPSDError, QuadratureRule, SeededSampler, check_pairwise_psd
from .kernels import METHODS, ArchitectureConfig, TrainingSet, kernel_stack
from .linalg import EigenError, eigh
from .serialize import csv_text, dumps, load_schema
from .spectra import DEFAULT_RELATIVE_TOL, positivity_report

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

# stream ids for auxiliary draws, kept apart from parameter streams
_TARGET_STREAM = 0x7A6E7
_PARAM_STREAM = 0x9A7A


class ValidationError(ValueError):
    pass


class DataError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


# --------------------------------------------------------------------------
# config and data


@dataclass
class RunConfig:
    architecture: ArchitectureConfig
    activation: str
    quad_order: int = 64
    seed: int = 0
    tolerances: dict = field(default_factory=dict)

    @property
    def spec(self) -> ActivationSpec:
        return parse_activation(self.activation)

    @property
    def rule(self) -> QuadratureRule:
        return QuadratureRule(self.quad_order)

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            jsonschema.validate(data, load_schema("config"))
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ValidationError(f"config {where}: {exc.message}") from None
        try:
            arch = ArchitectureConfig(**data["architecture"])
            parse_activation(data["activation"])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"config: {exc}") from None
        return cls(arch, data["activation"], int(data.get("quad_order", 64)), int(data.get("seed", 0)),
                   dict(data.get("tolerances", {})))

    def as_dict(self) -> dict:
        a = self.architecture
        return {
            "architecture": {"n0": a.n0, "depth": a.depth, "beta": a.beta, "rho_w": a.rho_w,
                             "rho_b": a.rho_b, "layer1_convention": a.layer1_convention},
            "activation": self.activation,
            "quad_order": self.quad_order,
            "seed": self.seed,
            "tolerances": self.tolerances,
        }


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(data)


def read_matrix_csv(path) -> np.ndarray:
    """Rows of comma-separated reals; blank lines and '#' comments skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    rows, width = [], None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise DataError(f"cannot parse {line!r} as comma-separated reals", lineno) from None
        if not all(math.isfinite(v) for v in row):
            raise DataError("non-finite value", lineno)
        if width is not None and len(row) != width:
            raise DataError(f"expected {width} values, found {len(row)}", lineno)
        width = len(row)
        rows.append(row)
    if not rows:
        raise DataError(f"{path} contains no data rows")
    return np.array(rows, dtype=float)


def load_training_set(path, expected_dim: int | None = None, beta: float | None = None) -> TrainingSet:
    """Inputs from CSV; duplicates (and proportional rows when beta == 0) become warnings."""
    X = read_matrix_csv(path)
    if expected_dim is not None and X.shape[1] != expected_dim:
        raise DataError(f"rows have {X.shape[1]} values, expected dimension {expected_dim}")
    ts = TrainingSet(X)
    for i, j in ts.duplicate_pairs():
        ts.warnings.append(f"inputs {i} and {j} are identical")
    if beta == 0:
        for i, j in ts.proportional_pairs():
            ts.warnings.append(f"inputs {i} and {j} are proportional (beta = 0)")
    return ts


def _targets(args, X: TrainingSet, seed: int, n_out: int = 1) -> np.ndarray:
    if getattr(args, "targets", None):
        Y = read_matrix_csv(args.targets)
        if Y.shape[0] != X.N:
            raise ValidationError(f"{Y.shape[0]} target rows for {X.N} inputs")
        return Y
    return SeededSampler(seed, _TARGET_STREAM).standard_normal((X.N, n_out))


# --------------------------------------------------------------------------
# subcommands


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _setup(args):
    cfg = load_config(args.config)
    if getattr(args, "depth", None) is not None:
        cfg.architecture = cfg.architecture.with_depth(args.depth)
    if getattr(args, "quad_order", None) is not None:
        cfg.quad_order = args.quad_order
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    X = load_training_set(args.data, cfg.architecture.n0, cfg.architecture.beta)
    for w in X.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return cfg, X


def cmd_kernel(args) -> int:
    cfg, X = _setup(args)
    stack = kernel_stack(X, cfg.spec, cfg.architecture, cfg.rule, method=args.method)
    doc = {
        "format": "ntklab.kernels/1",
        "n": X.N,
        "activation": cfg.activation,
        "architecture": cfg.as_dict()["architecture"],
        "quad_order": cfg.quad_order,
        "method": args.method,
        "matrices": [{"kind": m.kind, "layer": m.layer, "values": m.values} for m in stack.all()],
    }
    _emit(args, dumps(doc))
    return EXIT_OK


def cmd_spectrum(args) -> int:
    cfg, X = _setup(args)
    tol = args.tol if args.tol is not None else cfg.tol("spd_relative", DEFAULT_RELATIVE_TOL)
    reports = positivity_report(X, cfg.spec, cfg.architecture, cfg.rule, relative_tol=tol)
    _emit(args, dumps([r.as_dict() for r in reports]))
    return EXIT_OK


def cmd_empirical(args) -> int:
    from .network import width_sweep

    cfg, X = _setup(args)
    arch = cfg.architecture
    if arch.depth < 2:
        raise ValidationError("empirical sweep needs depth >= 2 (at least one hidden layer)")
    exact = kernel_stack(X, cfg.spec, arch, cfg.rule).theta[-1].values
    rows = width_sweep(arch, args.widths, X, cfg.spec, args.samples, SeededSampler(cfg.seed, _PARAM_STREAM), exact)
    _emit(args, csv_text(["width", "sample_count", "frobenius_error_vs_exact", "median_stderr"],
                         [(r.width, r.sample_count, r.frobenius_error_vs_exact, r.median_stderr) for r in rows]))
    return EXIT_OK


def cmd_train(args) -> int:
    from .dynamics import gd_train
    from .network import init_params

    cfg, X = _setup(args)
    arch = cfg.architecture
    Y = _targets(args, X, cfg.seed)
    X = TrainingSet(X.inputs, Y)
    widths = (arch.n0,) + (args.width,) * (arch.depth - 1) + (Y.shape[1],)
    params = init_params(arch, widths, SeededSampler(cfg.seed, _PARAM_STREAM))
    lr = None if args.lr == "auto" else float(args.lr)
    res = gd_train(params, X, cfg.spec, arch, lr, args.steps, stop_below=args.stop_below)
    _emit(args, csv_text(["step", "loss"], [(k, float(v)) for k, v in enumerate(res.losses)]))
    return EXIT_OK


def _theta_from_file(path, layer: int | None) -> np.ndarray:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(doc, load_schema("kernels"))
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"{path}: {exc.message}") from None
    thetas = [m for m in doc["matrices"] if m["kind"] == "theta"]
    if layer is not None:
        thetas = [m for m in thetas if m["layer"] == layer]
    if not thetas:
        raise ValidationError(f"{path} has no theta matrix" + (f" at layer {layer}" if layer else ""))
    m = max(thetas, key=lambda m: m["layer"])
    T = np.array(m["values"], dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValidationError(f"theta layer {m['layer']} is not square")
    return T


def _validate_psd(T: np.ndarray) -> None:
    asym = np.abs(T - T.T)
    if asym.max() > 1e-12 * max(float(np.abs(T).max()), 1e-300):
        i, j = np.unravel_index(int(np.argmax(asym)), T.shape)
        raise NotPSDError(f"theta is not symmetric at ({i},{j}): {float(T[i, j])!r} vs {float(T[j, i])!r}", (int(i), int(j)))
    check_pairwise_psd(T)
    w, V = eigh(T)
    if w[0] < -1e-10 * max(w[-1], 0.0):
        k = int(np.argmax(np.abs(V[:, 0])))
        raise NotPSDError(f"theta has eigenvalue {float(w[0])!r} < -1e-10 * lambda_max ({float(w[-1])!r}); "
                          f"eigenvector concentrated on row {k}", (k, k))


def cmd_flow(args) -> int:
    from .dynamics import LinearFlow

    T = _theta_from_file(args.theta, args.layer)
    _validate_psd(T)
    N = T.shape[0]
    Y = read_matrix_csv(args.targets) if args.targets else SeededSampler(args.seed, _TARGET_STREAM).standard_normal((N, 1))
    F0 = read_matrix_csv(args.f0) if args.f0 else np.zeros_like(Y)
    if Y.shape[0] != N or F0.shape != Y.shape:
        raise ValidationError(f"targets {Y.shape} and f0 {F0.shape} must have {N} rows and equal shape")
    if args.points < 1 or args.t1 < args.t0 or args.t0 < 0:
        raise ValidationError("need 0 <= t0 <= t1 and points >= 1")
    flow = LinearFlow(T, F0, Y)
    lmin = float(flow.lam[0])
    l0 = flow.loss(0.0)
    ts = np.linspace(args.t0, args.t1, args.points)
    rows = [(float(t), flow.loss(float(t)), math.exp(-2 * lmin * float(t)) * l0) for t in ts]
    _emit(args, csv_text(["t", "loss", "bound"], rows))
    return EXIT_OK


def _domain(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"domain must look like lo:hi, got {text!r}") from None
    if not hi > lo:
        raise argparse.ArgumentTypeError("domain needs lo < hi")
    return lo, hi


def cmd_findiff_degree(args) -> int:
    spec = parse_activation(args.fn)
    v = polynomial_degree_estimate(spec.value, args.domain, args.max_order, args.tol, seed=args.seed)
    doc = {"function": args.fn, "domain": list(args.domain), "max_order": args.max_order, "tol": args.tol}
    doc.update(v.as_dict())
    _emit(args, dumps(doc))
    return EXIT_OK


def cmd_findiff_identities(args) -> int:
    res = identity_suite(args.trials, args.seed)
    res["tolerance"] = args.tol
    res["passed"] = bool(res["kh_row_sums_exact"]
                         and all(v <= args.tol for v in res["worst_relative_residual"].values()))
    order = ["trials", "seed", "tolerance", "worst_relative_residual", "kh_row_sums_exact", "passed"]
    _emit(args, dumps({k: res[k] for k in order}))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _int_list(text: str) -> list[int]:
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("widths must be positive integers")
    return out


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="cap on worker threads (default: $NTK_THREADS, else all cores)")
    common.add_argument("--out", default=None, help="output file (default: stdout)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--config", required=True, help="RunConfig JSON file")
    run.add_argument("--data", required=True, help="CSV with one input per row")
    run.add_argument("--seed", type=_seed, default=None, help="overrides the config seed")
    run.add_argument("--quad-order", type=_positive_int, default=None, help="quadrature order (default 64)")

    p = _Parser(prog="ntk", description="Neural tangent kernel laboratory.")
    sub = p.add_subparsers(dest="command", metavar="{kernel,empirical,spectrum,train,flow,findiff}",
                           parser_class=_Parser)

    k = sub.add_parser("kernel", parents=[common, run], help="infinite-width kernels per layer (JSON)")
    k.add_argument("--depth", type=_positive_int, default=None)
    k.add_argument("--method", choices=METHODS, default="auto")
    k.set_defaults(func=cmd_kernel)

    e = sub.add_parser("empirical", parents=[common, run], help="finite-width NTK width sweep (CSV)")
    e.add_argument("--widths", type=_int_list, default=[64, 256, 1024])
    e.add_argument("--samples", type=_positive_int, default=50)
    e.set_defaults(func=cmd_empirical)

    s = sub.add_parser("spectrum", parents=[common, run], help="positivity reports per layer (JSON)")
    s.add_argument("--depth", type=_positive_int, default=None)
    s.add_argument("--tol", type=float, default=None, help=f"relative tolerance (default {DEFAULT_RELATIVE_TOL})")
    s.set_defaults(func=cmd_spectrum)

    t = sub.add_parser("train", parents=[common, run], help="gradient descent loss curve (CSV)")
    t.add_argument("--width", type=_positive_int, default=512)
    t.add_argument("--steps", type=int, default=50000)
    t.add_argument("--lr", default="auto", help="step size or 'auto' (1 / (2 lambda_max) at init)")
    t.add_argument("--stop-below", type=float, default=None, help="stop once loss drops below this")
    t.add_argument("--targets", default=None, help="CSV of targets (default: seeded normal draws)")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("flow", parents=[common], help="linearised flow under a kernel file (CSV)")
    f.add_argument("--theta", required=True, help="kernels JSON written by 'ntk kernel'")
    f.add_argument("--layer", type=_positive_int, default=None, help="theta layer (default: deepest)")
    f.add_argument("--t0", type=float, default=0.0)
    f.add_argument("--t1", type=float, default=100.0)
    f.add_argument("--points", type=int, default=200)
    f.add_argument("--targets", default=None)
    f.add_argument("--f0", default=None, help="CSV of initial outputs (default: zeros)")
    f.add_argument("--seed", type=_seed, default=0, help="seed for default targets")
    f.set_defaults(func=cmd_flow)

    fd = sub.add_parser("findiff", help="finite-difference tools")
    fsub = fd.add_subparsers(dest="findiff_command", metavar="{degree,identities}", parser_class=_Parser)
    d = fsub.add_parser("degree", parents=[common], help="polynomial degree verdict (JSON)")
    d.add_argument("--fn", required=True, help="relu | tanh | erf | identity | gelu | poly:c0,c1,...")
    d.add_argument("--domain", type=_domain, default=(-1.0, 1.0), help="lo:hi")
    d.add_argument("--max-order", type=_positive_int, default=8)
    d.add_argument("--tol", type=float, default=1e-7)
    d.add_argument("--seed", type=_seed, default=0)
    d.set_defaults(func=cmd_findiff_degree)
    i = fsub.add_parser("identities", parents=[common], help="randomised identity residuals (JSON)")
    i.add_argument("--trials", type=int, default=1000)
    i.add_argument("--seed", type=_seed, default=0)
    i.add_argument("--tol", type=float, default=1e-9)
    i.set_defaults(func=cmd_findiff_identities)
    return p


def _glue_negative_values(argv: list[str]) -> list[str]:
    # "--domain -2:2" would otherwise be read as an unknown option
    out = []
    k = 0
    while k < len(argv):
        if argv[k] == "--domain" and k + 1 < len(argv) and argv[k + 1].startswith("-"):
            out.append(f"--domain={argv[k + 1]}")
            k += 2
        else:
            out.append(argv[k])
            k += 1
    return out


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_glue_negative_values(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        target = parser
        if args.command == "findiff":
            target = parser._subparsers._group_actions[0].choices["findiff"]
        target.print_usage(sys.stderr)
        print("ntk: error: missing subcommand", file=sys.stderr)
        return EXIT_VALIDATION
    _accel.set_threads(args.threads)
    try:
        return args.func(args)
    except (NotPSDError, EigenError, ArithmeticError) as exc:
        loc = getattr(exc, "location", None)
        suffix = f" [location {loc}]" if loc is not None else ""
        print(f"ntk: numerical failure: {exc}{suffix}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"ntk: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    raise SystemExit(dispatch())


if __name__ == "__main__":
    main()
