"""Backend selection for the hot numeric kernels.

Every kernel ships twice: a numba ``@njit`` loop version and a vectorised
pure-numpy version. ``NTKLAB_BACKEND=numpy`` forces the numpy path; the
default uses numba when it can be imported.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe; workqueue is always available and deterministic
        numba.config.THREADING_LAYER = "workqueue"

except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_requested = os.environ.get("NTKLAB_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise RuntimeError(f"NTKLAB_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

USE_NUMBA = HAVE_NUMBA and _requested == "numba"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator.

    The jitted functions are only *called* when ``USE_NUMBA`` is true, but they
    are always compiled lazily so tests can compare both paths in one process.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


if HAVE_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n: int | None) -> None:
    """Cap numba's worker pool; ``None`` falls back to ``NTK_THREADS``."""
    if n is None:
        env = os.environ.get("NTK_THREADS")
        n = int(env) if env else None
    if n is None or not HAVE_NUMBA:
        return
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
