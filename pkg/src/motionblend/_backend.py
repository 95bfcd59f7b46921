"""Kernel backend selection.

The hot numeric loops ship in two flavors: numba ``@njit`` kernels and
plain vectorized numpy. Setting ``MBGS_DISABLE_NUMBA=1`` (or numba being
unimportable) selects the numpy path. ``MBGS_THREADS`` caps the worker
threads used by the parallel numba kernels.
"""

import os


def _flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


NUMBA_DISABLED = _flag("MBGS_DISABLE_NUMBA")

if NUMBA_DISABLED:
    HAVE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - depends on environment
        HAVE_NUMBA = False

if HAVE_NUMBA:
    import numba

    _cap = os.environ.get("MBGS_THREADS", "").strip()
    if _cap:
        try:
            numba.set_num_threads(max(1, min(int(_cap), numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            pass


def use_numba() -> bool:
    """True when the compiled kernel path is active."""
    return HAVE_NUMBA
