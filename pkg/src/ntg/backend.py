"""Kernel backend selection and thread-pool control.

Two interchangeable implementations of the hot numeric kernels exist:
a numba-jitted one and a pure-numpy one. ``NTG_BACKEND`` picks at import
time: ``auto`` (default, numba when importable), ``numba``, or ``numpy``.

Thread count resolution order: --threads flag > NTG_THREADS env > all cores.
Kernels never reduce across threads, so results are identical at any
thread count within a backend.
"""

import os


def _resolve_backend() -> str:
    forced = os.environ.get("NTG_BACKEND", "auto").strip().lower()
    if forced not in ("auto", "numba", "numpy", ""):
        raise ValueError(f"NTG_BACKEND must be auto|numba|numpy, got {forced!r}")
    if forced == "numpy":
        return "numpy"
    try:
        import warnings

        with warnings.catch_warnings():
            # harmless fallback to the omp/workqueue threading layer
            warnings.filterwarnings("ignore", message=".*TBB.*")
            import numba  # noqa: F401
        have_numba = True
    except ImportError:
        have_numba = False
    if forced == "numba" and not have_numba:
        raise ImportError("NTG_BACKEND=numba but numba is not importable")
    return "numba" if have_numba else "numpy"


ACTIVE = _resolve_backend()


def thread_default() -> int:
    env = os.environ.get("NTG_THREADS", "").strip()
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("NTG_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def set_threads(n: int) -> None:
    """Cap the kernel thread pool. On the numpy backend this is a no-op."""
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if ACTIVE == "numba":
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
