"""Hot simulation kernels with selectable backend.

The Lamperti-Euler path ensemble is the dominant cost of the Monte Carlo
suites.  Two implementations exist:

* ``numba_impl`` -- scalar per-path loops compiled with ``@njit`` (default);
* ``numpy_impl`` -- step-major vectorized numpy (fallback).

Selection: set ``CSBPLAB_KERNELS=numpy`` (or ``numba``) in the environment;
default is numba when importable, numpy otherwise.  Both backends draw from
the ``numpy.random.Generator`` passed by the caller, so each is fully
deterministic under a fixed seed, but their draw *order* differs: the two
backends agree in distribution, not bit-for-bit.  ``bench/benchmark_kernels.py``
compares their throughput.
"""

from __future__ import annotations

import os

_requested = os.environ.get("CSBPLAB_KERNELS", "auto").lower()

if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"CSBPLAB_KERNELS must be auto|numba|numpy, got {_requested!r}")

_backend = None
if _requested in ("auto", "numba"):
    try:
        from . import numba_impl as _impl

        _backend = "numba"
    except ImportError:
        if _requested == "numba":
            raise
if _backend is None:
    from . import numpy_impl as _impl

    _backend = "numpy"


def backend() -> str:
    return _backend


def get_impl(name: str):
    """Fetch a specific backend module (used by the benchmark and tests)."""
    if name == "numba":
        from . import numba_impl

        return numba_impl
    if name == "numpy":
        from . import numpy_impl

        return numpy_impl
    raise ValueError(name)


lamperti_ensemble = _impl.lamperti_ensemble
