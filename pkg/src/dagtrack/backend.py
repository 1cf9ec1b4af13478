"""Kernel backend selection.

The hot kernels (convolution, pooling, lattice recurrences, bilinear
cropping) exist twice: numba-compiled and pure numpy. The active backend
is chosen once at import from the DAGTRACK_BACKEND environment variable:

    auto   -- numba if it imports, numpy otherwise (default)
    numba  -- require the compiled kernels, fail if numba is missing
    numpy  -- force the pure-numpy fallback

`kernels` is the selected module; benchmarks/bench_kernels.py times the
two side by side.
"""

import os

_choice = os.environ.get("DAGTRACK_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"DAGTRACK_BACKEND={_choice!r} not understood; use auto, numba, or numpy"
    )

if _choice == "numpy":
    from . import _kernels_numpy as kernels

    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as kernels

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise RuntimeError("DAGTRACK_BACKEND=numba but numba is not importable")
        from . import _kernels_numpy as kernels

        BACKEND = "numpy"


def backend_name():
    return BACKEND
