"""Dense-array primitives and the numerical-differentiation oracle.

Arrays are plain numpy ndarrays: contiguous row-major buffers with
explicit shapes, float32 on production paths and float64 wherever a
gradient is checked. There is deliberately no broadcasting here; every
shape agreement is checked and mismatches raise ShapeError naming both
shapes, so hand-derived backward passes cannot hide a silent shape bug.
"""

import numpy as np

from .errors import NonFiniteError, ShapeError

KINDS = ("add", "scale", "hadamard", "matvec", "matmul")


def _fail(kind, a, b):
    raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def linalg_primitive(a, b, kind):
    """Apply one of the named primitives to `a` and `b` without broadcasting.

    scale treats `b` as a single scalar held in a 1-element array.
    Inputs are never modified.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if kind == "add":
        if a.shape != b.shape:
            _fail(kind, a, b)
        return a + b
    if kind == "scale":
        if b.size != 1:
            _fail(kind, a, b)
        return a * b.reshape(())
    if kind == "hadamard":
        if a.shape != b.shape:
            _fail(kind, a, b)
        return a * b
    if kind == "matvec":
        if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
            _fail(kind, a, b)
        return a @ b
    if kind == "matmul":
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            _fail(kind, a, b)
        return a @ b
    raise ValueError(f"unknown primitive kind {kind!r}; expected one of {KINDS}")


def add(a, b):
    return linalg_primitive(a, b, "add")


def scale(a, s):
    return linalg_primitive(a, np.asarray([s]), "scale")


def hadamard(a, b):
    return linalg_primitive(a, b, "hadamard")


def matvec(a, b):
    return linalg_primitive(a, b, "matvec")


def matmul(a, b):
    return linalg_primitive(a, b, "matmul")


def finite_diff_gradient(f, x, step=1e-5):
    """Central-difference gradient of a scalar function at `x`.

    Evaluates (f(x + step*e_i) - f(x - step*e_i)) / (2*step) for every
    coordinate. Runs in float64; central differences have no usable
    signal in float32.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty(x.size, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(
                f"function returned a non-finite value near coordinate {i}"
            )
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric, floor=1e-8):
    """Element-wise |a-n| / max(|a|, |n|, floor), reduced to the maximum."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ShapeError(
            f"relative_error: incompatible shapes {analytic.shape} and {numeric.shape}"
        )
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))
