"""Checks for the shape-checked linear algebra helpers and the FD oracle."""

import numpy as np
import pytest

from dagtrack.errors import NonFiniteError, ShapeError
from dagtrack.numeric import (
    add,
    finite_diff_gradient,
    hadamard,
    linalg_primitive,
    matmul,
    matvec,
    relative_error,
    scale,
)


def matmul_oracle(a, b):
    # Independent triple loop, scalar accumulation.
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m), a.dtype)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 6))
    b = rng.standard_normal((6, 3))
    assert np.allclose(matmul(a, b), matmul_oracle(a, b), rtol=1e-12, atol=1e-12)


def test_matvec_matches_matmul_column():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 7))
    x = rng.standard_normal(7)
    assert np.allclose(matvec(a, x), matmul_oracle(a, x[:, None])[:, 0])


def test_add_hadamard_scale():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 4))
    y = rng.standard_normal((3, 4))
    assert np.array_equal(add(x, y), x + y)
    assert np.array_equal(hadamard(x, y), x * y)
    assert np.array_equal(scale(x, 2.5), 2.5 * x)


def test_shape_mismatch_raises_with_both_shapes():
    a = np.zeros((2, 3))
    b = np.zeros((4, 5))
    with pytest.raises(ShapeError) as exc:
        linalg_primitive(a, b, "matmul")
    msg = str(exc.value)
    assert "(2, 3)" in msg and "(4, 5)" in msg and "matmul" in msg


def test_no_broadcasting():
    # Mismatched add must fail even though numpy would broadcast it.
    with pytest.raises(ShapeError):
        add(np.zeros((3, 1)), np.zeros((3, 4)))


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        linalg_primitive(np.zeros(2), np.zeros(2), "outer")


def test_finite_diff_on_known_quadratic():
    # f(x) = sum(A x * x) has gradient (A + A^T) x.
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 4))
    x = rng.standard_normal(4)

    def f(v):
        return float(v @ a @ v)

    num = finite_diff_gradient(f, x)
    exact = (a + a.T) @ x
    assert relative_error(exact, num) < 1e-8


def test_finite_diff_rejects_nonfinite():
    def f(v):
        return float("nan")

    with pytest.raises(NonFiniteError):
        finite_diff_gradient(f, np.ones(2))


def test_relative_error_floor():
    # Tiny absolute differences near zero are measured against the floor.
    assert relative_error(np.array(0.0), np.array(1e-12)) < 1e-3
    assert relative_error(np.array(1.0), np.array(2.0)) == 0.5


def test_relative_error_shape_check():
    with pytest.raises(ShapeError):
        relative_error(np.zeros(2), np.zeros(3))
