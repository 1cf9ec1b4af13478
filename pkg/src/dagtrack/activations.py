"""Element-wise activations and their derivatives.

Integer codes are shared with the compiled kernels, which cannot dispatch
on strings. Derivatives are expressed in terms of the pre-activation
input; the ReLU subgradient at exactly 0 is 0.
"""

import numpy as np

RELU = 0
TANH = 1
SIGMOID = 2
IDENTITY = 3

_BY_NAME = {"relu": RELU, "tanh": TANH, "sigmoid": SIGMOID, "identity": IDENTITY}
_BY_CODE = {v: k for k, v in _BY_NAME.items()}


def activation_code(name):
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(_BY_NAME)}")


def activation_name(code):
    return _BY_CODE[code]


def apply_activation(x, code):
    if code == RELU:
        return np.maximum(x, 0)
    if code == TANH:
        return np.tanh(x)
    if code == SIGMOID:
        return 1.0 / (1.0 + np.exp(-x))
    if code == IDENTITY:
        return x.copy()
    raise ValueError(f"unknown activation code {code}")


def activation_derivative(pre, code):
    """Derivative of the activation evaluated at pre-activation values."""
    if code == RELU:
        return (pre > 0).astype(pre.dtype)
    if code == TANH:
        t = np.tanh(pre)
        return 1.0 - t * t
    if code == SIGMOID:
        s = 1.0 / (1.0 + np.exp(-pre))
        return s * (1.0 - s)
    if code == IDENTITY:
        return np.ones_like(pre)
    raise ValueError(f"unknown activation code {code}")
