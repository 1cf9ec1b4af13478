"""Convolutional building blocks with hand-derived backward passes.

Feature maps are channel-last (H, W, C). Each layer comes as a
forward/backward pair in the usual cache idiom: forward returns
(output, cache), backward consumes the upstream gradient plus the cache
and returns gradients shaped exactly like the corresponding inputs.

Convolution is cross-correlation (no kernel flip) with zero padding;
max-pool ties go to the first position in row-major window order.
"""

from dataclasses import dataclass

import numpy as np

from . import activations as act
from .backend import kernels
from .errors import ShapeError


@dataclass
class Conv2dParams:
    kernels: np.ndarray  # (kH, kW, C_in, C_out)
    bias: np.ndarray  # (C_out,)
    stride: int = 1
    padding: int = 0


@dataclass
class FcParams:
    weights: np.ndarray  # (D_out, D_in)
    bias: np.ndarray  # (D_out,)


@dataclass
class PoolRecord:
    argmax: np.ndarray  # (H_out, W_out, C) flat row*W+col indices
    window: int
    stride: int
    input_shape: tuple


def conv2d_output_extent(extent, kernel, stride, padding):
    return (extent + 2 * padding - kernel) // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((padding, padding), (padding, padding), (0, 0)))


def conv2d_forward(x, params):
    kh, kw, cin, _ = params.kernels.shape
    if x.ndim != 3 or x.shape[2] != cin:
        raise ShapeError(
            f"conv2d: input {x.shape} does not supply {cin} channels for kernels "
            f"{params.kernels.shape}"
        )
    ho = conv2d_output_extent(x.shape[0], kh, params.stride, params.padding)
    wo = conv2d_output_extent(x.shape[1], kw, params.stride, params.padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel {(kh, kw)} stride {params.stride} pad {params.padding} "
            f"gives empty output for input {x.shape}"
        )
    xp = _pad(x, params.padding)
    out = kernels.conv2d_forward(xp, params.kernels, params.bias, params.stride)
    return out, (xp, params)


def conv2d_backward(grad_out, cache):
    xp, params = cache
    grad_xp, grad_k, grad_b = kernels.conv2d_backward(
        xp, params.kernels, np.ascontiguousarray(grad_out), params.stride
    )
    p = params.padding
    if p:
        grad_x = grad_xp[p:-p, p:-p, :]
    else:
        grad_x = grad_xp
    return np.ascontiguousarray(grad_x), grad_k, grad_b


def maxpool_forward(x, window, stride):
    h, w, _ = x.shape
    if window > h or window > w:
        raise ShapeError(f"maxpool: window {window} exceeds input extents {x.shape}")
    out, arg = kernels.maxpool_forward(x, window, stride)
    return out, PoolRecord(arg, window, stride, x.shape)


def maxpool_backward(grad_out, record):
    h, w, _ = record.input_shape
    return kernels.maxpool_backward(np.ascontiguousarray(grad_out), record.argmax, h, w)


def fc_forward(x, params):
    flat = x.reshape(-1)
    d_out, d_in = params.weights.shape
    if flat.shape[0] != d_in:
        raise ShapeError(
            f"fully_connected: flattened input length {flat.shape[0]} != {d_in} "
            f"for weights {params.weights.shape}"
        )
    y = params.weights @ flat + params.bias
    return y, (flat, x.shape, params)


def fc_backward(grad_out, cache):
    flat, in_shape, params = cache
    grad_x = (params.weights.T @ grad_out).reshape(in_shape)
    grad_w = np.outer(grad_out, flat)
    grad_b = grad_out.copy()
    return grad_x, grad_w, grad_b


def activation_forward(x, kind):
    code = kind if isinstance(kind, int) else act.activation_code(kind)
    return act.apply_activation(x, code), (x, code)


def activation_backward(grad_out, cache):
    x, code = cache
    return grad_out * act.activation_derivative(x, code)


def softmax_cross_entropy(logits, label):
    """Stable softmax + negative log-likelihood of the label class.

    Returns (loss, probs); the gradient w.r.t. logits is probs - onehot.
    """
    n = logits.shape[0]
    if logits.ndim != 1 or n < 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be a vector of >=2, got {logits.shape}")
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    shifted = logits - np.max(logits)
    exps = np.exp(shifted)
    total = exps.sum()
    probs = exps / total
    loss = float(np.log(total) - shifted[label])
    return loss, probs


def softmax_cross_entropy_grad(probs, label):
    grad = probs.copy()
    grad[label] -= 1
    return grad


def concat_channels_forward(a, b):
    if a.shape[:2] != b.shape[:2]:
        raise ShapeError(
            f"concat_channels: spatial extents differ, {a.shape} vs {b.shape}"
        )
    return np.concatenate([a, b], axis=2), a.shape[2]


def concat_channels_backward(grad_out, boundary):
    return (
        np.ascontiguousarray(grad_out[:, :, :boundary]),
        np.ascontiguousarray(grad_out[:, :, boundary:]),
    )
