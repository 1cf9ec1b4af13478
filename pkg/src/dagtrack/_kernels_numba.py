"""Numba-compiled implementations of the hot kernels.

Default backend when numba imports; see _kernels_numpy for the shared
signature and convention contract. Kernels are dtype-generic (compiled
for float32 and float64 on first use) and compiled with fastmath off so
accumulation order is exactly the written loop order.
"""

import numpy as np
from numba import njit

from .activations import RELU, TANH, SIGMOID


@njit(cache=True, inline="always")
def _phi_scalar(x, code):
    # float64 intermediates are fine; stores cast back to the array dtype
    if code == RELU:
        return x if x > 0 else x - x
    if code == TANH:
        return np.tanh(x)
    if code == SIGMOID:
        return 1.0 / (1.0 + np.exp(-x))
    return x


@njit(cache=True, inline="always")
def _phi_prime_scalar(pre, code):
    if code == RELU:
        return 1.0 if pre > 0 else 0.0
    if code == TANH:
        t = np.tanh(pre)
        return 1.0 - t * t
    if code == SIGMOID:
        s = 1.0 / (1.0 + np.exp(-pre))
        return s * (1.0 - s)
    return 1.0


@njit(cache=True)
def conv2d_forward(xp, kernels, bias, stride):
    hp, wp, cin = xp.shape
    kh, kw, _, cout = kernels.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.empty((ho, wo, cout), xp.dtype)
    for i in range(ho):
        for j in range(wo):
            for co in range(cout):
                acc = bias[co]
                for u in range(kh):
                    for v in range(kw):
                        for ci in range(cin):
                            acc += xp[i * stride + u, j * stride + v, ci] * kernels[u, v, ci, co]
                out[i, j, co] = acc
    return out


@njit(cache=True)
def conv2d_backward(xp, kernels, grad_out, stride):
    hp, wp, cin = xp.shape
    kh, kw, _, cout = kernels.shape
    ho, wo, _ = grad_out.shape
    grad_xp = np.zeros(xp.shape, xp.dtype)
    grad_k = np.zeros(kernels.shape, kernels.dtype)
    grad_b = np.zeros(cout, kernels.dtype)
    for i in range(ho):
        for j in range(wo):
            for co in range(cout):
                g = grad_out[i, j, co]
                grad_b[co] += g
                for u in range(kh):
                    for v in range(kw):
                        for ci in range(cin):
                            grad_k[u, v, ci, co] += xp[i * stride + u, j * stride + v, ci] * g
                            grad_xp[i * stride + u, j * stride + v, ci] += kernels[u, v, ci, co] * g
    return grad_xp, grad_k, grad_b


@njit(cache=True)
def maxpool_forward(x, window, stride):
    h, w, c = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.empty((ho, wo, c), x.dtype)
    arg = np.empty((ho, wo, c), np.int64)
    for i in range(ho):
        for j in range(wo):
            for ch in range(c):
                best = x[i * stride, j * stride, ch]
                bi = (i * stride) * w + j * stride
                for u in range(window):
                    for v in range(window):
                        val = x[i * stride + u, j * stride + v, ch]
                        if val > best:
                            best = val
                            bi = (i * stride + u) * w + (j * stride + v)
                out[i, j, ch] = best
                arg[i, j, ch] = bi
    return out, arg


@njit(cache=True)
def maxpool_backward(grad_out, argmax, height, width):
    ho, wo, c = grad_out.shape
    grad_x = np.zeros((height, width, c), grad_out.dtype)
    for i in range(ho):
        for j in range(wo):
            for ch in range(c):
                flat = argmax[i, j, ch]
                grad_x[flat // width, flat % width, ch] += grad_out[i, j, ch]
    return grad_x


@njit(cache=True)
def dag_forward(ux, w_hh, topo, pred_ptr, pred_idx, phi):
    n, dh = ux.shape
    pre = np.empty((n, dh), ux.dtype)
    hid = np.empty((n, dh), ux.dtype)
    hpsum = np.zeros((n, dh), ux.dtype)
    for t in range(n):
        v = topo[t]
        lo, hi = pred_ptr[v], pred_ptr[v + 1]
        for p in range(lo, hi):
            u = pred_idx[p]
            for q in range(dh):
                hpsum[v, q] += hid[u, q]
        for q in range(dh):
            acc = ux[v, q]
            if hi > lo:
                for r in range(dh):
                    acc += w_hh[q, r] * hpsum[v, r]
            pre[v, q] = acc
            hid[v, q] = _phi_scalar(acc, phi)
    return pre, hid, hpsum


@njit(cache=True)
def dag_backward(base, w_hh_t, pre, topo, succ_ptr, succ_idx, phi):
    n, dh = base.shape
    da = np.empty((n, dh), base.dtype)
    dsum = np.empty(dh, base.dtype)
    for t in range(n - 1, -1, -1):
        v = topo[t]
        lo, hi = succ_ptr[v], succ_ptr[v + 1]
        for q in range(dh):
            dsum[q] = 0
        for p in range(lo, hi):
            k = succ_idx[p]
            for q in range(dh):
                dsum[q] += da[k, q]
        for q in range(dh):
            acc = base[v, q]
            if hi > lo:
                for r in range(dh):
                    acc += w_hh_t[q, r] * dsum[r]
            da[v, q] = acc * _phi_prime_scalar(pre[v, q], phi)
    return da


@njit(cache=True)
def bilinear_crop(img, x0, y0, w, h, out_size):
    ih, iw, c = img.shape
    out = np.zeros((out_size, out_size, c), img.dtype)
    sx_step = w / out_size
    sy_step = h / out_size
    for r in range(out_size):
        sy = y0 + (r + 0.5) * sy_step - 0.5
        fy = np.floor(sy)
        ay = sy - fy
        y_lo = np.int64(fy)
        for col in range(out_size):
            sx = x0 + (col + 0.5) * sx_step - 0.5
            fx = np.floor(sx)
            ax = sx - fx
            x_lo = np.int64(fx)
            for ch in range(c):
                acc = 0.0
                for dy in range(2):
                    yy = y_lo + dy
                    if yy < 0 or yy >= ih:
                        continue
                    wy = ay if dy == 1 else 1.0 - ay
                    for dx in range(2):
                        xx = x_lo + dx
                        if xx < 0 or xx >= iw:
                            continue
                        wx = ax if dx == 1 else 1.0 - ax
                        acc += img[yy, xx, ch] * wy * wx
                out[r, col, ch] = acc
    return out
