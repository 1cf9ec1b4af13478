"""Pure-numpy implementations of the hot kernels.

Fallback path for the compiled backend; selected with DAGTRACK_BACKEND=numpy.
Both backends share these exact signatures and conventions:

- conv2d works on pre-padded inputs, channel-last, accumulating taps in
  (row, col, in-channel) order so results match a naive loop bit-for-bit;
- maxpool breaks ties toward the first position in row-major window order
  and records argmax as flat row*width+col indices into the unpooled map;
- dag_forward/dag_backward run the recurrence over vertices in (reverse)
  topological order with CSR predecessor/successor lists;
- bilinear_crop samples with half-pixel centers, zero outside the image.
"""

import numpy as np

from .activations import RELU, TANH, SIGMOID, IDENTITY


def _phi(x, code):
    if code == RELU:
        return np.maximum(x, 0)
    if code == TANH:
        return np.tanh(x)
    if code == SIGMOID:
        return 1.0 / (1.0 + np.exp(-x))
    return x.copy()


def _phi_prime(pre, code):
    if code == RELU:
        return (pre > 0).astype(pre.dtype)
    if code == TANH:
        t = np.tanh(pre)
        return 1.0 - t * t
    if code == SIGMOID:
        s = 1.0 / (1.0 + np.exp(-pre))
        return s * (1.0 - s)
    return np.ones_like(pre)


def conv2d_forward(xp, kernels, bias, stride):
    hp, wp, _ = xp.shape
    kh, kw, cin, cout = kernels.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.empty((ho, wo, cout), xp.dtype)
    out[:, :] = bias
    # tap accumulation in (u, v, ci) order keeps per-element rounding
    # identical to the naive nested-loop formulation
    for u in range(kh):
        for v in range(kw):
            patch = xp[u : u + ho * stride : stride, v : v + wo * stride : stride, :]
            for ci in range(cin):
                out += patch[:, :, ci, None] * kernels[u, v, ci, :]
    return out


def conv2d_backward(xp, kernels, grad_out, stride):
    hp, wp, cin = xp.shape
    kh, kw, _, cout = kernels.shape
    ho, wo, _ = grad_out.shape
    grad_xp = np.zeros_like(xp)
    grad_k = np.zeros_like(kernels)
    grad_b = grad_out.sum(axis=(0, 1))
    for u in range(kh):
        for v in range(kw):
            patch = xp[u : u + ho * stride : stride, v : v + wo * stride : stride, :]
            # (ci, co) outer product summed over output positions
            grad_k[u, v] = np.einsum("hwc,hwo->co", patch, grad_out)
            grad_xp[u : u + ho * stride : stride, v : v + wo * stride : stride, :] += (
                grad_out @ kernels[u, v].T
            )
    return grad_xp, grad_k, grad_b


def maxpool_forward(x, window, stride):
    h, w, c = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    best = np.full((ho, wo, c), -np.inf, x.dtype)
    arg = np.zeros((ho, wo, c), np.int64)
    for u in range(window):
        for v in range(window):
            patch = x[u : u + ho * stride : stride, v : v + wo * stride : stride, :]
            rows = (np.arange(ho) * stride + u)[:, None, None]
            cols = (np.arange(wo) * stride + v)[None, :, None]
            flat = np.broadcast_to(rows * w + cols, patch.shape)
            better = patch > best
            best = np.where(better, patch, best)
            arg = np.where(better, flat, arg)
    return best, arg


def maxpool_backward(grad_out, argmax, height, width):
    c = grad_out.shape[2]
    grad_flat = np.zeros((height * width, c), grad_out.dtype)
    g2 = grad_out.reshape(-1, c)
    a2 = argmax.reshape(-1, c)
    for ch in range(c):
        np.add.at(grad_flat[:, ch], a2[:, ch], g2[:, ch])
    return grad_flat.reshape(height, width, c)


def dag_forward(ux, w_hh, topo, pred_ptr, pred_idx, phi):
    n, dh = ux.shape
    pre = np.empty_like(ux)
    hid = np.empty_like(ux)
    hpsum = np.zeros_like(ux)
    for v in topo:
        lo, hi = pred_ptr[v], pred_ptr[v + 1]
        acc = ux[v]
        if hi > lo:
            hp = hid[pred_idx[lo:hi]].sum(axis=0)
            hpsum[v] = hp
            acc = acc + w_hh @ hp
        pre[v] = acc
        hid[v] = _phi(pre[v], phi)
    return pre, hid, hpsum


def dag_backward(base, w_hh_t, pre, topo, succ_ptr, succ_idx, phi):
    da = np.empty_like(base)
    dphi = _phi_prime(pre, phi)
    for v in topo[::-1]:
        lo, hi = succ_ptr[v], succ_ptr[v + 1]
        acc = base[v]
        if hi > lo:
            acc = acc + w_hh_t @ da[succ_idx[lo:hi]].sum(axis=0)
        da[v] = acc * dphi[v]
    return da


def bilinear_crop(img, x0, y0, w, h, out_size):
    ih, iw, c = img.shape
    cols = np.arange(out_size)
    sx = x0 + (cols + 0.5) * (w / out_size) - 0.5
    sy = y0 + (cols + 0.5) * (h / out_size) - 0.5
    fx = np.floor(sx)
    fy = np.floor(sy)
    ax = (sx - fx).astype(img.dtype)
    ay = (sy - fy).astype(img.dtype)
    x_lo = fx.astype(np.int64)
    y_lo = fy.astype(np.int64)

    def tap(yy, xx):
        valid = ((yy >= 0) & (yy < ih))[:, None] & ((xx >= 0) & (xx < iw))[None, :]
        vals = img[np.clip(yy, 0, ih - 1)[:, None], np.clip(xx, 0, iw - 1)[None, :], :]
        return np.where(valid[:, :, None], vals, 0)

    wy = ay[:, None, None]
    wx = ax[None, :, None]
    out = (
        tap(y_lo, x_lo) * (1 - wy) * (1 - wx)
        + tap(y_lo, x_lo + 1) * (1 - wy) * wx
        + tap(y_lo + 1, x_lo) * wy * (1 - wx)
        + tap(y_lo + 1, x_lo + 1) * wy * wx
    )
    return out.astype(img.dtype)
