"""Finite-difference verification suites for every differentiable piece.

Each check compares hand-derived gradients against central finite
differences in 64-bit and reports the worst relative error. The `full`
flag switches the end-to-end network check from sampled coordinates to
every coordinate of every parameter tensor.
"""

from dataclasses import dataclass

import numpy as np

from . import activations as act
from . import layers, model
from .dagrnn import dagrnn_backward, dagrnn_forward, init_dagrnn_params
from .lattice import build_all_directions
from .numeric import finite_diff_gradient, relative_error


@dataclass
class CheckResult:
    name: str
    max_err: float
    tol: float

    @property
    def passed(self):
        return self.max_err < self.tol


def _weighted(out, r):
    return float((out * r).sum())


def check_conv2d(rng, tol=1e-5):
    x = rng.standard_normal((5, 6, 2))
    p = layers.Conv2dParams(rng.standard_normal((3, 3, 2, 4)) * 0.5,
                            rng.standard_normal(4) * 0.1, stride=1, padding=1)
    out, cache = layers.conv2d_forward(x, p)
    r = rng.standard_normal(out.shape)
    gx, gk, gb = layers.conv2d_backward(r, cache)
    errs = []
    errs.append(relative_error(gx, finite_diff_gradient(
        lambda v: _weighted(layers.conv2d_forward(v, p)[0], r), x)))
    errs.append(relative_error(gk, finite_diff_gradient(
        lambda v: _weighted(layers.conv2d_forward(
            x, layers.Conv2dParams(v, p.bias, p.stride, p.padding))[0], r),
        p.kernels)))
    errs.append(relative_error(gb, finite_diff_gradient(
        lambda v: _weighted(layers.conv2d_forward(
            x, layers.Conv2dParams(p.kernels, v, p.stride, p.padding))[0], r),
        p.bias)))
    return CheckResult("conv2d", max(errs), tol)


def check_maxpool(rng, tol=1e-5):
    # Distinct values keep the check away from argmax ties.
    x = rng.permutation(6 * 6 * 2).astype(np.float64).reshape(6, 6, 2) * 0.13
    out, rec = layers.maxpool_forward(x, 2, 2)
    r = rng.standard_normal(out.shape)
    gx = layers.maxpool_backward(r, rec)
    num = finite_diff_gradient(
        lambda v: _weighted(layers.maxpool_forward(v, 2, 2)[0], r), x, step=1e-3)
    return CheckResult("maxpool", relative_error(gx, num), tol)


def check_fc(rng, tol=1e-5):
    x = rng.standard_normal((3, 2, 2))
    p = layers.FcParams(rng.standard_normal((5, 12)) * 0.3, rng.standard_normal(5) * 0.1)
    out, cache = layers.fc_forward(x, p)
    r = rng.standard_normal(out.shape)
    gx, gw, gb = layers.fc_backward(r, cache)
    errs = [
        relative_error(gx, finite_diff_gradient(
            lambda v: _weighted(layers.fc_forward(v, p)[0], r), x)),
        relative_error(gw, finite_diff_gradient(
            lambda v: _weighted(layers.fc_forward(x, layers.FcParams(v, p.bias))[0], r),
            p.weights)),
        relative_error(gb, finite_diff_gradient(
            lambda v: _weighted(layers.fc_forward(x, layers.FcParams(p.weights, v))[0], r),
            p.bias)),
    ]
    return CheckResult("fully_connected", max(errs), tol)


def check_activations(rng, tol=1e-5):
    errs = []
    for name in ("tanh", "sigmoid", "relu"):
        x = rng.standard_normal((4, 5))
        if name == "relu":
            x = np.where(np.abs(x) < 0.1, x + 0.2, x)  # keep clear of the kink
        code = act.activation_code(name)
        out, cache = layers.activation_forward(x, code)
        r = rng.standard_normal(out.shape)
        gx = layers.activation_backward(r, cache)
        num = finite_diff_gradient(
            lambda v: _weighted(layers.activation_forward(v, code)[0], r), x)
        errs.append(relative_error(gx, num))
    return CheckResult("activation", max(errs), tol)


def check_softmax(rng, tol=1e-5):
    logits = rng.standard_normal(2) * 3
    label = 1
    loss, probs = layers.softmax_cross_entropy(logits, label)
    g = layers.softmax_cross_entropy_grad(probs, label)
    num = finite_diff_gradient(
        lambda v: layers.softmax_cross_entropy(v, label)[0], logits)
    return CheckResult("softmax_cross_entropy", relative_error(g, num), tol)


def check_concat(rng, tol=1e-5):
    a = rng.standard_normal((3, 4, 2))
    b = rng.standard_normal((3, 4, 3))
    out, boundary = layers.concat_channels_forward(a, b)
    r = rng.standard_normal(out.shape)
    ga, gb = layers.concat_channels_backward(r, boundary)
    num_a = finite_diff_gradient(
        lambda v: _weighted(layers.concat_channels_forward(v, b)[0], r), a)
    num_b = finite_diff_gradient(
        lambda v: _weighted(layers.concat_channels_forward(a, v)[0], r), b)
    err = max(relative_error(ga, num_a), relative_error(gb, num_b))
    return CheckResult("concat_channels", err, tol)


def check_dagrnn(rng, tol=1e-5, height=4, width=5, cin=3, hidden=2):
    """All four directions, both connectivities, every parameter and the input."""
    worst = 0.0
    for conn in (4, 8):
        dags = build_all_directions(height, width, conn)
        params = init_dagrnn_params(rng, cin, hidden, hidden, np.float64,
                                    phi="tanh", sigma="tanh")
        x = rng.standard_normal((height, width, cin))
        acts = dagrnn_forward(x, dags, params)
        r = rng.standard_normal(acts.y.shape)
        grads = dagrnn_backward(x, acts, dags, params, r)

        def loss_with(p):
            return _weighted(dagrnn_forward(x, dags, p).y, r)

        pairs = [(grads.x, x, None)]
        for m in range(4):
            pairs.append((grads.u_in[m], params.u_in[m], ("u_in", m)))
            pairs.append((grads.w_hh[m], params.w_hh[m], ("w_hh", m)))
            pairs.append((grads.v_out[m], params.v_out[m], ("v_out", m)))
            pairs.append((grads.b_h[m], params.b_h[m], ("b_h", m)))
        pairs.append((grads.c_out, params.c_out, ("c_out", None)))
        for analytic, arr, _where in pairs:
            if arr is x:
                num = finite_diff_gradient(
                    lambda v: _weighted(dagrnn_forward(v, dags, params).y, r), x)
            else:
                def f(v, arr=arr):
                    old = arr.copy()
                    arr[...] = v
                    try:
                        return loss_with(params)
                    finally:
                        arr[...] = old
                num = finite_diff_gradient(f, arr)
            worst = max(worst, relative_error(analytic, num))
    return CheckResult("dag_rnn", worst, tol)


def check_end_to_end(rng, tol=1e-4, full=False, samples_per_tensor=6):
    """Tiny fused network in tanh mode, two samples, FD on parameters."""
    cfg = model.tiny_config(dtype="float64", activation="tanh",
                            rnn_phi="tanh", rnn_sigma="tanh")
    net = model.build_network(cfg, seed=11)
    patches = rng.uniform(0, 255, size=(2, cfg.input_size, cfg.input_size, 3))
    labels = [1, 0]
    _, _, grads = model.loss_and_grads(net, patches, labels, 0)
    params = net.params()

    def total_loss():
        x = net.normalize(patches)
        s = 0.0
        for i, lab in enumerate(labels):
            logits = net.forward_sample(x[i], 0)
            l, _ = layers.softmax_cross_entropy(logits, lab)
            s += l
        return s / len(labels)

    step = 1e-5
    # Central differences carry ~eps/(2*step) = 1e-11 absolute noise, so
    # coordinates below this floor are held to floor*tol = 1e-10 absolute
    # agreement instead of a meaningless relative ratio.
    floor = 1e-6
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        if full:
            idxs = range(flat.size)
        else:
            idxs = rng.choice(flat.size, size=min(samples_per_tensor, flat.size),
                              replace=False)
        for ix in idxs:
            old = flat[ix]
            flat[ix] = old + step
            f_plus = total_loss()
            flat[ix] = old - step
            f_minus = total_loss()
            flat[ix] = old
            num = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, float(relative_error(
                np.asarray(g[ix]), np.asarray(num), floor=floor)))
    return CheckResult("end_to_end" + ("_full" if full else ""), worst, tol)


def run_gradcheck(seed=0, full=False):
    rng = np.random.default_rng(seed)
    results = [
        check_conv2d(rng),
        check_maxpool(rng),
        check_fc(rng),
        check_activations(rng),
        check_softmax(rng),
        check_concat(rng),
        check_dagrnn(rng),
        check_end_to_end(rng, full=full),
    ]
    return results
