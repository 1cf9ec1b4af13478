"""Recurrent layer over the four lattice sweeps.

Forward, per sweep m with predecessor sets from its DAG:

    hid_m(v) = phi(U_m x(v) + W_m * sum of hid_m over predecessors + b_m)
    y(v)     = sigma(sum_m V_m hid_m(v) + c)

Backward walks each sweep in reverse topological order: the hidden
gradient at a vertex is the output term V_m^T g(v) plus W_m^T times the
accumulated pre-activation gradients of its successors; parameter
gradients are summed over vertices, and the input gradient at v is
sum_m U_m^T of that vertex's pre-activation gradient.

Boundary vertices simply have empty predecessor sums; there is no
phantom initial hidden state.
"""

from dataclasses import dataclass, field

import numpy as np

from . import activations as act
from .backend import kernels
from .errors import ShapeError, StaleCacheError
from .lattice import Direction

DIRECTION_ORDER = (Direction.SE, Direction.SW, Direction.NW, Direction.NE)


@dataclass
class DagRnnParams:
    u_in: list  # 4 x (D_h, C_in)
    w_hh: list  # 4 x (D_h, D_h)
    v_out: list  # 4 x (D_out, D_h)
    b_h: list  # 4 x (D_h,)
    c_out: np.ndarray  # (D_out,)
    phi: int = act.RELU
    sigma: int = act.IDENTITY

    @property
    def input_dim(self):
        return self.u_in[0].shape[1]

    @property
    def hidden_dim(self):
        return self.u_in[0].shape[0]

    @property
    def output_dim(self):
        return self.c_out.shape[0]


@dataclass
class DagRnnActivations:
    pre: list  # 4 x (HW, D_h) hidden pre-activations
    hid: list  # 4 x (HW, D_h)
    hpsum: list  # 4 x (HW, D_h) summed predecessor hidden states
    s: np.ndarray  # (HW, D_out) output pre-activation
    y: np.ndarray  # (H, W, D_out)
    input_shape: tuple = field(default=())


@dataclass
class DagRnnGrads:
    u_in: list
    w_hh: list
    v_out: list
    b_h: list
    c_out: np.ndarray
    x: np.ndarray  # (H, W, C_in)


def init_dagrnn_params(rng, input_dim, hidden_dim, output_dim, dtype=np.float32,
                       phi="relu", sigma="identity"):
    """Uniform [-s, s] init with s = 1/sqrt(fan-in); biases start at zero."""

    def mat(rows, cols):
        s = 1.0 / np.sqrt(cols)
        return rng.uniform(-s, s, size=(rows, cols)).astype(dtype)

    return DagRnnParams(
        u_in=[mat(hidden_dim, input_dim) for _ in range(4)],
        w_hh=[mat(hidden_dim, hidden_dim) for _ in range(4)],
        v_out=[mat(output_dim, hidden_dim) for _ in range(4)],
        b_h=[np.zeros(hidden_dim, dtype) for _ in range(4)],
        c_out=np.zeros(output_dim, dtype),
        phi=act.activation_code(phi) if isinstance(phi, str) else phi,
        sigma=act.activation_code(sigma) if isinstance(sigma, str) else sigma,
    )


def _check_dags(x, dags):
    if len(dags) != 4 or {d.direction for d in dags} != set(DIRECTION_ORDER):
        raise ShapeError("dagrnn: need exactly one DAG per direction SE/SW/NW/NE")
    for d in dags:
        if (d.height, d.width) != x.shape[:2]:
            raise ShapeError(
                f"dagrnn: lattice {d.height}x{d.width} does not match input {x.shape}"
            )


def dagrnn_forward(x, dags, params):
    """Run all four sweeps over x (H, W, C_in) and combine their outputs."""
    _check_dags(x, dags)
    if x.shape[2] != params.input_dim:
        raise ShapeError(
            f"dagrnn: input channels {x.shape[2]} != parameter input dim {params.input_dim}"
        )
    h, w, cin = x.shape
    x2 = np.ascontiguousarray(x.reshape(h * w, cin))
    pre, hid, hpsum = [], [], []
    s = np.zeros((h * w, params.output_dim), x.dtype)
    for m, dag in enumerate(dags):
        ux = x2 @ params.u_in[m].T + params.b_h[m]
        p, hm, hp = kernels.dag_forward(
            ux, params.w_hh[m], dag.topo, dag.pred_ptr, dag.pred_idx, params.phi
        )
        pre.append(p)
        hid.append(hm)
        hpsum.append(hp)
        s += hm @ params.v_out[m].T
    s += params.c_out
    y = act.apply_activation(s, params.sigma).reshape(h, w, params.output_dim)
    return DagRnnActivations(pre, hid, hpsum, s, y, input_shape=x.shape)


def dagrnn_backward(x, acts, dags, params, upstream):
    """Gradients of a scalar loss given its gradient w.r.t. the combined output."""
    _check_dags(x, dags)
    if acts.input_shape != x.shape:
        raise StaleCacheError(
            f"activations were computed for input {acts.input_shape}, got {x.shape}"
        )
    if upstream.shape != acts.y.shape:
        raise StaleCacheError(
            f"upstream gradient {upstream.shape} does not match output {acts.y.shape}"
        )
    if acts.hid[0].shape[1] != params.hidden_dim:
        raise StaleCacheError("activations do not match parameter dimensions")
    h, w, cin = x.shape
    n = h * w
    x2 = np.ascontiguousarray(x.reshape(n, cin))
    gy = upstream.reshape(n, params.output_dim) * act.activation_derivative(
        acts.s, params.sigma
    )
    grad_c = gy.sum(axis=0)
    grads = DagRnnGrads([], [], [], [], grad_c, np.zeros_like(x2))
    for m, dag in enumerate(dags):
        grads.v_out.append(gy.T @ acts.hid[m])
        base = gy @ params.v_out[m]
        w_t = np.ascontiguousarray(params.w_hh[m].T)
        da = kernels.dag_backward(
            base, w_t, acts.pre[m], dag.topo, dag.succ_ptr, dag.succ_idx, params.phi
        )
        grads.u_in.append(da.T @ x2)
        grads.w_hh.append(da.T @ acts.hpsum[m])
        grads.b_h.append(da.sum(axis=0))
        grads.x += da @ params.u_in[m]
    grads.x = grads.x.reshape(h, w, cin)
    return grads
