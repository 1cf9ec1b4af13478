"""Network assembly, multi-domain training, and hard negative mining.

The network is a stack of conv / activation / max-pool stages. A fused
stage runs the four-sweep recurrent layer over the pooled map and
concatenates its output onto the pooled channels before the next stage.
Two fully-connected layers follow, then one 2-way classification branch
per training domain; only the active domain's branch is touched by an
update. All gradients are hand-derived and flow through the fusion
concat into both the pooling path and the recurrent path.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import activations as act
from . import layers
from .dagrnn import (
    DagRnnParams,
    dagrnn_backward,
    dagrnn_forward,
    init_dagrnn_params,
)
from .errors import ConfigError, NonFiniteError, ShapeError
from .lattice import build_all_directions


@dataclass
class NetConfig:
    input_size: int = 107
    input_channels: int = 3
    conv_channels: tuple = (96, 256, 512)
    conv_kernels: tuple = (7, 5, 3)
    conv_strides: tuple = (2, 2, 1)
    conv_pads: tuple = (0, 0, 0)
    pool_windows: tuple = (3, 3, 3)
    pool_strides: tuple = (2, 2, 2)
    fuse: tuple = (True, True, True)
    rnn_hidden: tuple = ()  # empty -> that stage's pooled channel count
    rnn_connectivity: int = 8
    fc_dims: tuple = (512, 512)
    num_domains: int = 1
    activation: str = "relu"
    rnn_phi: str = "relu"
    rnn_sigma: str = "identity"
    lr_conv: float = 1e-4
    lr_fc: float = 1e-3
    lr_rnn: float = 1e-3
    rnn_lr_decay: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_pos: int = 32
    batch_neg_pool: int = 1024
    batch_neg_mined: int = 96
    dtype: str = "float32"
    input_scale: float = 128.0

    def validate(self):
        n = len(self.conv_channels)
        for name in ("conv_kernels", "conv_strides", "conv_pads", "pool_windows",
                     "pool_strides", "fuse"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} must have one entry per stage ({n})")
        if self.rnn_hidden and len(self.rnn_hidden) != n:
            raise ConfigError(f"rnn_hidden must be empty or have {n} entries")
        if self.num_domains < 1:
            raise ConfigError("num_domains must be >= 1")
        if self.batch_neg_mined > self.batch_neg_pool:
            raise ConfigError("batch_neg_mined cannot exceed batch_neg_pool")
        if self.rnn_connectivity not in (4, 8):
            raise ConfigError("rnn_connectivity must be 4 or 8")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in d:
                v = d[f.name]
                kwargs[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kwargs).validate()


def tiny_config(**overrides):
    """Desk-scale configuration used by the test and demo pipelines."""
    base = dict(
        input_size=35,
        conv_channels=(8, 12, 16),
        conv_kernels=(5, 3, 2),
        conv_strides=(2, 1, 1),
        conv_pads=(0, 0, 0),
        pool_windows=(3, 3, 1),
        pool_strides=(2, 2, 1),
        fuse=(True, True, True),
        fc_dims=(24, 16),
        batch_pos=8,
        batch_neg_pool=32,
        batch_neg_mined=8,
        # Desk-scale nets train from scratch, so they take larger steps
        # than the full-scale defaults (which assume pretrained features).
        lr_conv=2e-3,
        lr_fc=1e-2,
    )
    base.update(overrides)
    return NetConfig(**base).validate()


def stage_geometry(config):
    """Closed-form per-stage shapes: conv out, pooled out, stage out."""
    h = w = config.input_size
    cin = config.input_channels
    shapes = []
    for s in range(len(config.conv_channels)):
        k, st, pad = config.conv_kernels[s], config.conv_strides[s], config.conv_pads[s]
        ch = conv_h = layers.conv2d_output_extent(h, k, st, pad)
        cw = layers.conv2d_output_extent(w, k, st, pad)
        if ch < 1 or cw < 1:
            raise ConfigError(f"stage {s}: convolution output is empty ({ch}x{cw})")
        pw, ps = config.pool_windows[s], config.pool_strides[s]
        if pw > ch or pw > cw:
            raise ConfigError(f"stage {s}: pool window {pw} exceeds map {ch}x{cw}")
        ph = (ch - pw) // ps + 1
        pww = (cw - pw) // ps + 1
        cc = config.conv_channels[s]
        if config.fuse[s]:
            hidden = config.rnn_hidden[s] if config.rnn_hidden else cc
            out_c = cc + hidden
        else:
            hidden = 0
            out_c = cc
        shapes.append(
            dict(conv=(conv_h, cw, cc), pooled=(ph, pww, cc), hidden=hidden,
                 out=(ph, pww, out_c))
        )
        h, w, cin = ph, pww, out_c
    return shapes


@dataclass
class Stage:
    conv: layers.Conv2dParams
    pool_window: int
    pool_stride: int
    fused: bool
    rnn: DagRnnParams = None
    dags: tuple = None


class FusionNet:
    def __init__(self, config, stages, fc, branches, input_mean):
        self.config = config
        self.stages = stages
        self.fc = fc
        self.branches = branches
        self.input_mean = input_mean
        self.momentum_buffers = {}
        self.act_code = act.activation_code(config.activation)

    # ---- parameter registry -------------------------------------------------

    def param_items(self):
        for i, st in enumerate(self.stages):
            yield f"stage{i}.conv.kernels", st.conv.kernels
            yield f"stage{i}.conv.bias", st.conv.bias
            if st.fused:
                for m in range(4):
                    yield f"stage{i}.rnn.u{m}", st.rnn.u_in[m]
                    yield f"stage{i}.rnn.w{m}", st.rnn.w_hh[m]
                    yield f"stage{i}.rnn.v{m}", st.rnn.v_out[m]
                    yield f"stage{i}.rnn.b{m}", st.rnn.b_h[m]
                yield f"stage{i}.rnn.c", st.rnn.c_out
        for i, fc in enumerate(self.fc):
            yield f"fc{i}.weights", fc.weights
            yield f"fc{i}.bias", fc.bias
        for k, br in enumerate(self.branches):
            yield f"branch{k}.weights", br.weights
            yield f"branch{k}.bias", br.bias

    def params(self):
        return dict(self.param_items())

    @property
    def num_params(self):
        return sum(int(p.size) for _, p in self.param_items())

    def lr_for(self, name, epoch):
        cfg = self.config
        if ".rnn." in name:
            return cfg.lr_rnn * cfg.rnn_lr_decay**epoch
        if ".conv." in name:
            return cfg.lr_conv
        return cfg.lr_fc

    # ---- input handling -----------------------------------------------------

    def normalize(self, patches):
        """Raw pixel patches (..., S, S, 3) to network input range."""
        x = np.asarray(patches, dtype=self.config.np_dtype)
        return (x - self.input_mean.astype(self.config.np_dtype)) / self.config.input_scale

    def _check_patch(self, x):
        s = self.config.input_size
        if x.shape != (s, s, self.config.input_channels):
            raise ShapeError(
                f"patch shape {x.shape} != expected {(s, s, self.config.input_channels)}"
            )

    # ---- forward / backward -------------------------------------------------

    def forward_sample(self, x, branch, want_cache=False):
        """One normalized patch -> 2 logits. Cache retained only on request."""
        self._check_patch(x)
        if not 0 <= branch < len(self.branches):
            raise ValueError(f"unknown branch {branch} (have {len(self.branches)})")
        caches = [] if want_cache else None
        taps = [] if want_cache else None
        h = x
        for i, st in enumerate(self.stages):
            c_out, c_cache = layers.conv2d_forward(h, st.conv)
            a_out, a_cache = layers.activation_forward(c_out, self.act_code)
            p_out, p_rec = layers.maxpool_forward(a_out, st.pool_window, st.pool_stride)
            if st.fused:
                acts = dagrnn_forward(p_out, st.dags, st.rnn)
                h, boundary = layers.concat_channels_forward(p_out, acts.y)
            else:
                acts, boundary = None, None
                h = p_out
            if want_cache:
                caches.append((c_cache, a_cache, p_rec, p_out, acts, boundary))
                taps.append((f"stage{i}", h))
        stage_out_shape = h.shape
        v = h.reshape(-1)
        fc_caches = []
        for i, fc in enumerate(self.fc):
            v, f_cache = layers.fc_forward(v, fc)
            v, fa_cache = layers.activation_forward(v, self.act_code)
            fc_caches.append((f_cache, fa_cache))
            if want_cache:
                taps.append((f"fc{i}", v))
        logits, br_cache = layers.fc_forward(v, self.branches[branch])
        if want_cache:
            taps.append((f"branch{branch}", logits))
            return logits, (caches, stage_out_shape, fc_caches, br_cache, branch, taps)
        return logits

    def backward_sample(self, grad_logits, cache, grads):
        """Accumulate parameter gradients for one sample into `grads`."""
        caches, stage_out_shape, fc_caches, br_cache, branch, _ = cache
        g, gw, gb = layers.fc_backward(grad_logits, br_cache)
        _acc(grads, f"branch{branch}.weights", gw)
        _acc(grads, f"branch{branch}.bias", gb)
        for i in range(len(self.fc) - 1, -1, -1):
            f_cache, fa_cache = fc_caches[i]
            g = layers.activation_backward(g, fa_cache)
            g, gw, gb = layers.fc_backward(g, f_cache)
            _acc(grads, f"fc{i}.weights", gw)
            _acc(grads, f"fc{i}.bias", gb)
        g = g.reshape(stage_out_shape)
        for i in range(len(self.stages) - 1, -1, -1):
            st = self.stages[i]
            c_cache, a_cache, p_rec, p_out, acts, boundary = caches[i]
            if st.fused:
                g_pool, g_rnn_y = layers.concat_channels_backward(g, boundary)
                rg = dagrnn_backward(p_out, acts, st.dags, st.rnn, g_rnn_y)
                for m in range(4):
                    _acc(grads, f"stage{i}.rnn.u{m}", rg.u_in[m])
                    _acc(grads, f"stage{i}.rnn.w{m}", rg.w_hh[m])
                    _acc(grads, f"stage{i}.rnn.v{m}", rg.v_out[m])
                    _acc(grads, f"stage{i}.rnn.b{m}", rg.b_h[m])
                _acc(grads, f"stage{i}.rnn.c", rg.c_out)
                g_pool = g_pool + rg.x
            else:
                g_pool = g
            g = layers.maxpool_backward(g_pool, p_rec)
            g = layers.activation_backward(g, a_cache)
            g, gk, gb = layers.conv2d_backward(g, c_cache)
            _acc(grads, f"stage{i}.conv.kernels", gk)
            _acc(grads, f"stage{i}.conv.bias", gb)
        return grads


def _acc(grads, name, g):
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g.copy()


def build_network(config, seed=0):
    """Deterministically initialize a network from a config and seed."""
    config.validate()
    shapes = stage_geometry(config)
    rng = np.random.default_rng(seed)
    dtype = config.np_dtype

    def mat(*shape):
        fan_in = shape[-1] if len(shape) == 2 else int(np.prod(shape[:-1]))
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape).astype(dtype)

    stages = []
    cin = config.input_channels
    for s, geo in enumerate(shapes):
        k = config.conv_kernels[s]
        cc = config.conv_channels[s]
        conv = layers.Conv2dParams(
            kernels=mat(k, k, cin, cc),
            bias=np.zeros(cc, dtype),
            stride=config.conv_strides[s],
            padding=config.conv_pads[s],
        )
        if config.fuse[s]:
            hidden = geo["hidden"]
            rnn = init_dagrnn_params(
                rng, cc, hidden, hidden, dtype, phi=config.rnn_phi, sigma=config.rnn_sigma
            )
            ph, pw, _ = geo["pooled"]
            dags = build_all_directions(ph, pw, config.rnn_connectivity)
            stages.append(Stage(conv, config.pool_windows[s], config.pool_strides[s],
                                True, rnn, dags))
        else:
            stages.append(Stage(conv, config.pool_windows[s], config.pool_strides[s], False))
        cin = geo["out"][2]

    flat_dim = int(np.prod(shapes[-1]["out"]))
    fc = []
    d_in = flat_dim
    for d_out in config.fc_dims:
        fc.append(layers.FcParams(mat(d_out, d_in), np.zeros(d_out, dtype)))
        d_in = d_out
    branches = [
        layers.FcParams(mat(2, d_in), np.zeros(2, dtype))
        for _ in range(config.num_domains)
    ]
    input_mean = np.full(config.input_channels, 128.0, np.float32)
    net = FusionNet(config, stages, fc, branches, input_mean)
    net.stage_shapes = shapes
    return net


# ---- scoring ----------------------------------------------------------------


def forward_scores(net, patches, branch):
    """Logits and positive-class probabilities for a batch of raw patches.

    Batched evaluation is defined as the per-sample loop, so it matches
    single-sample calls exactly.
    """
    x = net.normalize(patches)
    if x.ndim == 3:
        x = x[None]
    n = x.shape[0]
    logits = np.empty((n, 2), net.config.np_dtype)
    probs = np.empty(n, net.config.np_dtype)
    for i in range(n):
        lg = net.forward_sample(x[i], branch)
        logits[i] = lg
        shifted = lg - lg.max()
        e = np.exp(shifted)
        probs[i] = e[1] / e.sum()
    return logits, probs


def loss_and_grads(net, patches, labels, branch):
    """Mean cross-entropy over a batch plus accumulated parameter gradients."""
    x = net.normalize(patches)
    labels = np.asarray(labels)
    n = x.shape[0]
    grads = {}
    total = 0.0
    correct = 0
    for i in range(n):
        logits, cache = net.forward_sample(x[i], branch, want_cache=True)
        loss, probs = layers.softmax_cross_entropy(logits, int(labels[i]))
        if not np.isfinite(loss):
            raise NonFiniteError(
                f"non-finite loss; first bad layer: {_first_nonfinite(cache[5])}"
            )
        total += loss
        correct += int(np.argmax(logits) == labels[i])
        g = layers.softmax_cross_entropy_grad(probs, int(labels[i])) / n
        net.backward_sample(g, cache, grads)
    return total / n, correct / n, grads


def _first_nonfinite(taps):
    for name, arr in taps:
        if not np.all(np.isfinite(arr)):
            return name
    return "loss"


def sgd_step(net, grads, epoch=0, only_prefixes=None):
    """Momentum SGD with weight decay over the parameters present in `grads`."""
    cfg = net.config
    params = net.params()
    for name, g in grads.items():
        if only_prefixes is not None and not name.startswith(only_prefixes):
            continue
        p = params[name]
        lr = net.lr_for(name, epoch)
        if lr == 0.0:
            continue
        v = net.momentum_buffers.get(name)
        if v is None:
            v = np.zeros_like(p)
            net.momentum_buffers[name] = v
        v *= cfg.momentum
        v -= lr * (g + cfg.weight_decay * p)
        p += v


def backward_and_step(net, patches, labels, branch, epoch=0, only_prefixes=None):
    loss, acc, grads = loss_and_grads(net, patches, labels, branch)
    sgd_step(net, grads, epoch, only_prefixes)
    return loss, acc


# ---- hard negative mining ---------------------------------------------------


def mine_hard_negatives(net, pool, branch, count):
    """Indices of the `count` highest-scoring negatives; ties keep pool order."""
    n = len(pool)
    if count > n:
        raise ValueError(f"cannot mine {count} negatives from a pool of {n}")
    _, scores = forward_scores(net, pool, branch)
    order = np.argsort(-scores, kind="stable")
    return order[:count], scores


# ---- multi-domain training --------------------------------------------------


@dataclass
class DomainData:
    positives: np.ndarray  # (n, S, S, 3) raw pixel patches
    negatives: np.ndarray  # (m, S, S, 3)


@dataclass
class TrainLogRow:
    iteration: int
    domain: int
    loss: float
    accuracy: float


def set_input_mean(net, domains):
    """Per-channel pixel mean over all training patches."""
    sums = np.zeros(net.config.input_channels, np.float64)
    count = 0
    for d in domains:
        for arr in (d.positives, d.negatives):
            sums += arr.reshape(-1, arr.shape[-1]).sum(axis=0, dtype=np.float64)
            count += arr.shape[0] * arr.shape[1] * arr.shape[2]
    net.input_mean = (sums / max(count, 1)).astype(np.float32)


def train_multidomain(net, domains, iterations, seed=0, converge_window=50,
                      converge_tol=1e-4, log=None):
    """Round-robin multi-domain training: iteration t touches branch t mod K.

    Stops at the iteration cap or when the mean loss of the last window
    changes by less than `converge_tol` relatively vs the window before.
    """
    k = len(domains)
    if k != net.config.num_domains:
        raise ConfigError(
            f"{k} domains supplied but network has {net.config.num_domains} branches"
        )
    for i, d in enumerate(domains):
        if len(d.positives) == 0 or len(d.negatives) == 0:
            raise ConfigError(f"domain {i} has an empty sample set")
    cfg = net.config
    rng = np.random.default_rng(seed)
    rows = [] if log is None else log
    losses = []
    for t in range(iterations):
        dom = t % k
        data = domains[dom]
        pos_idx = rng.integers(0, len(data.positives), size=cfg.batch_pos)
        pool_idx = rng.integers(0, len(data.negatives), size=cfg.batch_neg_pool)
        pool = data.negatives[pool_idx]
        hard, _ = mine_hard_negatives(net, pool, dom, cfg.batch_neg_mined)
        patches = np.concatenate([data.positives[pos_idx], pool[hard]])
        labels = np.concatenate(
            [np.ones(cfg.batch_pos, np.int64), np.zeros(cfg.batch_neg_mined, np.int64)]
        )
        loss, acc = backward_and_step(net, patches, labels, dom, epoch=t // k)
        rows.append(TrainLogRow(t, dom, loss, acc))
        losses.append(loss)
        if len(losses) >= 2 * converge_window:
            recent = np.mean(losses[-converge_window:])
            previous = np.mean(losses[-2 * converge_window : -converge_window])
            if abs(previous - recent) / max(abs(previous), 1e-12) < converge_tol:
                break
    return rows


def domain_accuracy(net, domain, branch):
    """Training accuracy of one branch over its domain's stored samples."""
    _, pos_scores = forward_scores(net, domain.positives, branch)
    _, neg_scores = forward_scores(net, domain.negatives, branch)
    correct = int((pos_scores > 0.5).sum()) + int((neg_scores <= 0.5).sum())
    return correct / (len(pos_scores) + len(neg_scores))


# ---- specialization ---------------------------------------------------------


def specialize_for_tracking(net, seed=0):
    """Copy shared layers bit-exactly; replace the K branches with one fresh one."""
    cfg = dataclasses.replace(net.config, num_domains=1)
    rng = np.random.default_rng(seed)
    stages = []
    for st in net.stages:
        conv = layers.Conv2dParams(
            st.conv.kernels.copy(), st.conv.bias.copy(), st.conv.stride, st.conv.padding
        )
        if st.fused:
            rnn = DagRnnParams(
                [u.copy() for u in st.rnn.u_in],
                [w.copy() for w in st.rnn.w_hh],
                [v.copy() for v in st.rnn.v_out],
                [b.copy() for b in st.rnn.b_h],
                st.rnn.c_out.copy(),
                st.rnn.phi,
                st.rnn.sigma,
            )
            stages.append(Stage(conv, st.pool_window, st.pool_stride, True, rnn, st.dags))
        else:
            stages.append(Stage(conv, st.pool_window, st.pool_stride, False))
    fc = [layers.FcParams(f.weights.copy(), f.bias.copy()) for f in net.fc]
    d_in = fc[-1].weights.shape[0]
    s = 1.0 / np.sqrt(d_in)
    branch = layers.FcParams(
        rng.uniform(-s, s, size=(2, d_in)).astype(cfg.np_dtype),
        np.zeros(2, cfg.np_dtype),
    )
    out = FusionNet(cfg, stages, fc, [branch], net.input_mean.copy())
    out.stage_shapes = getattr(net, "stage_shapes", None)
    return out


def feature_vector(net, patch):
    """Flattened output of the last stage for one raw patch."""
    x = net.normalize(patch)
    net._check_patch(x)
    h = x
    for st in net.stages:
        c_out, _ = layers.conv2d_forward(h, st.conv)
        a_out, _ = layers.activation_forward(c_out, net.act_code)
        p_out, _ = layers.maxpool_forward(a_out, st.pool_window, st.pool_stride)
        if st.fused:
            acts = dagrnn_forward(p_out, st.dags, st.rnn)
            h, _ = layers.concat_channels_forward(p_out, acts.y)
        else:
            h = p_out
    return h.reshape(-1).astype(np.float64)
