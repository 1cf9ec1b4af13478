"""Online tracking: candidate sampling, selection, updates, refinement.

Boxes are (x, y, w, h) arrays with the top-left corner at (x, y).
Tracking runs a particle-style loop: Gaussian candidates around the
previous box, network scoring, argmax selection, ridge-regression box
refinement when confident, and threshold-gated short/long-term model
updates from bounded sample stores.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import model, seqio
from .errors import ConfigError, TrackingError

log = logging.getLogger(__name__)


def iou(a, b):
    """Intersection over union of (..., 4) boxes; 0 where the union is empty."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    x1 = np.maximum(a[..., 0], b[..., 0])
    y1 = np.maximum(a[..., 1], b[..., 1])
    x2 = np.minimum(a[..., 0] + a[..., 2], b[..., 0] + b[..., 2])
    y2 = np.minimum(a[..., 1] + a[..., 3], b[..., 1] + b[..., 3])
    inter = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    out = np.zeros(np.broadcast(inter, union).shape, np.float64)
    np.divide(inter, union, out=out, where=union > 0)
    return out[()]


@dataclass
class ParticleConfig:
    num_candidates: int = 300
    trans_std: float = 0.3  # fraction of mean(w, h)
    scale_std: float = 0.5  # in log-scale units of scale_base
    scale_base: float = 1.05
    min_size: float = 2.0

    def validate(self):
        if self.num_candidates < 1:
            raise ConfigError("num_candidates must be >= 1")
        if self.trans_std < 0 or self.scale_std < 0:
            raise ConfigError("sampling stds must be >= 0")
        return self


@dataclass
class UpdateConfig:
    score_threshold: float = 0.5
    short_horizon: int = 20
    long_horizon: int = 100
    long_period: int = 10
    pos_iou: float = 0.7
    neg_iou: float = 0.3
    frame_pos: int = 8
    frame_neg: int = 16
    first_pos: int = 32
    first_neg: int = 96
    first_iters: int = 15
    update_iters: int = 3
    update_pos: int = 8
    update_neg_pool: int = 24
    update_neg_mined: int = 8
    refine_enabled: bool = True
    reg_lambda: float = 1.0
    max_attempts: int = 60

    def validate(self):
        if not 0.0 < self.score_threshold < 1.0:
            raise ConfigError("score_threshold must lie in (0, 1)")
        if self.short_horizon > self.long_horizon:
            raise ConfigError("short_horizon cannot exceed long_horizon")
        if self.update_neg_mined > self.update_neg_pool:
            raise ConfigError("update_neg_mined cannot exceed update_neg_pool")
        return self


# ---- candidate sampling ---------------------------------------------------


def sample_candidates(prev, cfg, rng):
    """Gaussian translation and log-scale perturbations of the previous box.

    Draws are unit-normal then scaled, so zero stds reproduce `prev`
    exactly. Extents are clamped to stay positive; centers are not
    clamped (out-of-frame regions crop as zeros).
    """
    x, y, w, h = (float(v) for v in prev)
    n = cfg.num_candidates
    cx, cy = x + w / 2.0, y + h / 2.0
    std = cfg.trans_std * (w + h) / 2.0
    offsets = rng.normal(0.0, 1.0, size=(n, 2)) * std
    scales = cfg.scale_base ** (rng.normal(0.0, 1.0, size=n) * cfg.scale_std)
    nw = np.maximum(w * scales, cfg.min_size)
    nh = np.maximum(h * scales, cfg.min_size)
    out = np.empty((n, 4), np.float64)
    out[:, 0] = cx + offsets[:, 0] - nw / 2.0
    out[:, 1] = cy + offsets[:, 1] - nh / 2.0
    out[:, 2] = nw
    out[:, 3] = nh
    return out


def crop_candidates(frame, boxes, out_size):
    patches = np.empty((len(boxes), out_size, out_size, 3), np.float32)
    for i, b in enumerate(boxes):
        patches[i] = seqio.crop_resize_patch(frame, b, out_size)
    return patches


def score_and_select(net, frame, candidates):
    """Score every candidate; return (best box, its positive score, all scores).

    Ties go to the lowest candidate index.
    """
    candidates = np.asarray(candidates, np.float64)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise TrackingError("candidate set is empty")
    patches = crop_candidates(frame, candidates, net.config.input_size)
    _, scores = model.forward_scores(net, patches, 0)
    best = int(np.argmax(scores))
    return candidates[best].copy(), float(scores[best]), scores


# ---- training-sample collection -------------------------------------------


def collect_training_samples(frame_shape, box, n_pos, n_neg, rng,
                             pos_iou=0.7, neg_iou=0.3, max_attempts=60):
    """Jittered boxes around `box`: positives IoU >= pos_iou, negatives <= neg_iou.

    Rejection-samples in rounds until the counts are met; raises after
    `max_attempts` rounds so degenerate geometry fails loudly.
    """
    h_img, w_img = frame_shape[:2]
    x, y, w, h = (float(v) for v in box)
    cx, cy = x + w / 2.0, y + h / 2.0
    scale = (w + h) / 2.0
    pos, neg = [], []
    for _attempt in range(max_attempts):
        if len(pos) < n_pos:
            k = 2 * (n_pos - len(pos)) + 2
            off = rng.normal(0.0, 0.1 * scale, size=(k, 2))
            s = 1.05 ** (rng.normal(0.0, 0.3, size=k))
            cand = np.stack(
                [cx + off[:, 0] - w * s / 2, cy + off[:, 1] - h * s / 2, w * s, h * s],
                axis=1,
            )
            keep = iou(cand, np.array(box, np.float64)) >= pos_iou
            pos.extend(cand[keep][: n_pos - len(pos)])
        if len(neg) < n_neg:
            k = 2 * (n_neg - len(neg)) + 2
            ncx = rng.uniform(w / 2.0, w_img - w / 2.0, size=k) if w_img > w else np.full(k, cx)
            ncy = rng.uniform(h / 2.0, h_img - h / 2.0, size=k) if h_img > h else np.full(k, cy)
            s = 1.05 ** (rng.normal(0.0, 0.5, size=k))
            cand = np.stack(
                [ncx - w * s / 2, ncy - h * s / 2, w * s, h * s], axis=1
            )
            keep = iou(cand, np.array(box, np.float64)) <= neg_iou
            neg.extend(cand[keep][: n_neg - len(neg)])
        if len(pos) >= n_pos and len(neg) >= n_neg:
            return np.array(pos), np.array(neg)
    raise TrackingError(
        f"sample collection exhausted {max_attempts} rounds "
        f"(got {len(pos)}/{n_pos} positives, {len(neg)}/{n_neg} negatives)"
    )


# ---- box regression --------------------------------------------------------


@dataclass
class RegressionModel:
    weights: np.ndarray  # (d + 1, 4), last row is the bias
    lam: float

    @property
    def feature_dim(self):
        return self.weights.shape[0] - 1


def train_bbox_regressor(features, boxes, target, lam=1.0):
    """Ridge regression from features to normalized offsets toward `target`."""
    x = np.asarray(features, np.float64)
    boxes = np.asarray(boxes, np.float64)
    n, d = x.shape
    if n < 2 * (d + 1):
        raise TrackingError(
            f"regressor needs >= {2 * (d + 1)} samples for {d} features, got {n}"
        )
    tx, ty, tw, th = (float(v) for v in target)
    tcx, tcy = tx + tw / 2.0, ty + th / 2.0
    cx = boxes[:, 0] + boxes[:, 2] / 2.0
    cy = boxes[:, 1] + boxes[:, 3] / 2.0
    targets = np.stack(
        [
            (tcx - cx) / boxes[:, 2],
            (tcy - cy) / boxes[:, 3],
            np.log(tw / boxes[:, 2]),
            np.log(th / boxes[:, 3]),
        ],
        axis=1,
    )
    xb = np.concatenate([x, np.ones((n, 1))], axis=1)
    gram = xb.T @ xb + lam * np.eye(d + 1)
    try:
        weights = np.linalg.solve(gram, xb.T @ targets)
    except np.linalg.LinAlgError:
        raise TrackingError(f"singular regression system (lambda={lam})")
    return RegressionModel(weights, lam)


def apply_bbox_regressor(reg, box, feature):
    """Shift and rescale `box` by the model's predicted normalized offsets."""
    f = np.concatenate([np.asarray(feature, np.float64), [1.0]])
    if f.shape[0] != reg.weights.shape[0]:
        raise TrackingError(
            f"feature dim {f.shape[0] - 1} != regressor dim {reg.feature_dim}"
        )
    dx, dy, dw, dh = f @ reg.weights
    x, y, w, h = (float(v) for v in box)
    cx = x + w / 2.0 + dx * w
    cy = y + h / 2.0 + dy * h
    nw = w * np.exp(dw)
    nh = h * np.exp(dh)
    return np.array([cx - nw / 2.0, cy - nh / 2.0, nw, nh], np.float64)


# ---- tracker state and updates ---------------------------------------------


@dataclass
class TrackerState:
    box: np.ndarray
    frame_index: int = 0
    pos_store: list = field(default_factory=list)  # (frame stamp, patches)
    neg_store: list = field(default_factory=list)
    regressor: RegressionModel = None
    rng: np.random.Generator = None

    def trim_stores(self, ucfg):
        t = self.frame_index
        self.pos_store = [e for e in self.pos_store if e[0] > t - ucfg.long_horizon]
        self.neg_store = [e for e in self.neg_store if e[0] > t - ucfg.short_horizon]

    def stored_positives(self, horizon=None):
        t = self.frame_index
        entries = self.pos_store
        if horizon is not None:
            entries = [e for e in entries if e[0] > t - horizon]
        return np.concatenate([e[1] for e in entries]) if entries else None

    def stored_negatives(self):
        return np.concatenate([e[1] for e in self.neg_store]) if self.neg_store else None


def online_update(net, state, score, ucfg, force_long=False):
    """Threshold-gated model update; touches only FC and branch layers.

    Short-term path when the score falls below the threshold, long-term
    path on the periodic schedule. Returns a record of what ran.
    """
    short = score < ucfg.score_threshold and not force_long
    kind = "short" if short else "long"
    pos = state.stored_positives(ucfg.short_horizon if short else ucfg.long_horizon)
    neg = state.stored_negatives()
    if pos is None and neg is None:
        log.warning("frame %d: %s update skipped, both stores empty",
                    state.frame_index, kind)
        return {"kind": "skipped-" + kind, "iters": 0}
    if pos is None or neg is None:
        log.warning("frame %d: %s update skipped, one store empty",
                    state.frame_index, kind)
        return {"kind": "skipped-" + kind, "iters": 0}
    rng = state.rng
    mined_record = []
    for _ in range(ucfg.update_iters):
        pi = rng.integers(0, len(pos), size=ucfg.update_pos)
        ni = rng.integers(0, len(neg), size=min(ucfg.update_neg_pool, max(len(neg), 1)))
        pool = neg[ni]
        m = min(ucfg.update_neg_mined, len(pool))
        hard, _ = model.mine_hard_negatives(net, pool, 0, m)
        patches = np.concatenate([pos[pi], pool[hard]])
        labels = np.concatenate([np.ones(len(pi), np.int64), np.zeros(m, np.int64)])
        model.backward_and_step(net, patches, labels, 0,
                                only_prefixes=("fc", "branch"))
        mined_record.append(hard)
    return {"kind": kind, "iters": ucfg.update_iters, "mined": mined_record}


# ---- the tracking loop -----------------------------------------------------


@dataclass
class TrackResult:
    boxes: np.ndarray
    scores: np.ndarray
    raw_boxes: np.ndarray
    refined: np.ndarray
    updates: list


def _collect_patches(frame, box, n_pos, n_neg, rng, ucfg, size):
    pos_boxes, neg_boxes = collect_training_samples(
        frame.shape, box, n_pos, n_neg, rng,
        ucfg.pos_iou, ucfg.neg_iou, ucfg.max_attempts,
    )
    return (
        crop_candidates(frame, pos_boxes, size),
        crop_candidates(frame, neg_boxes, size),
        pos_boxes,
    )


def _first_frame_setup(net, frame, gt, state, ucfg):
    size = net.config.input_size
    pos, neg, pos_boxes = _collect_patches(
        frame, gt, ucfg.first_pos, ucfg.first_neg, state.rng, ucfg, size
    )
    state.pos_store.append((0, pos))
    state.neg_store.append((0, neg))
    for _ in range(ucfg.first_iters):
        pi = state.rng.integers(0, len(pos), size=ucfg.update_pos)
        ni = state.rng.integers(0, len(neg), size=ucfg.update_neg_pool)
        pool = neg[ni]
        hard, _ = model.mine_hard_negatives(net, pool, 0, ucfg.update_neg_mined)
        patches = np.concatenate([pos[pi], pool[hard]])
        labels = np.concatenate(
            [np.ones(ucfg.update_pos, np.int64), np.zeros(ucfg.update_neg_mined, np.int64)]
        )
        model.backward_and_step(net, patches, labels, 0,
                                only_prefixes=("fc", "branch"))
    if not ucfg.refine_enabled:
        return
    feat_dim = model.feature_vector(net, crop_candidates(frame, gt[None], size)[0]).shape[0]
    need = 2 * (feat_dim + 1)
    try:
        reg_boxes, _ = collect_training_samples(
            frame.shape, gt, need, 0, state.rng, 0.6, ucfg.neg_iou, ucfg.max_attempts
        )
    except TrackingError as e:
        log.warning("regressor training skipped: %s", e)
        return
    feats = np.stack([
        model.feature_vector(net, p)
        for p in crop_candidates(frame, reg_boxes, size)
    ])
    try:
        state.regressor = train_bbox_regressor(feats, reg_boxes, gt, ucfg.reg_lambda)
    except TrackingError as e:
        log.warning("regressor training skipped: %s", e)


def run_tracker(net, seq, pcfg=None, ucfg=None, seed=0):
    """Track `seq` from its first ground-truth box; deterministic per seed."""
    pcfg = (pcfg or ParticleConfig()).validate()
    ucfg = (ucfg or UpdateConfig()).validate()
    n = len(seq)
    if n < 2:
        raise TrackingError(f"sequence has {n} frames; need at least 2")
    size = net.config.input_size
    state = TrackerState(
        box=np.array(seq.boxes[0], np.float64), rng=np.random.default_rng(seed)
    )
    _first_frame_setup(net, seq.frames[0], state.box, state, ucfg)

    boxes = np.empty((n, 4), np.float64)
    raw_boxes = np.empty((n, 4), np.float64)
    scores = np.empty(n, np.float64)
    refined = np.zeros(n, bool)
    boxes[0] = raw_boxes[0] = state.box
    scores[0] = 1.0
    updates = []
    theta = ucfg.score_threshold
    for t in range(1, n):
        state.frame_index = t
        frame = seq.frames[t]
        if frame.shape != seq.frames[0].shape:
            raise TrackingError(f"frame {t}: shape {frame.shape} != {seq.frames[0].shape}")
        cands = sample_candidates(state.box, pcfg, state.rng)
        best, p_o, _ = score_and_select(net, frame, cands)
        raw_boxes[t] = best
        box = best
        if p_o > theta and ucfg.refine_enabled and state.regressor is not None:
            patch = seqio.crop_resize_patch(frame, best, size)
            feat = model.feature_vector(net, patch)
            box = apply_bbox_regressor(state.regressor, best, feat)
            box[2:] = np.maximum(box[2:], pcfg.min_size)
            refined[t] = True
        boxes[t] = box
        scores[t] = p_o
        state.box = box
        if p_o >= theta:
            pos, neg, _ = _collect_patches(
                frame, box, ucfg.frame_pos, ucfg.frame_neg, state.rng, ucfg, size
            )
            state.pos_store.append((t, pos))
            state.neg_store.append((t, neg))
        state.trim_stores(ucfg)
        if p_o < theta:
            updates.append((t, online_update(net, state, p_o, ucfg)["kind"]))
        elif ucfg.long_period > 0 and t % ucfg.long_period == 0:
            updates.append((t, online_update(net, state, p_o, ucfg, force_long=True)["kind"]))
    return TrackResult(boxes, scores, raw_boxes, refined, updates)


# ---- trajectory serialization ----------------------------------------------


def trajectory_to_csv(result, path):
    with open(path, "w") as f:
        f.write("frame,x,y,w,h,score\n")
        for i in range(len(result.scores)):
            x, y, w, h = result.boxes[i]
            f.write(f"{i},{x:.2f},{y:.2f},{w:.2f},{h:.2f},{result.scores[i]:.4f}\n")


def load_trajectory_csv(path):
    boxes, scores = [], []
    with open(path) as f:
        header = f.readline().strip()
        if header != "frame,x,y,w,h,score":
            raise TrackingError(f"{path}: unexpected trajectory header {header!r}")
        for i, line in enumerate(f):
            parts = line.strip().split(",")
            if len(parts) != 6:
                raise TrackingError(f"{path}: line {i + 2}: expected 6 fields")
            boxes.append([float(v) for v in parts[1:5]])
            scores.append(float(parts[5]))
    return np.array(boxes, np.float64), np.array(scores, np.float64)


def trajectory_to_json(result, path, seed=None, config_hash=None, name=""):
    import json

    doc = {
        "name": name,
        "seed": seed,
        "config_hash": config_hash,
        "frames": [
            {
                "frame": i,
                "box": [float(v) for v in result.boxes[i]],
                "score": float(result.scores[i]),
                "refined": bool(result.refined[i]),
            }
            for i in range(len(result.scores))
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def domain_from_sequence(seq, input_size, n_pos, n_neg, rng, pos_iou=0.7,
                         neg_iou=0.3, frame_step=1, layout=None):
    """Build a training domain (positive/negative patches) from a sequence.

    With a synthetic `layout` array (frames, objects, 4), half of each
    frame's negatives are jittered crops of the non-target objects, so
    the domain labels same-statistics distractors explicitly.
    """
    pos_all, neg_all = [], []
    frame_ids = list(range(0, len(seq), frame_step))
    per_pos = max(1, n_pos // len(frame_ids))
    per_neg = max(1, n_neg // len(frame_ids))
    for t in frame_ids:
        gt = seq.boxes[t] if len(seq.boxes) > 1 else seq.boxes[0]
        n_distract = 0
        if layout is not None and layout.shape[1] > 1:
            n_distract = min(per_neg // 2, 4 * (layout.shape[1] - 1))
        pb, nb = collect_training_samples(
            seq.frames[t].shape, gt, per_pos, per_neg - n_distract, rng,
            pos_iou, neg_iou,
        )
        pos_all.append(crop_candidates(seq.frames[t], pb, input_size))
        neg_all.append(crop_candidates(seq.frames[t], nb, input_size))
        if n_distract:
            boxes = []
            objs = layout[t, 1:]
            for k in range(n_distract):
                base = objs[k % len(objs)]
                jit = rng.normal(0.0, 0.05 * base[2], size=2)
                boxes.append([base[0] + jit[0], base[1] + jit[1], base[2], base[3]])
            neg_all.append(crop_candidates(seq.frames[t], np.array(boxes), input_size))
    return model.DomainData(np.concatenate(pos_all), np.concatenate(neg_all))
