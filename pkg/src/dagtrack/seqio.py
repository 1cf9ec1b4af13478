"""Sequence input/output and synthetic sequence generation.

Frames are binary P6 images with maxval 255. A sequence directory holds
numbered frames plus groundtruth_rect.txt with one x,y,w,h line per
frame; coordinates are 1-based in the file and 0-based in memory.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import SequenceError, ShapeError, SynthError

# ---- P6 codec -----------------------------------------------------------


def write_ppm(path, img):
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise SequenceError(f"P6 writer needs uint8 HxWx3, got {img.dtype} {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def _read_token(f, path):
    """Next whitespace-delimited token, skipping # comments."""
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            if tok:
                return tok
            raise SequenceError(f"{path}: truncated header")
        if c == b"#":
            while c and c != b"\n":
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_ppm(path):
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic != b"P6":
            raise SequenceError(f"{path}: not a binary P6 file (magic {magic!r})")
        w = int(_read_token(f, path))
        h = int(_read_token(f, path))
        maxval = int(_read_token(f, path))
        if maxval != 255:
            raise SequenceError(f"{path}: unsupported maxval {maxval}")
        if w < 1 or h < 1:
            raise SequenceError(f"{path}: bad dimensions {w}x{h}")
        data = f.read(w * h * 3)
        if len(data) != w * h * 3:
            raise SequenceError(
                f"{path}: truncated pixel data ({len(data)} of {w * h * 3} bytes)"
            )
    return np.frombuffer(data, np.uint8).reshape(h, w, 3).copy()


# ---- sequences ----------------------------------------------------------


@dataclass
class Sequence:
    frames: list
    boxes: np.ndarray  # (n, 4) x, y, w, h, 0-based
    name: str = ""

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, np.float64)
        if self.boxes.ndim != 2 or self.boxes.shape[1] != 4:
            raise SequenceError(f"boxes must be (n, 4), got {self.boxes.shape}")
        # First-frame-only ground truth is allowed for tracking-only input.
        if len(self.boxes) not in (1, len(self.frames)):
            raise SequenceError(
                f"{len(self.frames)} frames but {len(self.boxes)} ground-truth boxes"
            )

    def __len__(self):
        return len(self.frames)


def parse_groundtruth(text, path="groundtruth_rect.txt"):
    boxes = []
    for i, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line:
            continue
        parts = line.replace("\t", ",").split(",")
        if len(parts) != 4:
            raise SequenceError(f"{path}: line {i + 1}: expected 4 fields, got {len(parts)}")
        try:
            x, y, w, h = (float(p) for p in parts)
        except ValueError:
            raise SequenceError(f"{path}: line {i + 1}: non-numeric field in {line!r}")
        boxes.append((x - 1.0, y - 1.0, w, h))
    if not boxes:
        raise SequenceError(f"{path}: no ground-truth boxes")
    return np.array(boxes, np.float64)


def load_sequence(directory):
    frame_dir = directory
    if os.path.isdir(os.path.join(directory, "img")):
        frame_dir = os.path.join(directory, "img")
    names = sorted(n for n in os.listdir(frame_dir) if n.endswith(".ppm"))
    if not names:
        raise SequenceError(f"{frame_dir}: no .ppm frames found")
    gt_path = os.path.join(directory, "groundtruth_rect.txt")
    if not os.path.exists(gt_path):
        raise SequenceError(f"{directory}: missing groundtruth_rect.txt")
    with open(gt_path) as f:
        boxes = parse_groundtruth(f.read(), gt_path)
    frames = [read_ppm(os.path.join(frame_dir, n)) for n in names]
    shape = frames[0].shape
    for n, fr in zip(names, frames):
        if fr.shape != shape:
            raise SequenceError(f"{n}: frame shape {fr.shape} != {shape}")
    return Sequence(frames, boxes, name=os.path.basename(os.path.abspath(directory)))


def save_sequence(seq, directory):
    img_dir = os.path.join(directory, "img")
    os.makedirs(img_dir, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_ppm(os.path.join(img_dir, f"{i + 1:04d}.ppm"), frame)
    with open(os.path.join(directory, "groundtruth_rect.txt"), "w") as f:
        for x, y, w, h in seq.boxes:
            f.write(f"{x + 1.0:.6f},{y + 1.0:.6f},{w:.6f},{h:.6f}\n")


# ---- patch extraction ---------------------------------------------------


def crop_resize_patch(frame, box, out_size):
    """Bilinear crop of `box` (x, y, w, h) resized to out_size square.

    Pixels sampled outside the frame read as zero.
    """
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise ShapeError(f"degenerate crop box w={w} h={h}")
    img = np.ascontiguousarray(np.asarray(frame, np.float32))
    if img.ndim != 3:
        raise ShapeError(f"frame must be HxWxC, got {img.shape}")
    return kernels.bilinear_crop(img, x, y, w, h, out_size)


# ---- synthetic sequences ------------------------------------------------


@dataclass
class SynthConfig:
    width: int = 96
    height: int = 72
    num_frames: int = 30
    object_size: int = 18  # square side, must be a multiple of 3
    num_distractors: int = 0
    noise_std: float = 3.0
    max_speed: float = 3.0
    min_separation: float = 0.0  # 0 -> 1.5 * object_size
    background: int = 32

    def validate(self):
        if self.object_size < 3 or self.object_size % 3 != 0:
            raise SynthError(f"object_size must be a positive multiple of 3, got {self.object_size}")
        if self.num_frames < 1:
            raise SynthError("num_frames must be >= 1")
        if self.object_size > min(self.width, self.height):
            raise SynthError(
                f"object_size {self.object_size} exceeds frame {self.width}x{self.height}"
            )
        if self.num_distractors < 0:
            raise SynthError("num_distractors must be >= 0")
        return self

    @property
    def separation(self):
        return self.min_separation if self.min_separation > 0 else 1.5 * self.object_size


def _pattern_tile(pattern, size):
    """Nearest-neighbor upscale of a 3x3x3 palette pattern to size x size."""
    reps = size // 3
    return np.repeat(np.repeat(pattern, reps, axis=0), reps, axis=1)


def _make_patterns(rng, count):
    """Target pattern plus `count` same-palette, different-layout patterns.

    All patterns share one 9-color palette derived from a random base
    color, so distractors match the target in color statistics and
    differ only in spatial arrangement.
    """
    base = rng.integers(96, 224, size=3).astype(np.float64)
    palette = np.empty((9, 3))
    for i in range(9):
        shift = rng.uniform(-80, 80, size=3)
        palette[i] = np.clip(base + shift, 16, 239)
    target = palette.reshape(3, 3, 3).astype(np.uint8)
    others = []
    for _ in range(count):
        for _attempt in range(100):
            perm = rng.permutation(9)
            if not np.array_equal(perm, np.arange(9)):
                break
        others.append(palette[perm].reshape(3, 3, 3).astype(np.uint8))
    return target, others


def _initial_positions(cfg, rng):
    """Center positions on a separation grid; error out if they cannot fit."""
    sep = cfg.separation
    half = cfg.object_size / 2.0
    lo_x, hi_x = half, cfg.width - half
    lo_y, hi_y = half, cfg.height - half
    nx = int((hi_x - lo_x) // sep) + 1
    ny = int((hi_y - lo_y) // sep) + 1
    need = 1 + cfg.num_distractors
    if nx * ny < need:
        raise SynthError(
            f"cannot place {need} objects with separation {sep:.1f} in "
            f"{cfg.width}x{cfg.height}"
        )
    cells = [(lo_x + i * sep, lo_y + j * sep) for j in range(ny) for i in range(nx)]
    idx = rng.choice(len(cells), size=need, replace=False)
    return np.array([cells[i] for i in idx], np.float64)


def _step_positions(pos, vel, cfg, rng):
    """Advance all centers one frame: noisy motion, wall bounce, separation."""
    half = cfg.object_size / 2.0
    lo = np.array([half, half])
    hi = np.array([cfg.width - half, cfg.height - half])
    sep = cfg.separation
    new = pos + vel + rng.normal(0.0, cfg.noise_std * 0.25, size=pos.shape)
    for k in range(len(new)):
        for d in range(2):
            if new[k, d] < lo[d]:
                new[k, d] = 2 * lo[d] - new[k, d]
                vel[k, d] = -vel[k, d]
            elif new[k, d] > hi[d]:
                new[k, d] = 2 * hi[d] - new[k, d]
                vel[k, d] = -vel[k, d]
        new[k] = np.clip(new[k], lo, hi)
    # Deterministic separation fix-up: push later objects away from earlier;
    # if walls block the push, relocate to the first free grid position.
    for k in range(1, len(new)):
        for _attempt in range(16):
            deltas = new[:k] - new[k]
            dists = np.sqrt((deltas**2).sum(axis=1))
            j = int(np.argmin(dists))
            if dists[j] >= sep:
                break
            away = new[k] - new[j]
            norm = np.sqrt((away**2).sum())
            if norm < 1e-9:
                away, norm = np.array([1.0, 0.0]), 1.0
            new[k] = np.clip(new[k] + away / norm * (sep - dists[j] + 0.5), lo, hi)
        else:
            new[k] = _free_position(new[:k], sep, lo, hi, cfg)
            vel[k] = -vel[k]
    return new, vel


def _free_position(others, sep, lo, hi, cfg):
    """First grid position at least `sep` from every box in `others`."""
    step = sep / 2.0
    ys = np.arange(lo[1], hi[1] + 1e-9, step)
    xs = np.arange(lo[0], hi[0] + 1e-9, step)
    for y in ys:
        for x in xs:
            cand = np.array([x, y])
            if np.all(np.sqrt(((others - cand) ** 2).sum(axis=1)) >= sep):
                return cand
    raise SynthError(
        f"could not keep objects {sep:.1f} apart in {cfg.width}x{cfg.height}"
    )


def synth_sequence(cfg, seed=0, return_layout=False):
    """Deterministic bouncing-pattern sequence with optional distractors.

    With return_layout, also returns the painted (frames, objects, 4)
    box array for all objects (target first) for geometric audits.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    target_pat, other_pats = _make_patterns(rng, cfg.num_distractors)
    tiles = [_pattern_tile(target_pat, cfg.object_size)] + [
        _pattern_tile(p, cfg.object_size) for p in other_pats
    ]
    pos = _initial_positions(cfg, rng)
    angles = rng.uniform(0, 2 * np.pi, size=len(pos))
    speeds = rng.uniform(0.5, 1.0, size=len(pos)) * cfg.max_speed
    vel = np.stack([np.cos(angles), np.sin(angles)], axis=1) * speeds[:, None]

    frames = []
    layout = np.empty((cfg.num_frames, len(pos), 4), np.float64)
    size = cfg.object_size
    for t in range(cfg.num_frames):
        if t > 0:
            pos, vel = _step_positions(pos, vel, cfg, rng)
        frame = np.full((cfg.height, cfg.width, 3), cfg.background, np.float64)
        # Target drawn last so it stays on top if separation ever allows contact.
        for k in range(len(pos) - 1, -1, -1):
            x0 = int(round(pos[k, 0] - size / 2.0))
            y0 = int(round(pos[k, 1] - size / 2.0))
            x0 = min(max(x0, 0), cfg.width - size)
            y0 = min(max(y0, 0), cfg.height - size)
            frame[y0 : y0 + size, x0 : x0 + size] = tiles[k]
            layout[t, k] = (x0, y0, size, size)
        frame += rng.normal(0.0, cfg.noise_std, size=frame.shape)
        frames.append(np.clip(frame, 0, 255).astype(np.uint8))
    seq = Sequence(frames, layout[:, 0].copy(), name=f"synth{seed}")
    return (seq, layout) if return_layout else seq
