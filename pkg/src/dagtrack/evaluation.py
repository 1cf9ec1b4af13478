"""Trajectory scoring: precision/success curves and re-init style evaluation.

Precision and success follow the usual benchmark conventions: 51 center
distance thresholds from 0 to 50 px, 21 overlap thresholds from 0 to 1
in steps of 0.05 with a strict IoU > u test, AUC as the unweighted mean
over that grid. The re-init protocol restarts a tracker from ground
truth after a zero-overlap failure with a skip gap and a burn-in window
excluded from both accuracy and failure detection.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tracker import iou

PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)


@dataclass
class Trajectory:
    frame_indices: np.ndarray
    boxes: np.ndarray
    scores: np.ndarray = None

    def __post_init__(self):
        self.frame_indices = np.asarray(self.frame_indices, np.int64)
        self.boxes = np.asarray(self.boxes, np.float64)
        if self.boxes.ndim != 2 or self.boxes.shape[1] != 4:
            raise ShapeError(f"trajectory boxes must be (n, 4), got {self.boxes.shape}")
        if len(self.frame_indices) != len(self.boxes):
            raise ShapeError("frame indices and boxes differ in length")
        if len(self.frame_indices) > 1 and not np.all(np.diff(self.frame_indices) > 0):
            raise ShapeError("frame indices must be strictly increasing")

    @classmethod
    def from_boxes(cls, boxes, scores=None):
        boxes = np.asarray(boxes, np.float64)
        return cls(np.arange(len(boxes)), boxes, scores)

    def __len__(self):
        return len(self.boxes)


@dataclass
class MetricReport:
    precision_curve: np.ndarray
    precision_at_20: float
    success_curve: np.ndarray
    success_auc: float
    vot_failures: int = None
    vot_accuracy: float = None

    def to_dict(self):
        return {
            "precision_thresholds": PRECISION_THRESHOLDS.tolist(),
            "precision_curve": [float(v) for v in self.precision_curve],
            "precision_at_20": float(self.precision_at_20),
            "success_thresholds": [float(v) for v in SUCCESS_THRESHOLDS],
            "success_curve": [float(v) for v in self.success_curve],
            "success_auc": float(self.success_auc),
            "vot_failures": self.vot_failures,
            "vot_accuracy": self.vot_accuracy,
        }


def _paired(traj, gt):
    if len(traj) != len(gt):
        raise ShapeError(f"trajectory has {len(traj)} frames, ground truth {len(gt)}")
    if not np.array_equal(traj.frame_indices, gt.frame_indices):
        raise ShapeError("trajectory and ground truth cover different frames")
    return traj.boxes, gt.boxes


def precision_metrics(traj, gt):
    """Center-distance precision curve plus the 20 px summary point."""
    a, b = _paired(traj, gt)
    ca = a[:, :2] + a[:, 2:] / 2.0
    cb = b[:, :2] + b[:, 2:] / 2.0
    dist = np.sqrt(((ca - cb) ** 2).sum(axis=1))
    curve = np.array([(dist <= t).mean() for t in PRECISION_THRESHOLDS])
    return curve, float(curve[20])


def success_metrics(traj, gt):
    """Overlap success curve (strict IoU > u) and its mean as AUC."""
    a, b = _paired(traj, gt)
    overlaps = iou(a, b)
    curve = np.array([(overlaps > u).mean() for u in SUCCESS_THRESHOLDS])
    return curve, float(curve.mean())


def compute_metrics(traj, gt):
    p_curve, p20 = precision_metrics(traj, gt)
    s_curve, auc = success_metrics(traj, gt)
    return MetricReport(p_curve, p20, s_curve, auc)


def vot_style_eval(runner, seq, gt_boxes=None, skip=5, burn_in=10):
    """Failure-count and accuracy under ground-truth re-initialization.

    `runner(seq, start, init_box)` must return predicted boxes for frames
    start+1 .. end. A failure is a frame with zero overlap; after one,
    the tracker restarts from ground truth `skip` frames later. The
    first `burn_in` frames after each (re-)initialization, counting the
    init frame itself, are excluded from accuracy and failure checks.
    """
    boxes = np.asarray(seq.boxes if gt_boxes is None else gt_boxes, np.float64)
    n = len(boxes)
    failures = 0
    overlaps = []
    init = 0
    while init < n - 1:
        preds = np.asarray(runner(seq, init, boxes[init]), np.float64)
        expected = n - init - 1
        if len(preds) != expected:
            raise ShapeError(
                f"runner returned {len(preds)} boxes for frames {init + 1}..{n - 1}"
            )
        failed_at = None
        for t in range(init + 1, n):
            if t - init < burn_in:
                continue
            ov = float(iou(preds[t - init - 1], boxes[t]))
            if ov == 0.0:
                failures += 1
                failed_at = t
                break
            overlaps.append(ov)
        if failed_at is None:
            break
        init = failed_at + skip
    accuracy = float(np.mean(overlaps)) if overlaps else 0.0
    return failures, accuracy


def save_metric_report(report, out_dir, prefix="metrics"):
    """JSON report plus two-column CSVs for each curve."""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{prefix}.json")
    with open(json_path, "w") as f:
        json.dump(report.to_dict(), f, indent=1)
        f.write("\n")
    for name, xs, ys in (
        ("precision", PRECISION_THRESHOLDS, report.precision_curve),
        ("success", SUCCESS_THRESHOLDS, report.success_curve),
    ):
        with open(os.path.join(out_dir, f"{prefix}_{name}.csv"), "w") as f:
            f.write("threshold,fraction\n")
            for x, y in zip(xs, ys):
                f.write(f"{x:g},{y:.6f}\n")
    return json_path
