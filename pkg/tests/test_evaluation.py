"""Precision/success curves and the re-initialization protocol."""

import json

import numpy as np
import pytest

from dagtrack import evaluation as ev
from dagtrack.errors import ShapeError


def _traj(boxes):
    return ev.Trajectory.from_boxes(np.asarray(boxes, np.float64))


def test_threshold_grids():
    assert len(ev.PRECISION_THRESHOLDS) == 51
    assert ev.PRECISION_THRESHOLDS[0] == 0 and ev.PRECISION_THRESHOLDS[50] == 50
    assert len(ev.SUCCESS_THRESHOLDS) == 21
    assert np.isclose(ev.SUCCESS_THRESHOLDS[1], 0.05)


def test_precision_hand_example():
    # Distances 5 and 25 px: only the first is within 20 px.
    gt = _traj([[0, 0, 10, 10], [0, 0, 10, 10]])
    pred = _traj([[5, 0, 10, 10], [25, 0, 10, 10]])
    curve, p20 = ev.precision_metrics(pred, gt)
    assert p20 == 0.5
    assert curve[4] == 0.0 and curve[5] == 0.5  # inclusive at the threshold
    assert curve[24] == 0.5 and curve[25] == 1.0
    assert curve[50] == 1.0


def test_success_exact_match_scores_twenty_over_twentyone():
    gt = _traj([[3, 4, 10, 12], [5, 6, 10, 12]])
    curve, auc = ev.success_metrics(gt, gt)
    # IoU == 1.0 passes every strict threshold except u = 1.0 itself.
    assert np.array_equal(curve, np.concatenate([np.ones(20), [0.0]]))
    assert np.isclose(auc, 20.0 / 21.0)


def test_success_disjoint_is_zero():
    gt = _traj([[0, 0, 5, 5]])
    pred = _traj([[50, 50, 5, 5]])
    curve, auc = ev.success_metrics(pred, gt)
    assert auc == 0.0 and curve.max() == 0.0


def test_success_half_overlap_hand_value():
    gt = _traj([[0, 0, 10, 10]])
    pred = _traj([[5, 0, 10, 10]])  # IoU = 50/150 = 1/3
    curve, auc = ev.success_metrics(pred, gt)
    passing = (ev.SUCCESS_THRESHOLDS < 1.0 / 3.0).sum()
    assert np.isclose(auc, passing / 21.0)


def test_curves_are_monotone():
    rng = np.random.default_rng(0)
    gt_boxes = np.column_stack([
        rng.uniform(0, 80, 100), rng.uniform(0, 60, 100),
        rng.uniform(5, 30, 100), rng.uniform(5, 30, 100),
    ])
    noise = rng.normal(0, 8, size=(100, 4))
    pred = _traj(gt_boxes + noise)
    gt = _traj(gt_boxes)
    p_curve, _ = ev.precision_metrics(pred, gt)
    s_curve, _ = ev.success_metrics(pred, gt)
    assert np.all(np.diff(p_curve) >= 0), "precision rises with the threshold"
    assert np.all(np.diff(s_curve) <= 0), "success falls with the threshold"


def test_frame_mismatch_raises():
    with pytest.raises(ShapeError):
        ev.precision_metrics(_traj([[0, 0, 2, 2]]), _traj([[0, 0, 2, 2]] * 2))
    a = ev.Trajectory(np.array([0, 2]), np.zeros((2, 4)) + 1)
    b = ev.Trajectory(np.array([0, 1]), np.zeros((2, 4)) + 1)
    with pytest.raises(ShapeError):
        ev.success_metrics(a, b)


def test_trajectory_validation():
    with pytest.raises(ShapeError):
        ev.Trajectory(np.array([0, 1]), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        ev.Trajectory(np.array([1, 0]), np.ones((2, 4)))


class _SeqStub:
    def __init__(self, n):
        self.boxes = np.tile([10.0, 10.0, 8.0, 8.0], (n, 1))


def test_vot_perfect_tracker_never_fails():
    seq = _SeqStub(40)

    def runner(s, start, init_box):
        return np.tile(init_box, (len(s.boxes) - start - 1, 1))

    failures, acc = ev.vot_style_eval(runner, seq, seq.boxes)
    assert failures == 0
    assert np.isclose(acc, 1.0)


def test_vot_far_tracker_fails_once_per_window():
    """Zero overlap everywhere: one failure per skip+burn_in frames."""
    seq = _SeqStub(40)

    def runner(s, start, init_box):
        return np.tile([200.0, 200.0, 8.0, 8.0], (len(s.boxes) - start - 1, 1))

    failures, acc = ev.vot_style_eval(runner, seq, seq.boxes, skip=5, burn_in=10)
    # Init at 0 fails at frame 10, reinit at 15 fails at 25, reinit at 30
    # fails at 40... which is past the end, so exactly two failures.
    assert failures == 2
    assert acc == 0.0


def test_vot_burn_in_excludes_early_frames_from_both_counts():
    seq = _SeqStub(20)
    calls = []

    def runner(s, start, init_box):
        calls.append(start)
        n = len(s.boxes) - start - 1
        preds = np.tile(init_box, (n, 1))
        preds[:9] = [200.0, 200.0, 8.0, 8.0]  # frames start+1..start+9 are junk
        return preds

    failures, acc = ev.vot_style_eval(runner, seq, seq.boxes, skip=5, burn_in=10)
    assert failures == 0, "burn-in frames must not trigger failures"
    assert np.isclose(acc, 1.0), "burn-in frames must not enter the accuracy mean"
    assert calls == [0]


def test_vot_single_mid_sequence_failure():
    seq = _SeqStub(30)

    def runner(s, start, init_box):
        n = len(s.boxes) - start - 1
        preds = np.tile(init_box, (n, 1))
        if start == 0:
            preds[14] = [200.0, 200.0, 8.0, 8.0]  # frame 15 is a miss
        return preds

    failures, acc = ev.vot_style_eval(runner, seq, seq.boxes, skip=5, burn_in=10)
    # Failure at 15, reinit at 20, burn-in covers 20..29: nothing checked after.
    assert failures == 1
    assert np.isclose(acc, 1.0)


def test_vot_runner_length_is_checked():
    seq = _SeqStub(15)

    def runner(s, start, init_box):
        return np.tile(init_box, (3, 1))

    with pytest.raises(ShapeError):
        ev.vot_style_eval(runner, seq, seq.boxes)


def test_report_round_trip_and_csv(tmp_path):
    gt = _traj([[0, 0, 10, 10], [10, 0, 10, 10]])
    report = ev.compute_metrics(gt, gt)
    report.vot_failures, report.vot_accuracy = 1, 0.75
    ev.save_metric_report(report, tmp_path, prefix="m")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["precision_at_20"] == 1.0
    assert doc["vot_failures"] == 1
    assert len(doc["success_curve"]) == 21
    lines = (tmp_path / "m_precision.csv").read_text().splitlines()
    assert lines[0] == "threshold,fraction"
    assert len(lines) == 52
    s_lines = (tmp_path / "m_success.csv").read_text().splitlines()
    assert s_lines[1] == "0,1.000000"
