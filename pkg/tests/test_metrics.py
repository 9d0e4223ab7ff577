import numpy as np
import pytest

from tokenmatch import UndefinedMetricError
from tokenmatch.metrics import evaluate, report_record


def _disk(cy, cx, r, size=32):
    yy, xx = np.mgrid[:size, :size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def test_iou_and_f1():
    a = _disk(10, 10, 5)
    assert evaluate(a, a, "iou") == 1.0
    assert evaluate(a, a, "f1") == 1.0
    b = np.zeros_like(a)
    assert evaluate(b, a, "iou") == 0.0
    with pytest.raises(UndefinedMetricError):
        evaluate(b, b, "iou")
    half = a.copy()
    half[:, 10:] = False
    expected = half.sum() / a.sum()
    assert evaluate(half, a, "iou") == pytest.approx(expected)


def test_mae_count():
    assert evaluate([3, 5], [4, 5], "mae_count") == pytest.approx(0.5)
    assert evaluate(7, 7, "mae_count") == 0.0


def test_pck():
    gt = np.array([[4.0, 4.0], [4.0, 24.0], [24.0, 4.0], [24.0, 24.0]])
    assert evaluate(gt, gt, "pck") == 1.0
    # diagonal = sqrt(20^2 + 20^2) ~ 28.28; threshold at alpha=0.1 is ~2.83
    close = gt + np.array([[2.0, 0.0]] * 4)
    assert evaluate(close, gt, "pck") == 1.0
    far = gt + np.array([[4.0, 0.0]] * 4)
    assert evaluate(far, gt, "pck") == 0.0
    mixed = gt.copy()
    mixed[0] += 100
    assert evaluate(mixed, gt, "pck") == pytest.approx(0.75)
    with pytest.raises(UndefinedMetricError):
        evaluate(gt, gt, "pck", visibility=np.zeros(4, dtype=bool))


def test_add_identity_pose():
    vertices = np.random.default_rng(0).uniform(-1, 1, size=(50, 3))
    eye = (np.eye(3), np.zeros(3))
    assert evaluate(eye, eye, "add", vertices=vertices, diameter=2.0) == 1.0
    # translation of 0.3 with diameter 2.0 -> mean distance 0.3 > 0.2
    off = (np.eye(3), np.array([0.3, 0.0, 0.0]))
    assert evaluate(off, eye, "add", vertices=vertices, diameter=2.0) == 0.0


def test_ap50_examples():
    gt = np.zeros((32, 32), dtype=np.int64)
    gt[_disk(8, 8, 5)] = 1
    gt[_disk(24, 24, 5)] = 2
    assert evaluate(gt, gt, "ap50_instances") == 1.0
    # one matching prediction + one spurious -> TP=1, FP=1, FN=0 over one GT
    single_gt = np.where(gt == 1, 1, 0)
    pred = np.zeros_like(gt)
    pred[_disk(8, 8, 5)] = 1
    pred[_disk(24, 24, 5)] = 2
    assert evaluate(pred, single_gt, "ap50_instances") == pytest.approx(0.5)
    with pytest.raises(UndefinedMetricError):
        evaluate(pred, np.zeros_like(gt), "ap50_instances")


def test_ap50_permutation_invariance_and_monotonicity():
    gt = np.zeros((32, 32), dtype=np.int64)
    gt[_disk(8, 8, 5)] = 1
    gt[_disk(24, 24, 5)] = 2
    pred_a = gt.copy()
    pred_b = np.where(gt == 1, 2, np.where(gt == 2, 1, 0))  # swapped ids
    assert evaluate(pred_a, gt, "ap50_instances") == evaluate(pred_b, gt, "ap50_instances")
    spurious = pred_a.copy()
    spurious[_disk(16, 8, 3)] = 3
    assert evaluate(spurious, gt, "ap50_instances") <= evaluate(pred_a, gt, "ap50_instances")


def test_boundary_f():
    a = _disk(16, 16, 8)
    assert evaluate(a, a, "boundary_F") == 1.0
    shifted = _disk(16, 17, 8)
    value = evaluate(shifted, a, "boundary_F")
    assert 0.5 < value <= 1.0
    far = _disk(16, 16, 2)
    assert evaluate(far, a, "boundary_F") < value
    with pytest.raises(UndefinedMetricError):
        evaluate(a, np.zeros_like(a), "boundary_F")
    assert evaluate(a, a, "region_J") == 1.0


def test_report_record_format():
    import json

    line = report_record("taskX", "iou", 0.5, 10, 7)
    record = json.loads(line)
    assert record == {
        "task_id": "taskX", "metric": "iou", "value": 0.5,
        "support_size": 10, "seed": 7,
    }
