"""Evaluation metric suite.

All metrics return a float in their documented range.  Instance AP50 uses
globally greedy IoU matching (prediction-order invariant); boundary F
extracts one-pixel boundaries morphologically and tolerates a radius of 1%
of the image diagonal.
"""

import json

import numpy as np
from scipy import ndimage

from .errors import InputError, UndefinedMetricError

DEFAULT_PCK_ALPHA = 0.1
DEFAULT_ADD_FRACTION = 0.1
BOUNDARY_TOLERANCE_FRACTION = 0.01


def _as_bool_mask(x):
    arr = np.asarray(x)
    if arr.dtype != bool:
        arr = arr > 0.5
    return arr


def mask_iou(pred, gt) -> float:
    pred, gt = _as_bool_mask(pred), _as_bool_mask(gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        raise UndefinedMetricError("IoU undefined: both masks empty")
    return float(np.logical_and(pred, gt).sum() / union)


def f1_score(pred, gt) -> float:
    pred, gt = _as_bool_mask(pred), _as_bool_mask(gt)
    tp = np.logical_and(pred, gt).sum()
    denom = pred.sum() + gt.sum()
    if denom == 0:
        raise UndefinedMetricError("F1 undefined: both masks empty")
    return float(2.0 * tp / denom)


def mae_count(pred_counts, gt_counts) -> float:
    pred = np.atleast_1d(np.asarray(pred_counts, dtype=np.float64))
    gt = np.atleast_1d(np.asarray(gt_counts, dtype=np.float64))
    if pred.shape != gt.shape:
        raise InputError("count arrays must have the same length")
    return float(np.abs(pred - gt).mean())


def pck(pred_coords, gt_coords, visibility=None, alpha=DEFAULT_PCK_ALPHA) -> float:
    """Fraction of visible keypoints within alpha * gt-bounding-box diagonal."""
    pred = np.asarray(pred_coords, dtype=np.float64)
    gt = np.asarray(gt_coords, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise InputError("keypoints must be [J, 2] arrays of matching shape")
    vis = np.ones(len(gt), dtype=bool) if visibility is None else np.asarray(visibility, bool)
    if not vis.any():
        raise UndefinedMetricError("PCK undefined: no visible keypoints")
    ref = gt[vis]
    diag = float(np.linalg.norm(ref.max(axis=0) - ref.min(axis=0)))
    if diag <= 0:
        raise UndefinedMetricError("PCK undefined: degenerate keypoint extent")
    dist = np.linalg.norm(pred[vis] - gt[vis], axis=1)
    ok = np.isfinite(dist) & (dist <= alpha * diag)
    return float(ok.mean())


def add_correct(pose_pred, pose_gt, vertices, diameter,
                fraction=DEFAULT_ADD_FRACTION) -> float:
    """1.0 iff the mean 3D vertex distance between poses is below
    fraction * diameter, else 0.0."""
    R_p, t_p = pose_pred
    R_g, t_g = pose_gt
    V = np.asarray(vertices, dtype=np.float64)
    a = V @ np.asarray(R_p, dtype=np.float64).T + np.asarray(t_p, dtype=np.float64)
    b = V @ np.asarray(R_g, dtype=np.float64).T + np.asarray(t_g, dtype=np.float64)
    mean_dist = float(np.linalg.norm(a - b, axis=1).mean())
    return 1.0 if mean_dist < fraction * float(diameter) else 0.0


def _instance_masks(index_map):
    arr = np.asarray(index_map)
    ids = [i for i in np.unique(arr) if i != 0]
    return [arr == i for i in ids]


def ap50_instances(pred, gt, iou_threshold: float = 0.5) -> float:
    """TP / (TP + FP + FN) with greedy highest-IoU-first matching.

    ``pred`` and ``gt`` are instance index maps (0 = background) or lists of
    binary masks.
    """
    pred_masks = pred if isinstance(pred, (list, tuple)) else _instance_masks(pred)
    gt_masks = gt if isinstance(gt, (list, tuple)) else _instance_masks(gt)
    pred_masks = [_as_bool_mask(m) for m in pred_masks]
    gt_masks = [_as_bool_mask(m) for m in gt_masks]
    if not gt_masks:
        raise UndefinedMetricError("AP50 undefined: no ground-truth instances")
    pairs = []
    for pi, pm in enumerate(pred_masks):
        for gi, gm in enumerate(gt_masks):
            inter = np.logical_and(pm, gm).sum()
            if inter == 0:
                continue
            union = np.logical_or(pm, gm).sum()
            iou = inter / union
            if iou >= iou_threshold:
                pairs.append((iou, pi, gi))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p, used_g = set(), set()
    tp = 0
    for iou, pi, gi in pairs:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        tp += 1
    fp = len(pred_masks) - tp
    fn = len(gt_masks) - tp
    return float(tp / (tp + fp + fn))


def _boundary(mask):
    mask = _as_bool_mask(mask)
    eroded = ndimage.binary_erosion(mask, structure=np.ones((3, 3)), border_value=0)
    return mask & ~eroded


def _disk(radius: float):
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy**2 + xx**2) <= radius**2


def boundary_f(pred, gt, tolerance_fraction=BOUNDARY_TOLERANCE_FRACTION) -> float:
    """F-measure between extracted mask boundaries within a tolerance radius."""
    pred, gt = _as_bool_mask(pred), _as_bool_mask(gt)
    if not gt.any():
        raise UndefinedMetricError("boundary F undefined: empty ground truth")
    pb, gb = _boundary(pred), _boundary(gt)
    if not pb.any() and not gb.any():
        return 1.0
    if not pb.any() or not gb.any():
        return 0.0
    radius = max(1.0, tolerance_fraction * float(np.hypot(*gt.shape)))
    disk = _disk(radius)
    gb_zone = ndimage.binary_dilation(gb, structure=disk)
    pb_zone = ndimage.binary_dilation(pb, structure=disk)
    precision = (pb & gb_zone).sum() / pb.sum()
    recall = (gb & pb_zone).sum() / gb.sum()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


METRICS = {
    "iou": mask_iou,
    "f1": f1_score,
    "mae_count": mae_count,
    "pck": pck,
    "add": add_correct,
    "ap50_instances": ap50_instances,
    "region_J": mask_iou,
    "boundary_F": boundary_f,
}


def evaluate(pred, gt, metric: str, **kwargs) -> float:
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}")
    return METRICS[metric](pred, gt, **kwargs)


def report_record(task_id: str, metric: str, value: float, support_size: int,
                  seed: int) -> str:
    """One line of the structured metric report stream."""
    return json.dumps(
        {
            "task_id": task_id,
            "metric": metric,
            "value": float(value),
            "support_size": int(support_size),
            "seed": int(seed),
        },
        sort_keys=True,
    )
