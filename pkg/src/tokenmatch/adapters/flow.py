"""Instance segmentation through center-pointing flow fields.

Encoding writes, at every instance pixel, the unit vector toward the
instance's center (the medoid, which is guaranteed to lie inside the mask)
plus a foreground channel.  Decoding integrates each foreground pixel along
the flow and clusters the converged points; each cluster is one instance.
"""

from collections import namedtuple

import numpy as np
import torch
from scipy import ndimage
from scipy.spatial import cKDTree

FlowLabel = namedtuple("FlowLabel", ["flow", "foreground", "centers"])

MEDOID_EXACT_LIMIT = 4096
INTEGRATION_STEPS = 200
STEP_SIZE = 1.0
CLUSTER_RADIUS = 2.5


def instance_center(mask) -> tuple:
    """Medoid of the mask (exact for small instances, else the mask pixel
    nearest the centroid); always lies inside the mask."""
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if len(ys) == 0:
        raise ValueError("empty mask has no center")
    pts = np.stack([ys, xs], axis=1).astype(np.float64)
    if len(pts) <= MEDOID_EXACT_LIMIT:
        diff = pts[:, None, :] - pts[None, :, :]
        cost = np.sqrt((diff**2).sum(-1)).sum(axis=1)
        best = int(cost.argmin())
    else:
        centroid = pts.mean(axis=0)
        best = int(((pts - centroid) ** 2).sum(axis=1).argmin())
    return float(pts[best, 0]), float(pts[best, 1])


def flow_labels(index_map) -> FlowLabel:
    """index_map: [H, W] integers (0 = background) -> FlowLabel.

    flow: [2, H, W] with channel 0 = vertical, 1 = horizontal unit components
    toward the owning instance's center; zero outside the foreground and at
    the centers themselves.
    """
    arr = np.asarray(index_map)
    H, W = arr.shape
    flow = np.zeros((2, H, W), dtype=np.float32)
    fg = np.zeros((1, H, W), dtype=np.float32)
    centers = {}
    for inst in np.unique(arr):
        if inst == 0:
            continue
        mask = arr == inst
        cy, cx = instance_center(mask)
        centers[int(inst)] = (cy, cx)
        ys, xs = np.nonzero(mask)
        dy = cy - ys
        dx = cx - xs
        norm = np.hypot(dy, dx)
        nz = norm > 0
        flow[0, ys[nz], xs[nz]] = (dy[nz] / norm[nz]).astype(np.float32)
        flow[1, ys[nz], xs[nz]] = (dx[nz] / norm[nz]).astype(np.float32)
        fg[0, ys, xs] = 1.0
    return FlowLabel(
        flow=torch.from_numpy(flow), foreground=torch.from_numpy(fg), centers=centers
    )


def _bilinear(field, ys, xs):
    """Sample [H, W] at float positions (clamped to the border)."""
    H, W = field.shape
    ys = np.clip(ys, 0, H - 1)
    xs = np.clip(xs, 0, W - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = ys - y0
    fx = xs - x0
    top = field[y0, x0] * (1 - fx) + field[y0, x1] * fx
    bot = field[y1, x0] * (1 - fx) + field[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def decode_flow(flow, foreground, threshold: float = 0.5,
                steps: int = INTEGRATION_STEPS, step_size: float = STEP_SIZE,
                cluster_radius: float = CLUSTER_RADIUS,
                min_pixels: int = 1) -> np.ndarray:
    """Integrate foreground pixels along the flow and cluster the endpoints.

    Returns an instance index map [H, W] (0 = background); empty foreground
    gives an all-zero map.
    """
    fl = flow.detach().cpu().numpy() if isinstance(flow, torch.Tensor) else np.asarray(flow)
    fg = (
        foreground.detach().cpu().numpy()
        if isinstance(foreground, torch.Tensor)
        else np.asarray(foreground)
    )
    if fg.ndim == 3:
        fg = fg[0]
    H, W = fg.shape
    out = np.zeros((H, W), dtype=np.int32)
    rows, cols = np.nonzero(fg > threshold)
    if len(rows) == 0:
        return out
    ys = rows.astype(np.float64)
    xs = cols.astype(np.float64)
    vfield = fl[0].astype(np.float64)
    hfield = fl[1].astype(np.float64)
    for _ in range(steps):
        vy = _bilinear(vfield, ys, xs)
        vx = _bilinear(hfield, ys, xs)
        ys = np.clip(ys + step_size * vy, 0, H - 1)
        xs = np.clip(xs + step_size * vx, 0, W - 1)

    points = np.stack([ys, xs], axis=1)
    tree = cKDTree(points)
    pairs = tree.query_pairs(cluster_radius, output_type="ndarray")
    parent = np.arange(len(points))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra
    roots = np.array([find(i) for i in range(len(points))])
    labels = {}
    next_id = 1
    assignment = np.zeros(len(points), dtype=np.int32)
    counts = np.bincount(roots)
    for i, r in enumerate(roots):
        if counts[r] < min_pixels:
            continue
        if r not in labels:
            labels[r] = next_id
            next_id += 1
        assignment[i] = labels[r]
    out[rows, cols] = assignment
    return out
