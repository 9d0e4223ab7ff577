"""Synthetic task corpus.

Scenes place random geometric shapes (circle, square, triangle, ring, cross)
on a smooth background; all labels are analytically exact.  Five family
generators cover the verification needs:

  shapes     per-class segmentation + signed-distance regression channels,
             plus autoencoding and texture-edge low-level channels
  segonly    one segmentation channel for a single target class
  keypoints  corner heatmaps of a single carrier shape (3 for triangles,
             4 for squares)
  stereo     bi-modal pairs whose second modality shifts every shape by a
             per-shape disparity; labels: disparity map, any-shape mask, edges
  clicks     bi-modal interactive segmentation: the second modality renders a
             Gaussian click mixture inside chosen instances, the label is the
             union of the clicked instances

Generation is a pure function of (spec, seed, dataset, index): regenerating
with the same seed reproduces every file byte for byte.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .adapters.clicks import render_gaussian_mixture, sample_click_centers
from .data import safe_name
from .errors import ConfigError
from .seeding import numpy_rng
from .tasks import DatasetEntry, DatasetManifest, TaskDescriptor
from . import tsr

SHAPE_CLASSES = ("circle", "square", "triangle", "ring", "cross")
SDF_SCALE = 16.0
DISPARITY_RANGE = (2.0, 6.0)
DISPARITY_NORM = 8.0
KP_SIGMA = 2.0
# Per-corner signature colors; joints must be locally distinguishable.
KP_MARKER_COLORS = (
    (1.00, 0.92, 0.15),
    (0.15, 0.90, 1.00),
    (1.00, 0.25, 0.85),
    (0.25, 1.00, 0.35),
)


@dataclass(frozen=True)
class FamilySpec:
    dataset_id: str
    family: str  # shapes | segonly | keypoints | stereo | clicks
    examples: int
    classes: tuple = ("circle", "square", "triangle")
    carrier: str = "triangle"  # keypoints family
    target_class: str = None  # segonly / clicks families

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.family not in ("shapes", "segonly", "keypoints", "stereo", "clicks"):
            raise ConfigError(f"unknown family {self.family!r}")
        for cls in self.classes:
            if cls not in SHAPE_CLASSES:
                raise ConfigError(f"unknown shape class {cls!r}")


@dataclass(frozen=True)
class SynthSpec:
    image_size: tuple = (64, 64)
    families: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(self.image_size))
        object.__setattr__(self, "families", tuple(self.families))


def desk_train_spec(scale: float = 1.0) -> SynthSpec:
    n = lambda k: max(16, int(round(k * scale)))
    return SynthSpec(
        image_size=(64, 64),
        families=(
            FamilySpec("shapes-rgb", "shapes", n(256), ("circle", "square", "triangle")),
            FamilySpec("tri-kp", "keypoints", n(192), carrier="triangle"),
            FamilySpec("stereo-pairs", "stereo", n(224), ("circle", "square", "triangle")),
        ),
    )


def desk_holdout_spec(scale: float = 1.0) -> SynthSpec:
    n = lambda k: max(16, int(round(k * scale)))
    return SynthSpec(
        image_size=(64, 64),
        families=(
            FamilySpec("ring-seg", "segonly", n(72), ("ring", "square"), target_class="ring"),
            FamilySpec("corner-kp", "keypoints", n(72), carrier="square"),
            FamilySpec("ring-clicks", "clicks", n(72), ("ring", "circle"), target_class="ring"),
        ),
    )


# -- geometry ---------------------------------------------------------------


def shape_mask(cls: str, cy: float, cx: float, r: float, theta: float, size) -> np.ndarray:
    H, W = size
    yy = np.arange(H, dtype=np.float64)[:, None] - cy
    xx = np.arange(W, dtype=np.float64)[None, :] - cx
    if cls == "circle":
        return yy**2 + xx**2 <= r**2
    if cls == "ring":
        d2 = yy**2 + xx**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if cls == "square":
        c, s = np.cos(theta), np.sin(theta)
        u = c * xx + s * yy
        v = -s * xx + c * yy
        return np.maximum(np.abs(u), np.abs(v)) <= r * 0.82
    if cls == "cross":
        c, s = np.cos(theta), np.sin(theta)
        u = c * xx + s * yy
        v = -s * xx + c * yy
        w = 0.35 * r
        return ((np.abs(u) <= w) & (np.abs(v) <= r)) | ((np.abs(v) <= w) & (np.abs(u) <= r))
    if cls == "triangle":
        corners = shape_corners("triangle", cy, cx, r, theta)
        return _polygon_mask(corners, size)
    raise ConfigError(f"unknown shape class {cls!r}")


def shape_corners(cls: str, cy: float, cx: float, r: float, theta: float) -> np.ndarray:
    """Canonical corner coordinates (row, col): 3 vertices for triangles,
    4 corners for squares, ordered by their angle parameter."""
    if cls == "triangle":
        angles = theta + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        return np.stack([cy + r * np.sin(angles), cx + r * np.cos(angles)], axis=1)
    if cls == "square":
        half = r * 0.82
        angles = theta + np.array([np.pi / 4, 3 * np.pi / 4, 5 * np.pi / 4, 7 * np.pi / 4])
        rad = half * np.sqrt(2.0)
        return np.stack([cy + rad * np.sin(angles), cx + rad * np.cos(angles)], axis=1)
    raise ConfigError(f"no corner definition for {cls!r}")


def _polygon_mask(corners, size) -> np.ndarray:
    H, W = size
    yy = np.arange(H, dtype=np.float64)[:, None]
    xx = np.arange(W, dtype=np.float64)[None, :]
    mask = np.ones((H, W), dtype=bool)
    n = len(corners)
    area = 0.0
    for i in range(n):
        y0, x0 = corners[i]
        y1, x1 = corners[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    orientation = 1.0 if area > 0 else -1.0
    for i in range(n):
        y0, x0 = corners[i]
        y1, x1 = corners[(i + 1) % n]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        mask &= orientation * cross >= 0
    return mask


# -- rendering ---------------------------------------------------------------


def _smooth_background(rng, size) -> np.ndarray:
    H, W = size
    coarse = rng.uniform(0.12, 0.42, size=(3, 4, 4)).astype(np.float32)
    up = F.interpolate(
        torch.from_numpy(coarse).unsqueeze(0), size=(H, W), mode="bilinear",
        align_corners=False,
    )
    return up.squeeze(0).numpy()


def _sample_shapes(rng, classes, size, count_range=(2, 4)):
    H, W = size
    base = min(H, W)
    n = int(rng.integers(count_range[0], count_range[1] + 1))
    shapes = []
    for _ in range(n):
        cls = str(rng.choice(list(classes)))
        r = float(rng.uniform(0.11 * base, 0.20 * base))
        cy = float(rng.uniform(r + 1, H - r - 1))
        cx = float(rng.uniform(r + 1, W - r - 1))
        theta = float(rng.uniform(0, 2 * np.pi))
        color = rng.uniform(0.55, 1.0, size=3).astype(np.float32)
        disparity = float(rng.uniform(*DISPARITY_RANGE))
        shapes.append(
            {"cls": cls, "cy": cy, "cx": cx, "r": r, "theta": theta,
             "color": color, "disparity": disparity}
        )
    return shapes


def _render(shapes, background, size, x_shift_key=None):
    """Draw shapes back to front; returns (image [3,H,W], visible masks list)."""
    H, W = size
    image = background.copy()
    full_masks = []
    for sh in shapes:
        cx = sh["cx"] - (sh[x_shift_key] if x_shift_key else 0.0)
        full_masks.append(shape_mask(sh["cls"], sh["cy"], cx, sh["r"], sh["theta"], size))
    visible = []
    for i, mask in enumerate(full_masks):
        vis = mask.copy()
        for later in full_masks[i + 1 :]:
            vis &= ~later
        visible.append(vis)
        image[:, vis] = shapes[i]["color"][:, None]
    return image, visible


def _sobel_edge(image) -> np.ndarray:
    gray = image.mean(axis=0)
    gy = ndimage.sobel(gray, axis=0)
    gx = ndimage.sobel(gray, axis=1)
    mag = np.hypot(gy, gx)
    if mag.max() > 0:
        mag = mag / mag.max()
    return mag.astype(np.float32)


def _signed_distance_label(mask, size) -> np.ndarray:
    if not mask.any():
        return np.full(size, 0.0, dtype=np.float32)
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    sdf = inside - outside
    return np.clip(0.5 + sdf / SDF_SCALE, 0.0, 1.0).astype(np.float32)


def _class_union(shapes, visible, cls) -> np.ndarray:
    out = np.zeros(visible[0].shape, dtype=bool)
    for sh, vis in zip(shapes, visible):
        if sh["cls"] == cls:
            out |= vis
    return out


# -- families -----------------------------------------------------------------


def family_tasks(spec: FamilySpec, image_size) -> tuple:
    ds = spec.dataset_id
    res = tuple(image_size)
    tasks = []

    def add(task_id, group, ttype, modality, channel, loss):
        tasks.append(
            TaskDescriptor(
                task_id=task_id, group_id=group, dataset_id=ds, task_type=ttype,
                modality_count=modality, channel_index=channel, loss_kind=loss,
                resolution=res,
            )
        )

    if spec.family == "shapes":
        for i, cls in enumerate(spec.classes):
            add(f"{ds}/seg-{cls}", f"{ds}/seg", "categorical", 1, i, "bce")
        for i, cls in enumerate(spec.classes):
            add(f"{ds}/sdf-{cls}", f"{ds}/sdf", "continuous", 1, i, "l1")
        for i, ch in enumerate("rgb"):
            add(f"{ds}/auto-{ch}", f"{ds}/auto", "low_level", 1, i, "l1")
        add(f"{ds}/edge", f"{ds}/edge", "low_level", 1, 0, "l1")
    elif spec.family == "segonly":
        cls = spec.target_class or spec.classes[0]
        add(f"{ds}/seg-{cls}", f"{ds}/seg", "categorical", 1, 0, "bce")
    elif spec.family == "keypoints":
        J = 3 if spec.carrier == "triangle" else 4
        for j in range(J):
            add(f"{ds}/kp{j}", f"{ds}/kp", "categorical", 1, j, "spatial_softmax")
    elif spec.family == "stereo":
        add(f"{ds}/disparity", f"{ds}/disparity", "continuous", 2, 0, "l1")
        add(f"{ds}/seg-any", f"{ds}/seg-any", "categorical", 2, 0, "bce")
        add(f"{ds}/edge", f"{ds}/edge", "low_level", 2, 0, "l1")
    elif spec.family == "clicks":
        cls = spec.target_class or spec.classes[0]
        add(f"{ds}/click-seg-{cls}", f"{ds}/click-seg", "categorical", 2, 0, "bce")
    return tuple(tasks)


def generate_example(spec: FamilySpec, image_size, seed: int, index: int):
    """Returns (image [I, 3, H, W] float32, {task_id: label [1, H, W]}, meta)."""
    size = tuple(image_size)
    rng = numpy_rng(seed, "synth", spec.dataset_id, index)
    ds = spec.dataset_id
    background = _smooth_background(rng, size)
    labels = {}
    meta = {}

    if spec.family in ("shapes", "segonly"):
        shapes = _sample_shapes(rng, spec.classes, size)
        if spec.family == "segonly":
            # Guarantee a visible target instance: the last-drawn shape is
            # never occluded.
            cls = spec.target_class or spec.classes[0]
            if not any(sh["cls"] == cls for sh in shapes):
                shapes[-1] = dict(shapes[-1], cls=cls)
        image, visible = _render(shapes, background, size)
        if spec.family == "segonly":
            union = _class_union(shapes, visible, cls)
            if not union.any():
                shapes[-1] = dict(shapes[-1], cls=cls)
                image, visible = _render(shapes, background, size)
                union = _class_union(shapes, visible, cls)
            labels[f"{ds}/seg-{cls}"] = union.astype(np.float32)
        else:
            for cls in spec.classes:
                union = _class_union(shapes, visible, cls)
                labels[f"{ds}/seg-{cls}"] = union.astype(np.float32)
                labels[f"{ds}/sdf-{cls}"] = _signed_distance_label(union, size)
            for i, ch in enumerate("rgb"):
                labels[f"{ds}/auto-{ch}"] = image[i].copy()
            labels[f"{ds}/edge"] = _sobel_edge(image)
        stack = image[None]
        meta["shapes"] = shapes

    elif spec.family == "keypoints":
        H, W = size
        base = min(H, W)
        r = float(rng.uniform(0.16 * base, 0.25 * base))
        cy = float(rng.uniform(r + 2, H - r - 2))
        cx = float(rng.uniform(r + 2, W - r - 2))
        # Corner identity must be recoverable from the image: restrict the
        # rotation so corners stay in disjoint angular sectors, and mark each
        # corner with its own signature color (joints are locally distinctive).
        symmetry = 2 * np.pi / (3 if spec.carrier == "triangle" else 4)
        theta = float(rng.uniform(0, 0.8 * symmetry))
        color = rng.uniform(0.55, 1.0, size=3).astype(np.float32)
        shapes = [{"cls": spec.carrier, "cy": cy, "cx": cx, "r": r, "theta": theta,
                   "color": color, "disparity": 0.0}]
        image, _ = _render(shapes, background, size)
        corners = shape_corners(spec.carrier, cy, cx, r, theta)
        corners = np.clip(corners, 0, [[H - 1, W - 1]])
        yy = np.arange(H, dtype=np.float64)[:, None]
        xx = np.arange(W, dtype=np.float64)[None, :]
        marker_r = max(1.5, 0.22 * r)
        for j, (ky, kx) in enumerate(corners):
            marker = (yy - ky) ** 2 + (xx - kx) ** 2 <= marker_r**2
            image[:, marker] = np.array(KP_MARKER_COLORS[j], dtype=np.float32)[:, None]
        for j, (ky, kx) in enumerate(corners):
            g = np.exp(-((yy - ky) ** 2 + (xx - kx) ** 2) / (2 * KP_SIGMA**2))
            labels[f"{ds}/kp{j}"] = (g / g.max()).astype(np.float32)
        stack = image[None]
        meta["corners"] = corners
        meta["shapes"] = shapes

    elif spec.family == "stereo":
        shapes = _sample_shapes(rng, spec.classes, size)
        left, visible = _render(shapes, background, size)
        right, _ = _render(shapes, background, size, x_shift_key="disparity")
        disparity = np.zeros(size, dtype=np.float32)
        union = np.zeros(size, dtype=bool)
        for sh, vis in zip(shapes, visible):
            disparity[vis] = sh["disparity"] / DISPARITY_NORM
            union |= vis
        labels[f"{ds}/disparity"] = disparity
        labels[f"{ds}/seg-any"] = union.astype(np.float32)
        labels[f"{ds}/edge"] = _sobel_edge(left)
        stack = np.stack([left, right])
        meta["shapes"] = shapes

    elif spec.family == "clicks":
        cls = spec.target_class or spec.classes[0]
        # Guarantee at least one clickable instance of the target class.
        shapes = _sample_shapes(rng, spec.classes, size, count_range=(2, 4))
        if not any(sh["cls"] == cls for sh in shapes):
            shapes[0] = dict(shapes[0], cls=cls)
        image, visible = _render(shapes, background, size)
        instances = [vis for sh, vis in zip(shapes, visible) if sh["cls"] == cls and vis.any()]
        if not instances:
            # Occluded into nothing: fall back to the full analytic mask.
            idx = next(i for i, sh in enumerate(shapes) if sh["cls"] == cls)
            instances = [shape_mask(cls, shapes[idx]["cy"], shapes[idx]["cx"],
                                    shapes[idx]["r"], shapes[idx]["theta"], size)]
        chosen, centers = sample_click_centers(instances, rng)
        mixture = render_gaussian_mixture(centers, size).numpy()
        guide = np.repeat(mixture[None], 3, axis=0)
        target = np.zeros(size, dtype=bool)
        for i in chosen:
            target |= instances[i]
        labels[f"{ds}/click-seg-{cls}"] = target.astype(np.float32)
        stack = np.stack([image, guide])
        meta["centers"] = centers
        meta["shapes"] = shapes

    else:
        raise ConfigError(f"unknown family {spec.family!r}")

    labels = {tid: lab[None].astype(np.float32) for tid, lab in labels.items()}
    return stack.astype(np.float32), labels, meta


def synth_generate(spec: SynthSpec, seed: int, out_root) -> DatasetManifest:
    """Write the corpus directory tree; returns its manifest."""
    os.makedirs(out_root, exist_ok=True)
    entries = []
    for family in spec.families:
        tasks = family_tasks(family, spec.image_size)
        ds_dir = os.path.join(out_root, safe_name(family.dataset_id))
        img_dir = os.path.join(ds_dir, "images")
        os.makedirs(img_dir, exist_ok=True)
        label_dirs = {}
        for task in tasks:
            d = os.path.join(ds_dir, "labels", safe_name(task.task_id))
            os.makedirs(d, exist_ok=True)
            label_dirs[task.task_id] = d
        for index in range(family.examples):
            image, labels, _ = generate_example(family, spec.image_size, seed, index)
            tsr.write_tensor(os.path.join(img_dir, f"{index}.tsr"), image)
            for tid, label in labels.items():
                tsr.write_tensor(os.path.join(label_dirs[tid], f"{index}.tsr"), label)
        entries.append(
            DatasetEntry(
                dataset_id=family.dataset_id,
                image_count=family.examples,
                resolution=spec.image_size,
                tasks=tasks,
            )
        )
    manifest = DatasetManifest(entries)
    manifest.save(os.path.join(out_root, "manifest.json"))
    with open(os.path.join(out_root, "spec.json"), "w") as fh:
        json.dump(
            {
                "image_size": list(spec.image_size),
                "seed": seed,
                "families": [
                    {
                        "dataset_id": f.dataset_id,
                        "family": f.family,
                        "examples": f.examples,
                        "classes": list(f.classes),
                        "carrier": f.carrier,
                        "target_class": f.target_class,
                    }
                    for f in spec.families
                ],
            },
            fh,
            indent=1,
            sort_keys=True,
        )
    return manifest
