"""Object counting from density maps, and exemplar guide construction."""

import numpy as np
import torch
from scipy import ndimage

SUM_RULE_THRESHOLD = 3000.0
RELATIVE_PEAK_FRACTION = 0.3
MIN_PEAK_VALUE = 0.05


def count_from_density(density, sum_rule_threshold: float = SUM_RULE_THRESHOLD,
                       relative_fraction: float = RELATIVE_PEAK_FRACTION,
                       min_peak: float = MIN_PEAK_VALUE) -> int:
    """Count the modes of a density map.

    Modes are local maxima above tau = max(relative_fraction * map max,
    min_peak) under 3x3 non-max suppression; adjacent equal-valued peaks
    collapse to one mode.  Maps whose total mass exceeds the outlier threshold
    are counted by their sum instead.
    """
    if isinstance(density, torch.Tensor):
        density = density.detach().cpu().numpy()
    d = np.asarray(density, dtype=np.float64)
    if d.ndim == 3:
        d = d[0]
    total = float(d.sum())
    if total > sum_rule_threshold:
        return int(round(total))
    if d.size == 0 or d.max() <= 0:
        return 0
    tau = max(relative_fraction * float(d.max()), min_peak)
    local_max = ndimage.maximum_filter(d, size=3, mode="constant", cval=-np.inf) == d
    peaks = local_max & (d > tau)
    if not peaks.any():
        return 0
    _, n = ndimage.label(peaks)
    return int(n)


def _paste(canvas, patch, top, left):
    H, W = canvas.shape[-2:]
    ph, pw = patch.shape[-2:]
    y0, x0 = max(0, top), max(0, left)
    y1, x1 = min(H, top + ph), min(W, left + pw)
    if y1 <= y0 or x1 <= x0:
        return
    canvas[..., y0:y1, x0:x1] = patch[..., y0 - top : y1 - top, x0 - left : x1 - left]


def _rescale_patch(patch, scale: float):
    import torch.nn.functional as F

    ph, pw = patch.shape[-2:]
    nh, nw = max(1, int(round(ph * scale))), max(1, int(round(pw * scale)))
    return F.interpolate(
        patch.unsqueeze(0), size=(nh, nw), mode="bilinear", align_corners=False
    ).squeeze(0)


def make_exemplar_guide(image, boxes, rng, pastes_per_box: int = 3,
                        scale_range=(0.6, 1.4)) -> torch.Tensor:
    """Paste exemplar patches onto a black canvas.

    image: [3, H, W]; boxes: [K, 4] as (y0, x0, y1, x1).  Each patch is first
    pasted at its own box, then (pastes_per_box - 1) more times at random
    positions with random rescaling.  Deterministic under a fixed rng.
    """
    image = image if isinstance(image, torch.Tensor) else torch.as_tensor(image)
    H, W = image.shape[-2:]
    guide = torch.zeros_like(image)
    for box in np.asarray(boxes, dtype=np.int64):
        y0, x0, y1, x1 = box
        patch = image[..., y0:y1, x0:x1]
        if patch.shape[-1] == 0 or patch.shape[-2] == 0:
            continue
        _paste(guide, patch, int(y0), int(x0))
        for _ in range(pastes_per_box - 1):
            scale = float(rng.uniform(*scale_range))
            scaled = _rescale_patch(patch, scale)
            ph, pw = scaled.shape[-2:]
            top = int(rng.integers(0, max(1, H - ph + 1)))
            left = int(rng.integers(0, max(1, W - pw + 1)))
            _paste(guide, scaled, top, left)
    return guide
