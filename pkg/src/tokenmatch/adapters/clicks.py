"""Click guides for interactive segmentation.

A guide renders a Gaussian mixture at simulated click positions inside a
random subset of instances; the target is the union of the clicked instances.
"""

from collections import namedtuple

import numpy as np
import torch

from ..errors import InputError

ClickGuide = namedtuple("ClickGuide", ["guide", "target", "centers"])

DEFAULT_SIGMA = 2.0
MAX_CLICKS_PER_INSTANCE = 5


def sample_click_centers(instance_masks, rng, max_clicks: int = MAX_CLICKS_PER_INSTANCE):
    """Choose k in [1, max(1, K//2)] instances and 1..max_clicks pixels inside each.

    Returns (chosen instance indices, list of (row, col) centers).
    """
    masks = [np.asarray(m, dtype=bool) for m in instance_masks]
    K = len(masks)
    if K == 0:
        raise InputError("no instances to click on")
    k_max = max(1, K // 2)
    k = int(rng.integers(1, k_max + 1))
    chosen = sorted(int(i) for i in rng.choice(K, size=k, replace=False))
    centers = []
    for i in chosen:
        ys, xs = np.nonzero(masks[i])
        if len(ys) == 0:
            raise InputError(f"instance {i} has an empty mask")
        p = int(rng.integers(1, max_clicks + 1))
        picks = rng.choice(len(ys), size=min(p, len(ys)), replace=False)
        centers.extend((int(ys[j]), int(xs[j])) for j in picks)
    return chosen, centers


def render_gaussian_mixture(centers, size, sigma: float = DEFAULT_SIGMA) -> torch.Tensor:
    """[H, W] mixture of unit-peak Gaussians, rescaled to a maximum of 1."""
    H, W = size
    yy = np.arange(H, dtype=np.float64)[:, None]
    xx = np.arange(W, dtype=np.float64)[None, :]
    out = np.zeros((H, W), dtype=np.float64)
    for cy, cx in centers:
        out += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))
    if out.max() > 0:
        out = out / out.max()
    return torch.from_numpy(out.astype(np.float32))


def make_click_guide(instance_masks, rng, sigma: float = DEFAULT_SIGMA) -> ClickGuide:
    """Returns (guide [3, H, W], target [1, H, W], centers).

    The guide replicates the rendered mixture across 3 channels so it can act
    as an input modality; the target is the union of the clicked instances.
    """
    masks = [np.asarray(m, dtype=bool) for m in instance_masks]
    chosen, centers = sample_click_centers(masks, rng)
    H, W = masks[0].shape
    mixture = render_gaussian_mixture(centers, (H, W), sigma)
    guide = mixture.unsqueeze(0).repeat(3, 1, 1)
    target = np.zeros((H, W), dtype=bool)
    for i in chosen:
        target |= masks[i]
    target = torch.from_numpy(target.astype(np.float32)).unsqueeze(0)
    return ClickGuide(guide=guide, target=target, centers=centers)
