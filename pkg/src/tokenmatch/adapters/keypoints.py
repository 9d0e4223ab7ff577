"""Keypoint <-> heatmap conversion.

Coordinates are (row, col) floats.  Encoding renders one Gaussian bump per
joint, normalized so the channel maximum is exactly 1 (the peak pixel is the
rounded coordinate); invisible joints give all-zero channels.  Decoding takes
the per-channel argmax and maps it back through the recorded crop/resize
chain.
"""

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import InputError

DEFAULT_SIGMA = 2.0


@dataclass(frozen=True)
class AffineMap:
    """Prediction-space -> original-space coordinate map: out = coord * scale + offset."""

    scale: tuple = (1.0, 1.0)
    offset: tuple = (0.0, 0.0)

    def apply(self, coords):
        coords = np.asarray(coords, dtype=np.float64)
        return coords * np.asarray(self.scale) + np.asarray(self.offset)

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """self(inner(x)): apply ``inner`` first, then this map."""
        sy, sx = self.scale
        return AffineMap(
            scale=(sy * inner.scale[0], sx * inner.scale[1]),
            offset=(sy * inner.offset[0] + self.offset[0],
                    sx * inner.offset[1] + self.offset[1]),
        )


def encode_keypoints(coords, visibility, size, sigma: float = DEFAULT_SIGMA):
    """coords: [J, 2] (row, col); visibility: [J] bool; returns [J, 1, H, W]."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise InputError(f"coords must be [J, 2], got {coords.shape}")
    J = coords.shape[0]
    if J == 0:
        raise InputError("no joints to encode")
    visibility = (
        np.ones(J, dtype=bool) if visibility is None else np.asarray(visibility, bool)
    )
    H, W = size
    yy = np.arange(H, dtype=np.float64)[:, None]
    xx = np.arange(W, dtype=np.float64)[None, :]
    maps = np.zeros((J, 1, H, W), dtype=np.float32)
    for j in range(J):
        if not visibility[j]:
            continue
        cy, cx = coords[j]
        if not (0 <= cy < H and 0 <= cx < W):
            raise InputError(
                f"joint {j} at {(cy, cx)} outside frame {(H, W)} but flagged visible"
            )
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma))
        maps[j, 0] = (g / g.max()).astype(np.float32)
    return torch.from_numpy(maps)


def decode_keypoints(heatmaps, transform: AffineMap = None):
    """[J, 1, H, W] or [J, H, W] -> (coords [J, 2], found [J] bool).

    All-zero channels are reported as missing (NaN coordinates).
    """
    hm = heatmaps
    if isinstance(hm, torch.Tensor):
        hm = hm.detach().cpu().numpy()
    hm = np.asarray(hm, dtype=np.float64)
    if hm.ndim == 4:
        hm = hm[:, 0]
    J, H, W = hm.shape
    coords = np.full((J, 2), np.nan)
    found = np.zeros(J, dtype=bool)
    for j in range(J):
        channel = hm[j]
        if not np.any(channel != 0):
            continue
        idx = int(channel.argmax())
        coords[j] = (idx // W, idx % W)
        found[j] = True
    if transform is not None:
        coords[found] = transform.apply(coords[found])
    return coords, found
