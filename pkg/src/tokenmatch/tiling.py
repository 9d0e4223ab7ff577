"""Tiled prediction with Gaussian blending, and flip ensembling.

Tiles are laid on a regular grid (the last row/column is flushed to the image
edge) and blended with a Gaussian weight window.  Blending maintains an
incremental weighted mean, which keeps constant fields exact: the first tile
writes its prediction verbatim (weight ratio exactly 1.0), and every later
tile adds a multiple of (pred - mean), which is exactly zero for a constant
predictor.
"""

import math

import torch

from .errors import InputError, ShapeError


def tile_starts(length: int, tile: int, stride: int):
    """Start offsets covering [0, length); the last tile is flush with the end."""
    if tile > length:
        raise ShapeError(f"tile {tile} larger than image extent {length}")
    starts = list(range(0, length - tile + 1, stride))
    if starts[-1] != length - tile:
        starts.append(length - tile)
    return starts


def gaussian_window(tile_hw, sigma=None, dtype=torch.float32):
    """Strictly positive [th, tw] Gaussian weight window (sigma = tile/4)."""
    th, tw = tile_hw
    sy = sigma if sigma is not None else th / 4.0
    sx = sigma if sigma is not None else tw / 4.0
    y = torch.arange(th, dtype=dtype) - (th - 1) / 2.0
    x = torch.arange(tw, dtype=dtype) - (tw - 1) / 2.0
    wy = torch.exp(-(y**2) / (2 * sy * sy))
    wx = torch.exp(-(x**2) / (2 * sx * sx))
    return torch.clamp(wy[:, None] * wx[None, :], min=1e-12)


def _overlap_pixels(tile: int, overlap) -> int:
    if isinstance(overlap, float) and 0 < overlap < 1:
        return int(round(tile * overlap))
    return int(overlap)


def tile_grid(image_hw, tile_hw, overlap):
    th, tw = tile_hw
    oy, ox = _overlap_pixels(th, overlap), _overlap_pixels(tw, overlap)
    if oy >= th or ox >= tw:
        raise InputError(f"overlap {overlap} leaves a non-positive stride")
    ys = tile_starts(image_hw[0], th, th - oy)
    xs = tile_starts(image_hw[1], tw, tw - ox)
    return [(y, x) for y in ys for x in xs]


def blend_weight_map(image_hw, tile_hw, overlap, sigma=None) -> torch.Tensor:
    """Accumulated (unnormalized) blend weight per pixel; strictly positive."""
    weights = torch.zeros(image_hw, dtype=torch.float64)
    window = gaussian_window(tile_hw, sigma, dtype=torch.float64)
    th, tw = tile_hw
    for y, x in tile_grid(image_hw, tile_hw, overlap):
        weights[y : y + th, x : x + tw] += window
    return weights


def tiled_predict(predict_fn, image, tile, overlap, sigma=None):
    """Predict a full image by blending per-tile predictions.

    predict_fn: maps an image crop [..., th, tw] to a prediction [C, th, tw].
    image: [..., H, W] (leading dims are passed through to predict_fn).
    tile: int or (th, tw); overlap: pixels (int) or fraction (float < 1).
    """
    tile_hw = (tile, tile) if isinstance(tile, int) else tuple(tile)
    H, W = image.shape[-2], image.shape[-1]
    th, tw = tile_hw
    if th > H or tw > W:
        raise ShapeError(f"tile {tile_hw} larger than image {(H, W)}")
    positions = tile_grid((H, W), tile_hw, overlap)

    mean = None
    wsum = torch.zeros(H, W, dtype=torch.float64)
    window = None
    for y, x in positions:
        crop = image[..., y : y + th, x : x + tw]
        pred = predict_fn(crop)
        if pred.shape[-2:] != (th, tw):
            raise ShapeError(
                f"predict_fn returned {tuple(pred.shape[-2:])} for a {tile_hw} tile"
            )
        if mean is None:
            mean = torch.zeros(pred.shape[:-2] + (H, W), dtype=pred.dtype)
            window = gaussian_window(tile_hw, sigma, dtype=torch.float64)
        wsum[y : y + th, x : x + tw] += window
        ratio = (window / wsum[y : y + th, x : x + tw]).to(pred.dtype)
        region = mean[..., y : y + th, x : x + tw]
        mean[..., y : y + th, x : x + tw] = region + ratio * (pred - region)
    return mean


FLIP_VARIANTS = ((False, False), (False, True), (True, False), (True, True))


def flip_ensemble(predict_fn, image, channel_parity=None, flip_covariant=True):
    """Average predictions over the 4 flip variants of the input.

    channel_parity: per output channel, a pair (sign under vertical flip,
    sign under horizontal flip); flow channels use -1 on their own axis.
    """
    if not flip_covariant:
        raise InputError("task is flagged flip-incompatible")
    acc = None
    for flip_v, flip_h in FLIP_VARIANTS:
        x = image
        dims = []
        if flip_v:
            dims.append(-2)
        if flip_h:
            dims.append(-1)
        if dims:
            x = torch.flip(x, dims)
        pred = predict_fn(x)
        if dims:
            pred = torch.flip(pred, dims)
        if channel_parity is not None:
            signs = torch.ones(pred.shape[0], dtype=pred.dtype)
            for c, (pv, ph) in enumerate(channel_parity):
                s = 1.0
                if flip_v:
                    s *= pv
                if flip_h:
                    s *= ph
                signs[c] = s
            pred = pred * signs.view(-1, *([1] * (pred.dim() - 1)))
        acc = pred if acc is None else acc + pred
    return acc / len(FLIP_VARIANTS)
