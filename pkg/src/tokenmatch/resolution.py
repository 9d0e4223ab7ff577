"""Resolution adaptation.

Moving a trained model to a new input resolution only requires resizing the
positional state: the relative position bias tables grow along their two
offset axes, and the label encoder's absolute embedding grid is resampled.
All other weights are untouched.

The bilinear resize used for the tables computes source coordinates with
integer rationals (align-corners convention), so any target sample that lands
exactly on a source grid point copies the value bit for bit; in particular
the zero-offset (center) entry of an odd-sized table survives any odd-to-odd
resize unchanged.
"""

import copy

import torch
import torch.nn.functional as F

from .errors import ConfigError
from .registry import PositionBiasTables, TaskParams


def _axis_indices(n_in: int, n_out: int):
    """Rational align-corners sampling: returns (i0, i1, frac) per output index."""
    if n_out == 1 or n_in == 1:
        i0 = torch.zeros(n_out, dtype=torch.long)
        return i0, i0.clone(), torch.zeros(n_out)
    num = torch.arange(n_out, dtype=torch.long) * (n_in - 1)
    den = n_out - 1
    i0 = torch.div(num, den, rounding_mode="floor")
    rem = num - i0 * den
    frac = rem.to(torch.get_default_dtype()) / den
    i1 = (i0 + 1).clamp(max=n_in - 1)
    return i0, i1, frac


def resize_bilinear_exact(table: torch.Tensor, new_hw) -> torch.Tensor:
    """Separable bilinear resize over the last two axes, exact at grid-aligned
    sample points (frac == 0 copies the source value)."""
    new_h, new_w = new_hw
    *_, H, W = table.shape
    i0, i1, fy = _axis_indices(H, new_h)
    fy = fy.to(table.dtype).reshape((1,) * (table.dim() - 2) + (new_h, 1))
    rows = table.index_select(-2, i0) * (1 - fy) + table.index_select(-2, i1) * fy
    j0, j1, fx = _axis_indices(W, new_w)
    fx = fx.to(table.dtype).reshape((1,) * (table.dim() - 2) + (1, new_w))
    out = rows.index_select(-1, j0) * (1 - fx) + rows.index_select(-1, j1) * fx
    return out


def _resize_table(table: torch.Tensor, new_grid, mode: str) -> torch.Tensor:
    gh, gw = new_grid
    target = (2 * gh - 1, 2 * gw - 1)
    if mode == "bilinear":
        return resize_bilinear_exact(table, target)
    if mode == "bicubic":
        return F.interpolate(
            table.unsqueeze(0), size=target, mode="bicubic", align_corners=True
        ).squeeze(0)
    raise ConfigError(f"unknown interpolation mode {mode!r}")


def adapt_position_tables(tables: PositionBiasTables, new_grid,
                          mode: str = "bilinear") -> PositionBiasTables:
    if tuple(new_grid) == tables.grid:
        return tables
    resized = [
        _resize_table(t.detach(), new_grid, mode).clone() for t in tables.tables
    ]
    return PositionBiasTables(tables.modalities, new_grid, len(resized), resized)


def adapt_resolution(model, task_params, new_resolution, mode: str = "bilinear"):
    """Return (model, params) adapted to a new input resolution.

    Equal grids return the inputs untouched.  Otherwise the model is copied
    with a resampled label-encoder embedding grid, and the task parameters are
    copied with resized position tables (now owned); biases, re-weighting
    logits and the head stay aliased to the originals.
    """
    ph, pw = model.config.patch_size
    H, W = new_resolution
    if H % ph or W % pw:
        raise ConfigError(
            f"target resolution {(H, W)} not divisible by patch {(ph, pw)}"
        )
    new_grid = (H // ph, W // pw)
    old_grid = tuple(model.label_encoder.pos_embed.shape[1:3])
    if new_grid == old_grid and (
        task_params is None or task_params.pos_bias.grid == new_grid
    ):
        return model, task_params

    adapted_model = copy.deepcopy(model)
    if new_grid != old_grid:
        pos = model.label_encoder.pos_embed.detach()  # [1, gh, gw, d]
        grid_first = pos.permute(0, 3, 1, 2)  # [1, d, gh, gw]
        resized = F.interpolate(
            grid_first, size=new_grid, mode="bilinear", align_corners=False
        )
        adapted_model.label_encoder.pos_embed = torch.nn.Parameter(
            resized.permute(0, 2, 3, 1).contiguous()
        )

    adapted_params = task_params
    if task_params is not None and task_params.pos_bias.grid != new_grid:
        adapted_params = TaskParams(
            task=task_params.task,
            biases=task_params.biases,
            pos_bias=adapt_position_tables(task_params.pos_bias, new_grid, mode),
            lambda_logits=task_params.lambda_logits,
            head=task_params.head,
            owns_pos_bias=True,
        )
    return adapted_model, adapted_params
