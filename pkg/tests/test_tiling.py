import pytest
import torch

from tokenmatch import InputError, ShapeError
from tokenmatch.tiling import (
    blend_weight_map,
    flip_ensemble,
    gaussian_window,
    tile_grid,
    tiled_predict,
)


def test_nine_tiles_at_1536_over_512():
    grid = tile_grid((1536, 1536), (512, 512), 0)
    assert len(grid) == 9
    ys = sorted({y for y, _ in grid})
    assert ys == [0, 512, 1024]


def test_overlap_grid_counts():
    grid = tile_grid((224, 224), (128, 128), 0.5)
    ys = sorted({y for y, _ in grid})
    assert ys == [0, 64, 96]  # last tile flush with the edge


def test_tile_larger_than_image_rejected():
    with pytest.raises(ShapeError, match="larger"):
        tiled_predict(lambda t: t, torch.rand(1, 64, 64), 128, 0)


def test_constant_model_exact():
    for constant in (0.37, -1.23456789, 3.0):
        image = torch.rand(1, 100, 100, dtype=torch.float64)

        def predict(tile):
            return torch.full((2,) + tile.shape[-2:], constant, dtype=torch.float64)

        out = tiled_predict(predict, image, 40, 0.5)
        assert torch.equal(out, torch.full((2, 100, 100), constant, dtype=torch.float64))


def test_zero_overlap_is_paste():
    image = torch.arange(64.0).reshape(1, 8, 8)

    def predict(tile):
        return tile * 2.0

    out = tiled_predict(predict, image, 4, 0)
    assert torch.equal(out, image * 2.0)


def test_blend_weights_strictly_positive():
    for overlap in (0, 0.25, 0.5, 17):
        weights = blend_weight_map((97, 130), (32, 32), overlap)
        assert float(weights.min()) > 0


def test_gaussian_window_positive_and_peaked():
    w = gaussian_window((33, 33))
    assert float(w.min()) > 0
    assert w.argmax() == (33 * 33) // 2


def test_tiled_blending_approximates_full_on_smooth_field():
    yy = torch.linspace(0, 1, 96)
    xx = torch.linspace(0, 1, 96)
    field = (yy[:, None] + xx[None, :]).unsqueeze(0)

    def predict(tile):
        return tile.clone()

    out = tiled_predict(predict, field, 48, 0.5)
    assert float((out - field).abs().max()) < 1e-6


def test_flip_ensemble_constant_and_equivariant():
    image = torch.rand(1, 3, 16, 16)

    def constant(x):
        return torch.full((1, 16, 16), 0.625)

    out = flip_ensemble(constant, image)
    assert torch.equal(out, torch.full((1, 16, 16), 0.625))

    def mean_pool(x):  # flip-equivariant: commutes with spatial flips
        return x.mean(dim=(0, 1), keepdim=False).unsqueeze(0)

    single = mean_pool(image)
    ens = flip_ensemble(mean_pool, image)
    assert float((ens - single).abs().max()) < 1e-6


def test_flip_ensemble_flow_sign_rules():
    """Horizontal flow from a perfect predictor survives the ensemble only
    with the -1 parity on its channel: a flipped scene's flow points the
    other way in pixel coordinates."""
    H = W = 16
    target_col = 4
    image = torch.zeros(1, 3, H, W)
    image[0, 0, :, target_col] = 1.0  # scene: a column marker to flow toward

    def flow_predictor(x):
        col = int(x[0, 0, 0].argmax())
        w = torch.arange(W, dtype=torch.float32)
        return torch.sign(col - w).expand(H, W).unsqueeze(0).clone()

    single = flow_predictor(image)
    ens = flip_ensemble(flow_predictor, image, channel_parity=[(1, -1)])
    assert float((ens - single).abs().max()) < 1e-6
    # without the sign rule the two horizontal-flip variants cancel the field
    wrong = flip_ensemble(flow_predictor, image)
    assert float(wrong.abs().max()) < 1e-6


def test_flip_incompatible_flagged():
    with pytest.raises(InputError, match="flip-incompatible"):
        flip_ensemble(lambda x: x, torch.rand(1, 4, 4), flip_covariant=False)
