import pytest
import torch

from tokenmatch import ConfigError, FewShotDenseModel, Registry
from tokenmatch.registry import PositionBiasTables
from tokenmatch.resolution import (
    adapt_position_tables,
    adapt_resolution,
    resize_bilinear_exact,
)
from conftest import small_manifest, tiny_config


def test_exact_resize_center_preserved():
    torch.manual_seed(0)
    # 14x14 -> 28x28 token grid: tables (27, 27) -> (55, 55)
    table = torch.randn(1, 27, 27)
    out = resize_bilinear_exact(table, (55, 55))
    assert out.shape == (1, 55, 55)
    assert out[0, 27, 27] == table[0, 13, 13]  # zero-offset entry, bit exact
    # all grid-aligned samples copy exactly: out[2k] == in at k*(26/54)... only
    # the center is integer-aligned here, but identity resizing is exact too
    same = resize_bilinear_exact(table, (27, 27))
    assert torch.equal(same, table)


def test_exact_resize_matches_linear_interpolation():
    t = torch.tensor([[0.0, 1.0], [2.0, 3.0]]).unsqueeze(0)
    out = resize_bilinear_exact(t, (3, 3))
    expected = torch.tensor(
        [[[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]]]
    )
    assert torch.allclose(out, expected)


def test_smooth_table_down_up_round_trip():
    yy = torch.linspace(-1, 1, 27)
    xx = torch.linspace(-1, 1, 27)
    smooth = torch.exp(-0.5 * (yy[:, None] ** 2 + xx[None, :] ** 2)).unsqueeze(0)
    down = resize_bilinear_exact(smooth, (15, 15))
    up = resize_bilinear_exact(down, (27, 27))
    assert float((up - smooth).abs().max()) < 1e-2


def test_adapt_position_tables():
    torch.manual_seed(1)
    tables = PositionBiasTables(2, (14, 14), 3)
    for t in tables.tables:
        t.data.normal_()
    out = adapt_position_tables(tables, (28, 28))
    assert out.grid == (28, 28)
    assert out.modalities == 2
    for old, new in zip(tables.tables, out.tables):
        assert new.shape == (4, 55, 55)
        assert torch.equal(new[:, 27, 27], old[:, 13, 13])
    assert adapt_position_tables(tables, (14, 14)) is tables


def test_adapt_resolution_identity_and_growth():
    torch.manual_seed(0)
    config = tiny_config()
    model = FewShotDenseModel(config)
    registry = Registry(small_manifest(), model, seed=0)
    params = registry.get_or_create_params("seg-a")

    same_model, same_params = adapt_resolution(model, params, (16, 16))
    assert same_model is model and same_params is params

    new_model, new_params = adapt_resolution(model, params, (32, 32))
    assert new_model is not model
    assert tuple(new_model.label_encoder.pos_embed.shape[1:3]) == (8, 8)
    assert new_params.pos_bias.grid == (8, 8)
    assert new_params.owns_pos_bias
    # zero-offset entries preserved exactly (4x4 grid -> 7x7 table, center 3)
    for old, new in zip(params.pos_bias.tables, new_params.pos_bias.tables):
        assert torch.equal(new[:, 7, 7], old[:, 3, 3])
    # untouched pieces stay aliased
    assert new_params.biases[0]["qkv"] is params.biases[0]["qkv"]
    assert new_params.lambda_logits is params.lambda_logits
    assert new_params.head is params.head
    # everything else in the model untouched
    for (n, a), (_, b) in zip(
        model.named_parameters(), new_model.named_parameters()
    ):
        if "pos_embed" not in n:
            assert torch.equal(a, b), n


def test_adapt_resolution_enables_forward():
    torch.manual_seed(0)
    config = tiny_config()
    model = FewShotDenseModel(config)
    registry = Registry(small_manifest(), model, seed=0)
    params = registry.get_or_create_params("seg-a")
    new_model, new_params = adapt_resolution(model, params, (32, 32))
    gen = torch.Generator().manual_seed(0)
    sup = [
        (torch.rand(1, 3, 32, 32, generator=gen),
         (torch.rand(1, 32, 32, generator=gen) > 0.5).float())
        for _ in range(2)
    ]
    out = new_model.predict(torch.rand(1, 3, 32, 32, generator=gen), sup, new_params)
    assert out.shape == (1, 32, 32)


def test_adapt_resolution_rejects_indivisible():
    config = tiny_config()
    model = FewShotDenseModel(config)
    with pytest.raises(ConfigError, match="divisible"):
        adapt_resolution(model, None, (18, 16))


def test_bicubic_flag():
    torch.manual_seed(2)
    tables = PositionBiasTables(1, (8, 8), 1)
    tables.tables[0].data.normal_()
    out = adapt_position_tables(tables, (16, 16), mode="bicubic")
    assert out.tables[0].shape == (1, 31, 31)
