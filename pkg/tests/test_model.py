import pytest
import torch

from tokenmatch import FewShotDenseModel, InputError, Registry, ShapeError
from conftest import random_support, small_manifest, tiny_config, to_double


def _setup(seed=0):
    torch.manual_seed(seed)
    model = FewShotDenseModel(tiny_config())
    registry = Registry(small_manifest(), model, seed=seed)
    return model, registry


def test_predict_shape_for_any_shot_count():
    model, registry = _setup()
    params = registry.get_or_create_params("seg-a")
    for n in (1, 2, 5):
        sup = random_support(n, binary=True)
        out = model.predict(torch.rand(1, 3, 16, 16), sup, params)
        assert out.shape == (1, 16, 16)
    batched = model.predict(torch.rand(3, 1, 3, 16, 16), sup, params)
    assert batched.shape == (3, 1, 16, 16)


def test_predict_empty_support_rejected():
    model, registry = _setup()
    params = registry.get_or_create_params("seg-a")
    with pytest.raises(InputError):
        model.predict(torch.rand(1, 3, 16, 16), [], params)


def test_predict_support_query_shape_mismatch():
    model, registry = _setup()
    params = registry.get_or_create_params("stereo")
    sup = random_support(2, modalities=2)
    with pytest.raises(ShapeError):
        model.predict(torch.rand(1, 3, 16, 16), sup, params)


def test_support_permutation_and_duplication_invariance():
    model, registry = _setup(seed=1)
    params = to_double(registry.get_or_create_params("depth"))
    model.double()
    gen = torch.Generator().manual_seed(3)
    sup = [
        (torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64),
         torch.rand(1, 16, 16, generator=gen, dtype=torch.float64))
        for _ in range(4)
    ]
    q = torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64)
    base = model.predict(q, sup, params)
    perm = model.predict(q, [sup[i] for i in (2, 0, 3, 1)], params)
    dup = model.predict(q, sup + sup, params)
    assert float((base - perm).abs().max()) < 1e-6
    assert float((base - dup).abs().max()) < 1e-6


def test_task_isolation_bitwise():
    """Modifying task A's parameters leaves task B's outputs unchanged."""
    model, registry = _setup(seed=2)
    params_b = registry.get_or_create_params("depth")
    params_a = registry.get_or_create_params("edges")
    sup = random_support(2)
    q = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        before = model.predict(q, sup, params_b).clone()
        for block in params_a.biases:
            for p in block.values():
                p.add_(1.0)
        after = model.predict(q, sup, params_b)
    assert torch.equal(before, after)


def test_attention_extraction_contract():
    model, registry = _setup(seed=3)
    params = registry.get_or_create_params("seg-a")
    sup = random_support(3, binary=True)
    q = torch.rand(1, 3, 16, 16)
    out, weights = model.predict(q, sup, params, return_attention=True)
    assert len(weights) == model.config.num_levels
    M = 16
    for w in weights:
        assert w.shape == (model.config.matching_heads, M, 3 * M)
        sums = w.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


def test_cached_support_path_matches_direct():
    model, registry = _setup(seed=5)
    params = to_double(registry.get_or_create_params("depth"))
    model.double()
    gen = torch.Generator().manual_seed(9)
    sup = [
        (torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64),
         torch.rand(1, 16, 16, generator=gen, dtype=torch.float64))
        for _ in range(3)
    ]
    q = torch.rand(1, 3, 16, 16, generator=gen, dtype=torch.float64)
    with torch.no_grad():
        direct = model.predict(q, sup, params)
        cache = model.encode_support(sup, params)
        cached = model.predict_cached(q, cache, params)
    assert float((direct - cached).abs().max()) < 1e-9


def test_lambda_gradient_reaches_prediction():
    model, registry = _setup(seed=4)
    params = registry.get_or_create_params("seg-a")
    sup = random_support(2, binary=True)
    out = model.predict(torch.rand(1, 3, 16, 16), sup, params)
    out.mean().backward()
    assert params.lambda_logits.grad is not None
    assert float(params.lambda_logits.grad.abs().sum()) > 0
