import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tokenmatch import InputError, ShapeError, normalize_lambda, reweight_features
from tokenmatch.matching import MatchingHead


def test_normalize_lambda_uniform():
    lam = normalize_lambda(torch.zeros(4, 4))
    assert torch.allclose(lam, torch.full((4, 4), 0.25))


def test_normalize_lambda_ln2_row():
    logits = torch.zeros(1, 4)
    logits[0, 1] = math.log(2.0)
    lam = normalize_lambda(logits)
    expected = torch.tensor([[0.2, 0.4, 0.2, 0.2]])
    assert torch.allclose(lam, expected, atol=1e-6)


def test_normalize_lambda_shift_invariance():
    torch.manual_seed(0)
    logits = torch.randn(4, 4)
    shifted = logits + torch.tensor([[3.0], [-1.0], [0.5], [100.0]])
    assert torch.allclose(normalize_lambda(logits), normalize_lambda(shifted), atol=1e-6)


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_normalize_lambda_rows_sum_to_one(levels, seed):
    gen = torch.Generator().manual_seed(seed)
    logits = torch.randn(levels, levels, generator=gen) * 10
    rows = normalize_lambda(logits).sum(dim=-1)
    assert torch.allclose(rows, torch.ones(levels), atol=1e-6)


def test_reweight_identity_and_one_hot():
    torch.manual_seed(0)
    levels = [torch.randn(5, 3) for _ in range(4)]
    out = reweight_features(levels, torch.eye(4))
    for a, b in zip(out, levels):
        assert torch.allclose(a, b, atol=1e-7)
    one_hot = torch.zeros(4, 4)
    one_hot[:, 3] = 1.0
    out = reweight_features(levels, one_hot)
    for lvl in out:
        assert torch.allclose(lvl, levels[3], atol=1e-7)


def test_reweight_matches_loop_oracle():
    torch.manual_seed(1)
    L, M, d = 4, 6, 5
    levels = [torch.randn(M, d, dtype=torch.float64) for _ in range(L)]
    lam = normalize_lambda(torch.randn(L, L, dtype=torch.float64))
    out = reweight_features(levels, lam)
    for l in range(L):
        expected = torch.zeros(M, d, dtype=torch.float64)
        for lp in range(L):
            expected += lam[l, lp] * levels[lp]
        assert float((out[l] - expected).abs().max()) < 1e-6


def test_reweight_level_mismatch():
    with pytest.raises(ShapeError):
        reweight_features([torch.randn(4, 4)], torch.eye(2))


def oracle_match(head, q_img, s_img, s_lab):
    """Literal double-sum token matching: for every query token, a softmax
    over all N*M support tokens interpolates value-projected label tokens."""
    d, nh, dh = head.dim, head.num_heads, head.head_dim
    qn = head.q_norm(q_img)
    kn = head.k_norm(s_img)
    Mq, Ns = q_img.shape[0], s_img.shape[0]
    out = torch.zeros(Mq, d, dtype=q_img.dtype)
    for k in range(Mq):
        per_head = []
        for h in range(nh):
            sl = slice(h * dh, (h + 1) * dh)
            qv = head.q_proj(qn[k])[sl]
            logits = torch.tensor(
                [float((qv * head.k_proj(kn[j])[sl]).sum()) / math.sqrt(dh)
                 for j in range(Ns)],
                dtype=q_img.dtype,
            )
            weights = torch.softmax(logits, 0)
            acc = torch.zeros(dh, dtype=q_img.dtype)
            for j in range(Ns):
                acc = acc + weights[j] * head.v_proj(s_lab[j])[sl]
            per_head.append(acc)
        out[k] = head.out_proj(torch.cat(per_head))
    return out


def test_match_level_trivial_cases():
    torch.manual_seed(0)
    head = MatchingHead(8, 2).double()
    # N = 1, M = 1: softmax over one element is 1.
    q = torch.randn(1, 8, dtype=torch.float64)
    si = torch.randn(1, 8, dtype=torch.float64)
    sl = torch.randn(1, 8, dtype=torch.float64)
    out = head(q, si, sl)
    expected = head.out_proj(head.v_proj(sl))
    assert torch.allclose(out, expected, atol=1e-9)
    # All keys identical: uniform attention averages the values.
    si2 = si.repeat(2, 1)
    sl2 = torch.randn(2, 8, dtype=torch.float64)
    out2 = head(q, si2, sl2)
    expected2 = head.out_proj(head.v_proj(sl2).mean(dim=0, keepdim=True))
    assert torch.allclose(out2, expected2, atol=1e-9)


def test_match_level_empty_support():
    head = MatchingHead(8, 2)
    with pytest.raises(InputError):
        head(torch.randn(2, 8), torch.zeros(0, 8), torch.zeros(0, 8))


@pytest.mark.parametrize("d,heads", [(8, 1), (8, 2), (16, 4)])
def test_match_level_oracle(d, heads):
    torch.manual_seed(d * 7 + heads)
    head = MatchingHead(d, heads).double()
    for N in (1, 2, 4):
        for M in (1, 4, 9):
            with torch.no_grad():
                q = torch.randn(M, d, dtype=torch.float64)
                si = torch.randn(N * M, d, dtype=torch.float64)
                sl = torch.randn(N * M, d, dtype=torch.float64)
                fast = head(q, si, sl)
                slow = oracle_match(head, q, si, sl)
            assert float((fast - slow).abs().max()) < 1e-5


def test_attention_weights_normalized():
    torch.manual_seed(3)
    head = MatchingHead(16, 4)
    q = torch.randn(5, 16)
    si = torch.randn(12, 16)
    sl = torch.randn(12, 16)
    _, weights = head(q, si, sl, return_weights=True)
    assert weights.shape == (4, 5, 12)
    assert bool((weights >= 0).all())
    sums = weights.sum(dim=-1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


def test_level_scaling_isolation():
    """With a one-hot mixing row, scaling a different level's features leaves
    that row's matched output unchanged."""
    torch.manual_seed(4)
    levels = [torch.randn(6, 8, dtype=torch.float64) for _ in range(3)]
    one_hot = torch.zeros(3, 3, dtype=torch.float64)
    one_hot[0, 1] = 1.0
    one_hot[1, 1] = 1.0
    one_hot[2, 2] = 1.0
    mixed = reweight_features(levels, one_hot)
    scaled = [levels[0] * 7.5, levels[1], levels[2]]
    mixed_scaled = reweight_features(scaled, one_hot)
    for a, b in zip(mixed, mixed_scaled):
        assert torch.allclose(a, b, atol=1e-9)
