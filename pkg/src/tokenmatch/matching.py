"""Token matching between query images and support examples.

Prediction works by attending from re-weighted query image tokens to support
image tokens and interpolating the corresponding support label tokens: the
attention weights are a similarity softmax jointly over all N*M support
tokens, so the result is invariant to support order and duplication.  One
matching head runs per feature level; a task-specific row-stochastic matrix
mixes the image feature levels before each head.
"""

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError, ShapeError


def normalize_lambda(lambda_logits: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax; every row of the result sums to 1."""
    return lambda_logits.softmax(dim=-1)


def reweight_features(level_features, lam: torch.Tensor):
    """Mix L per-level token matrices with a row-stochastic [L, L] matrix.

    Output level l is sum_l' lam[l, l'] * input level l'.
    """
    L = lam.shape[0]
    if lam.shape != (L, L):
        raise ShapeError(f"lambda must be square, got {tuple(lam.shape)}")
    if len(level_features) != L:
        raise ShapeError(f"{len(level_features)} levels for a {L}x{L} lambda")
    stacked = torch.stack(list(level_features), dim=0)  # [L, ..., M, d]
    flat = stacked.reshape(L, -1)
    mixed = (lam.to(flat.dtype) @ flat).reshape(stacked.shape)
    return [mixed[l] for l in range(L)]


class MatchingHead(nn.Module):
    """Multi-head scaled dot-product matching at one level.

    Queries come from query-image tokens, keys from support-image tokens,
    values from support-label tokens; softmax normalizes jointly over the
    union of all support tokens.
    """

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ShapeError("dim must be divisible by num_heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_norm = nn.LayerNorm(dim)
        self.k_norm = nn.LayerNorm(dim)
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        # Near-identity start: attention begins as raw content similarity
        # between normalized tokens and label tokens pass through, so the
        # matching path carries a query-dependent signal from step one
        # (random tiny projections leave attention uniform and let the
        # decoder collapse onto the label marginal).
        for proj in (self.q_proj, self.k_proj, self.v_proj, self.out_proj):
            with torch.no_grad():
                proj.weight.copy_(
                    torch.eye(dim) + 0.02 * torch.randn_like(proj.weight)
                )
                proj.bias.zero_()

    def forward(self, query_img, support_img, support_lab, return_weights=False):
        """query_img: [Mq, d] or [B, Mq, d]; support_*: [Ns, d] (shared by batch).

        Returns matched label tokens with the query's leading shape; optionally
        also the attention weights [B?, heads, Mq, Ns].
        """
        if support_img.shape[0] == 0:
            raise InputError("matching needs at least one support token")
        if support_img.shape != support_lab.shape:
            raise ShapeError(
                f"support image tokens {tuple(support_img.shape)} and label tokens "
                f"{tuple(support_lab.shape)} disagree"
            )
        single = query_img.dim() == 2
        if single:
            query_img = query_img.unsqueeze(0)
        B, Mq, d = query_img.shape
        Ns = support_img.shape[0]
        q = self.q_proj(self.q_norm(query_img))
        k = self.k_proj(self.k_norm(support_img))
        v = self.v_proj(support_lab)
        q = q.reshape(B, Mq, self.num_heads, self.head_dim).transpose(1, 2)
        k = k.reshape(Ns, self.num_heads, self.head_dim).permute(1, 0, 2)
        v = v.reshape(Ns, self.num_heads, self.head_dim).permute(1, 0, 2)
        logits = (q @ k.transpose(-2, -1).unsqueeze(0)) / math.sqrt(self.head_dim)
        weights = logits.softmax(dim=-1)  # [B, heads, Mq, Ns]
        out = weights @ v.unsqueeze(0)
        out = out.transpose(1, 2).reshape(B, Mq, d)
        out = self.out_proj(out)
        if single:
            out = out.squeeze(0)
            weights = weights.squeeze(0)
        if return_weights:
            return out, weights
        return out


class MatchingStack(nn.Module):
    """One matching head per feature level."""

    def __init__(self, config):
        super().__init__()
        self.heads = nn.ModuleList(
            MatchingHead(config.embed_dim, config.matching_heads)
            for _ in range(config.num_levels)
        )

    def forward(self, query_levels, support_img_levels, support_lab_levels,
                return_weights=False):
        outs, weights = [], []
        for head, q, si, sl in zip(
            self.heads, query_levels, support_img_levels, support_lab_levels
        ):
            if return_weights:
                o, w = head(q, si, sl, return_weights=True)
                outs.append(o)
                weights.append(w)
            else:
                outs.append(head(q, si, sl))
        if return_weights:
            return outs, weights
        return outs
