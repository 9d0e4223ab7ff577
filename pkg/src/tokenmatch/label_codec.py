"""Label encoder and decoder.

Labels are encoded into multi-level tokens by a task-agnostic transformer
(the matching targets), and matched query tokens are decoded back into a
dense map through a feature pyramid and a convolutional decoder.  The level
order follows the encoder taps: level 1 is shallow and maps to the finest
pyramid resolution (stride p/4), level L is deep and maps to the coarsest
(stride 2p).

All decoder convolutions are bias-free, so a zero pyramid propagates to a
zero pre-head feature map; only the final 1x1 task head carries a bias.
"""

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import EncoderBlock, PatchEmbed
from .errors import ConfigError, InputError, ShapeError


class LabelEncoder(nn.Module):
    """Transformer over 1-channel label patches with absolute position
    embeddings (stored as a grid so they can be resized for new resolutions)."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        dim = config.embed_dim
        self.patch_embed = PatchEmbed(1, config.patch_size, dim)
        gh, gw = config.grid()
        self.pos_embed = nn.Parameter(torch.zeros(1, gh, gw, dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            EncoderBlock(dim, config.num_heads, config.mlp_ratio)
            for _ in range(config.label_depth)
        )
        self.tap_layers = config.label_tap_layers()

    def forward(self, y):
        """[1, H, W] or [B, 1, H, W] -> list of L token matrices [M, d] / [B, M, d]."""
        single = y.dim() == 3
        if single:
            y = y.unsqueeze(0)
        if not torch.isfinite(y).all():
            raise InputError("label contains non-finite values")
        B, c, H, W = y.shape
        if c != 1:
            raise ShapeError(f"labels are single-channel, got {c}")
        ph, pw = self.config.patch_size
        gh, gw = H // ph, W // pw
        tokens = self.patch_embed(y)  # [B, M, d]
        if self.pos_embed.shape[1] != gh or self.pos_embed.shape[2] != gw:
            raise ShapeError(
                f"position embedding grid {tuple(self.pos_embed.shape[1:3])} does not "
                f"match input grid {(gh, gw)}; run adapt_resolution first"
            )
        tokens = tokens + self.pos_embed.reshape(1, gh * gw, -1)
        levels = []
        taps = set(self.tap_layers)
        for i, blk in enumerate(self.blocks):
            tokens = blk(tokens)
            if i + 1 in taps:
                levels.append(tokens)
        return [lvl.squeeze(0) for lvl in levels] if single else levels


def pyramid_strides(patch_size, num_levels):
    """Spatial strides per level, finest first: {p/4, p/2, p, 2p} for L=4."""
    ph, pw = patch_size
    # Generalized around the patch stride: num_levels - 2 levels finer than p,
    # one at p, one at 2p.
    exponents = range(-(num_levels - 2), 2)

    def scaled(p, e):
        return p * 2**e if e >= 0 else p // 2 ** (-e)

    return [(scaled(ph, e), scaled(pw, e)) for e in exponents]


class ResidualConvUnit(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1, bias=False)

    def forward(self, x):
        h = self.conv1(F.relu(x))
        h = self.conv2(F.relu(h))
        return x + h


class PyramidAssembler(nn.Module):
    """Reshape per-level matched tokens into spatial maps at their strides."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.norms = nn.ModuleList(
            nn.LayerNorm(config.embed_dim) for _ in range(config.num_levels)
        )
        self.projs = nn.ModuleList(
            nn.Conv2d(config.embed_dim, config.decoder_dim, 1, bias=False)
            for _ in range(config.num_levels)
        )
        self.strides = pyramid_strides(config.patch_size, config.num_levels)

    def forward(self, level_tokens, resolution):
        """level_tokens: list of [M, d] or [B, M, d]; returns list of spatial maps
        [d_dec, H/s, W/s] (or batched), finest level first."""
        H, W = resolution
        ph, pw = self.config.patch_size
        gh, gw = H // ph, W // pw
        if len(level_tokens) != self.config.num_levels:
            raise ShapeError(
                f"expected {self.config.num_levels} levels, got {len(level_tokens)}"
            )
        maps = []
        for l, tokens in enumerate(level_tokens):
            single = tokens.dim() == 2
            if single:
                tokens = tokens.unsqueeze(0)
            B, M, d = tokens.shape
            if M != gh * gw:
                raise ShapeError(f"level {l + 1}: {M} tokens do not fill grid {(gh, gw)}")
            x = self.norms[l](tokens)
            x = x.transpose(1, 2).reshape(B, d, gh, gw)
            x = self.projs[l](x)
            sh, sw = self.strides[l]
            target = (max(1, H // sh), max(1, W // sw))
            if target != (gh, gw):
                x = F.interpolate(x, size=target, mode="bilinear", align_corners=False)
            maps.append(x.squeeze(0) if single else x)
        return maps


class ConvDecoder(nn.Module):
    """Top-down fusion of the feature pyramid into a full-resolution map.

    The final 1x1 head is task-group-specific and passed in per call; the
    fusion trunk is shared across all tasks.
    """

    def __init__(self, config):
        super().__init__()
        dim = config.decoder_dim
        self.config = config
        L = config.num_levels
        self.pre = nn.ModuleList(ResidualConvUnit(dim) for _ in range(L))
        self.post = nn.ModuleList(ResidualConvUnit(dim) for _ in range(L))
        self.out_conv = nn.Conv2d(dim, dim, 3, padding=1, bias=False)

    def forward(self, pyramid, head, resolution):
        """pyramid: list finest-first; head: nn.Conv2d(d_dec, 1, 1)."""
        if head.weight.shape[1] != self.config.decoder_dim:
            raise ConfigError(
                f"head expects {head.weight.shape[1]} channels, decoder emits "
                f"{self.config.decoder_dim}"
            )
        maps = list(pyramid)
        single = maps[0].dim() == 3
        if single:
            maps = [m.unsqueeze(0) for m in maps]
        x = self.post[-1](self.pre[-1](maps[-1]))
        for l in range(len(maps) - 2, -1, -1):
            x = F.interpolate(x, size=maps[l].shape[-2:], mode="bilinear", align_corners=False)
            x = x + self.pre[l](maps[l])
            x = self.post[l](x)
        x = self.out_conv(F.relu(x))
        x = F.interpolate(x, size=tuple(resolution), mode="bilinear", align_corners=False)
        x = head(x)
        return x.squeeze(0) if single else x
