"""Multi-modal image encoder.

The encoder patchifies a variable number of 3-channel input modalities into
one joint token sequence (modality-major, then row-major over the spatial
grid) and contextualizes all tokens with plain transformer blocks.  Spatial
and inter-modal structure enters through a relative position bias: every
attention layer adds a learnable scalar indexed by (source modality, target
modality, row offset, column offset).  The bias tables and all additive bias
vectors of the blocks can be substituted per task, which is the entire
task-adaptation surface of the encoder.
"""

import math
from functools import lru_cache

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ResolutionMismatchError, ShapeError

ALL_BIAS_NAMES = ("norm1", "qkv", "proj", "norm2", "fc1", "fc2")
ATTN_BIAS_NAMES = ("norm1", "qkv", "proj")
MLP_BIAS_NAMES = ("norm2", "fc1", "fc2")


def bias_names_for_mode(mode: str) -> tuple:
    return {"all": ALL_BIAS_NAMES, "attn": ATTN_BIAS_NAMES, "mlp": MLP_BIAS_NAMES}[mode]


@lru_cache(maxsize=32)
def relative_position_index(modalities: int, grid_h: int, grid_w: int) -> torch.Tensor:
    """Flat index [T, T] into a position table viewed as [I*I * R] where
    R = (2*grid_h - 1) * (2*grid_w - 1) and T = modalities * grid_h * grid_w."""
    m = torch.arange(modalities).repeat_interleave(grid_h * grid_w)
    h = torch.arange(grid_h).repeat_interleave(grid_w).repeat(modalities)
    w = torch.arange(grid_w).repeat(grid_h * modalities)
    pair = m[:, None] * modalities + m[None, :]
    dh = h[:, None] - h[None, :] + grid_h - 1
    dw = w[:, None] - w[None, :] + grid_w - 1
    offsets = (2 * grid_h - 1) * (2 * grid_w - 1)
    return pair * offsets + dh * (2 * grid_w - 1) + dw


def position_bias(table: torch.Tensor, m: int, m_prime: int, dh: int, dw: int):
    """Bias scalar for a (query modality, key modality, spatial offset) tuple.

    ``table`` is one attention layer's [I*I, 2*grid_h-1, 2*grid_w-1] parameter; the
    offset is query position minus key position.
    """
    pairs, rows, cols = table.shape
    modalities = int(round(math.isqrt(pairs)))
    grid_h = (rows + 1) // 2
    grid_w = (cols + 1) // 2
    if not (0 <= m < modalities and 0 <= m_prime < modalities):
        raise IndexError(f"modality pair ({m}, {m_prime}) out of range for I={modalities}")
    if abs(dh) > grid_h - 1 or abs(dw) > grid_w - 1:
        raise IndexError(f"offset ({dh}, {dw}) exceeds grid ({grid_h}, {grid_w})")
    return table[m * modalities + m_prime, dh + grid_h - 1, dw + grid_w - 1]


def _trunc_normal_(tensor, std=0.02):
    nn.init.trunc_normal_(tensor, std=std, a=-2 * std, b=2 * std)


class EncoderBlock(nn.Module):
    """Pre-norm transformer block with task-substitutable bias vectors.

    Parameters are held explicitly (not as nn.Linear) so a forward pass can
    replace any additive bias with a task-specific one without touching
    shared state.  Task biases are stored as offsets on the shared vectors:
    the effective bias is shared + offset, so the shared biases keep learning
    through every task during meta-training and an offset of zero IS the
    shared operating point (what a freshly created task starts from).
    """

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.norm1_weight = nn.Parameter(torch.ones(dim))
        self.norm1_bias = nn.Parameter(torch.zeros(dim))
        self.qkv_weight = nn.Parameter(torch.empty(3 * dim, dim))
        self.qkv_bias = nn.Parameter(torch.zeros(3 * dim))
        self.proj_weight = nn.Parameter(torch.empty(dim, dim))
        self.proj_bias = nn.Parameter(torch.zeros(dim))
        self.norm2_weight = nn.Parameter(torch.ones(dim))
        self.norm2_bias = nn.Parameter(torch.zeros(dim))
        self.fc1_weight = nn.Parameter(torch.empty(hidden, dim))
        self.fc1_bias = nn.Parameter(torch.zeros(hidden))
        self.fc2_weight = nn.Parameter(torch.empty(dim, hidden))
        self.fc2_bias = nn.Parameter(torch.zeros(dim))
        for w in (self.qkv_weight, self.proj_weight, self.fc1_weight, self.fc2_weight):
            _trunc_normal_(w)

    def bias_shapes(self) -> dict:
        return {
            "norm1": self.norm1_bias.shape,
            "qkv": self.qkv_bias.shape,
            "proj": self.proj_bias.shape,
            "norm2": self.norm2_bias.shape,
            "fc1": self.fc1_bias.shape,
            "fc2": self.fc2_bias.shape,
        }

    def current_biases(self) -> dict:
        return {name: getattr(self, f"{name}_bias") for name in ALL_BIAS_NAMES}

    def forward(self, x, rel_bias=None, bias_override=None):
        """x: [B, T, d]; rel_bias: [T, T] added to every head's logits.

        ``bias_override`` maps bias names to task offsets; the effective bias
        is the shared vector plus the offset.
        """

        def pick(name):
            shared = getattr(self, f"{name}_bias")
            if bias_override is not None and name in bias_override:
                return shared + bias_override[name]
            return shared

        B, T, d = x.shape
        h = F.layer_norm(x, (d,), self.norm1_weight, pick("norm1"))
        qkv = F.linear(h, self.qkv_weight, pick("qkv"))
        qkv = qkv.reshape(B, T, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if rel_bias is not None:
            logits = logits + rel_bias.unsqueeze(0).unsqueeze(0)
        attn = logits.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, T, d)
        x = x + F.linear(out, self.proj_weight, pick("proj"))
        h = F.layer_norm(x, (d,), self.norm2_weight, pick("norm2"))
        h = F.linear(h, self.fc1_weight, pick("fc1"))
        h = F.gelu(h)
        x = x + F.linear(h, self.fc2_weight, pick("fc2"))
        return x


class PatchEmbed(nn.Module):
    """Linear projection of (channels, p_h, p_w) patches to embeddings."""

    def __init__(self, channels: int, patch_size, dim: int):
        super().__init__()
        self.channels = channels
        self.patch_size = tuple(patch_size)
        ph, pw = self.patch_size
        self.weight = nn.Parameter(torch.empty(dim, channels * ph * pw))
        self.bias = nn.Parameter(torch.zeros(dim))
        _trunc_normal_(self.weight)

    def extract(self, x):
        """[..., C, H, W] -> [..., M, C*ph*pw] patch vectors, row-major."""
        ph, pw = self.patch_size
        *lead, c, H, W = x.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        if H % ph:
            raise ShapeError(f"height {H} not divisible by patch height {ph}")
        if W % pw:
            raise ShapeError(f"width {W} not divisible by patch width {pw}")
        gh, gw = H // ph, W // pw
        x = x.reshape(*lead, c, gh, ph, gw, pw)
        n = x.dim()
        # [..., c, gh, ph, gw, pw] -> [..., gh, gw, c, ph, pw]
        order = list(range(n - 5)) + [n - 4, n - 2, n - 5, n - 3, n - 1]
        x = x.permute(*order)
        return x.reshape(*lead, gh * gw, c * ph * pw)

    def forward(self, x):
        return F.linear(self.extract(x), self.weight, self.bias)


class ImageEncoder(nn.Module):
    """Tokenizes [I, 3, H, W] inputs and returns multi-level token features.

    Only modality-0 tokens are exposed per level; the remaining modalities
    contribute context through attention.  The encoder has no absolute
    positional embedding; all positional information flows through the
    relative bias tables supplied per forward call.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.patch_embed = PatchEmbed(3, config.patch_size, config.embed_dim)
        self.blocks = nn.ModuleList(
            EncoderBlock(config.embed_dim, config.num_heads, config.mlp_ratio)
            for _ in range(config.depth)
        )
        self.tap_layers = config.tap_layers

    @property
    def tunable_bias_names(self) -> tuple:
        return bias_names_for_mode(self.config.bias_tuning)

    def bias_template(self):
        """Per-block {name: shape} for the tunable bias subset."""
        names = self.tunable_bias_names
        return [
            {name: blk.bias_shapes()[name] for name in names} for blk in self.blocks
        ]

    def current_bias_values(self):
        names = self.tunable_bias_names
        return [
            {name: blk.current_biases()[name].detach().clone() for name in names}
            for blk in self.blocks
        ]

    def zero_bias_offsets(self):
        """Fresh task bias offsets (zero = the shared operating point)."""
        names = self.tunable_bias_names
        return [
            {name: torch.zeros_like(blk.current_biases()[name]) for name in names}
            for blk in self.blocks
        ]

    def patchify(self, x):
        """[I, 3, H, W] or [B, I, 3, H, W] -> [I*M, d] / [B, I*M, d] tokens."""
        single = x.dim() == 4
        if single:
            x = x.unsqueeze(0)
        if x.dim() != 5:
            raise ShapeError(f"expected [I, 3, H, W] or [B, I, 3, H, W], got {tuple(x.shape)}")
        B, I, _, H, W = x.shape
        tokens = self.patch_embed(x)  # [B, I, M, d]
        tokens = tokens.reshape(B, -1, tokens.shape[-1])
        return tokens.squeeze(0) if single else tokens

    def _check_tables(self, pos_tables, modalities, grid):
        gh, gw = grid
        if pos_tables is None:
            return
        if len(pos_tables) != len(self.blocks):
            raise ResolutionMismatchError(
                f"{len(pos_tables)} bias tables for {len(self.blocks)} blocks"
            )
        for table in pos_tables:
            pairs, rows, cols = table.shape
            if pairs != modalities * modalities:
                raise ResolutionMismatchError(
                    f"table holds {pairs} modality pairs, input needs {modalities * modalities}"
                )
            if rows != 2 * gh - 1 or cols != 2 * gw - 1:
                raise ResolutionMismatchError(
                    f"table offsets {(rows, cols)} do not match grid {(gh, gw)}; "
                    "run adapt_resolution first"
                )

    def forward(self, x, biases=None, pos_tables=None):
        """Returns a list of L token matrices, [M, d] (or [B, M, d] if batched).

        ``biases``: per-block {name: tensor} task bias offsets.
        ``pos_tables``: per-block [I*I, 2*grid_h-1, 2*grid_w-1] relative bias tables.
        """
        single = x.dim() == 4
        if single:
            x = x.unsqueeze(0)
        B, I, _, H, W = x.shape
        ph, pw = self.config.patch_size
        grid = (H // ph, W // pw)
        M = grid[0] * grid[1]
        self._check_tables(pos_tables, I, grid)
        tokens = self.patchify(x)
        rel_index = None
        if pos_tables is not None:
            rel_index = relative_position_index(I, *grid).to(tokens.device)
        levels = []
        taps = set(self.tap_layers)
        for i, blk in enumerate(self.blocks):
            rel_bias = None
            if pos_tables is not None:
                rel_bias = pos_tables[i].reshape(-1)[rel_index]
            override = biases[i] if biases is not None else None
            tokens = blk(tokens, rel_bias=rel_bias, bias_override=override)
            if i + 1 in taps:
                levels.append(tokens[:, :M, :])
        return [lvl.squeeze(0) for lvl in levels] if single else levels
