"""Multi-scale windowed-attention feature extractor.

Four stages of transformer blocks alternate plain and shifted window
attention; patch merging halves the spatial dims and doubles the channels
between stages. Features flow channel-last, (B, h, w, c).
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig

ATTN_MASK_FILL = -100.0


def window_partition(z: torch.Tensor, window: int) -> torch.Tensor:
    """(B, h, w, c) -> (B * h*w/window^2, window^2, c), non-overlapping tiles."""
    b, h, w, c = z.shape
    if h % window != 0 or w % window != 0:
        raise ValueError(
            f"spatial dims {h}x{w} not divisible by window size {window}; "
            "padding is not applied"
        )
    z = z.view(b, h // window, window, w // window, window, c)
    return z.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, c)


def window_reverse(windows: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    if h % window != 0 or w % window != 0:
        raise ValueError(f"spatial dims {h}x{w} not divisible by window size {window}")
    b = windows.shape[0] // ((h // window) * (w // window))
    z = windows.view(b, h // window, w // window, window, window, -1)
    return z.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


def relative_position_index(window: int) -> torch.Tensor:
    """(window^2, window^2) lookup into a flattened (2w-1)x(2w-1) offset table."""
    coords = torch.stack(
        torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")
    ).flatten(1)                                        # (2, w*w)
    rel = coords[:, :, None] - coords[:, None, :]       # (2, w*w, w*w)
    rel = rel.permute(1, 2, 0) + (window - 1)           # offsets shifted to [0, 2w-2]
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


class WindowAttention(nn.Module):
    """Multi-head self-attention inside one window with relative position bias.

    Computes softmax(Q K^T / sqrt(d) + L (+ mask)) V per head, concatenates
    the heads and applies the output projection. Projections carry no bias;
    the learnable bias table L holds one scalar per head per relative offset.
    """

    def __init__(self, dim: int, num_heads: int, window: int, label: str = "attn"):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.window = window
        self.label = label
        self.w_q = nn.Linear(dim, dim, bias=False)
        self.w_k = nn.Linear(dim, dim, bias=False)
        self.w_v = nn.Linear(dim, dim, bias=False)
        self.w_o = nn.Linear(dim, dim, bias=False)
        self.relative_bias = nn.Parameter(
            torch.zeros(num_heads, (2 * window - 1) ** 2)
        )
        self.register_buffer(
            "rel_index", relative_position_index(window), persistent=False
        )

    def realized_bias(self) -> torch.Tensor:
        """Bias table expanded to one (window^2, window^2) matrix per head."""
        n = self.window * self.window
        return self.relative_bias[:, self.rel_index.reshape(-1)].view(
            self.num_heads, n, n
        )

    def attention_weights(
        self, zw: torch.Tensor, mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Post-softmax attention, (n_windows, heads, tokens, tokens)."""
        nw, n, c = zw.shape
        if n != self.window * self.window:
            raise ValueError(f"expected {self.window ** 2} tokens per window, got {n}")
        d = c // self.num_heads
        q = self.w_q(zw).view(nw, n, self.num_heads, d).transpose(1, 2)
        k = self.w_k(zw).view(nw, n, self.num_heads, d).transpose(1, 2)
        attn = q @ k.transpose(-2, -1) / (d ** 0.5)
        attn = attn + self.realized_bias().unsqueeze(0)
        if mask is not None:
            groups = mask.shape[0]
            attn = attn.view(nw // groups, groups, self.num_heads, n, n)
            attn = attn + mask.unsqueeze(0).unsqueeze(2)
            attn = attn.view(nw, self.num_heads, n, n)
        if torch.isnan(attn).any():
            raise RuntimeError(f"NaN in attention logits at layer {self.label!r}")
        return attn.softmax(dim=-1)

    def forward(self, zw: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        nw, n, c = zw.shape
        d = c // self.num_heads
        attn = self.attention_weights(zw, mask)
        v = self.w_v(zw).view(nw, n, self.num_heads, d).transpose(1, 2)
        out = (attn @ v).transpose(1, 2).reshape(nw, n, c)
        return self.w_o(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


def shift_attention_mask(h: int, w: int, window: int, shift: int) -> torch.Tensor:
    """Additive mask keeping attention within the regions of the shifted grid.

    After the cyclic roll, a window can hold tokens that were not neighbours;
    pairs from different regions get a large negative logit offset.
    """
    region = torch.zeros(1, h, w, 1)
    slices = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    idx = 0
    for hs in slices:
        for ws_ in slices:
            region[:, hs, ws_, :] = idx
            idx += 1
    region_windows = window_partition(region, window).squeeze(-1)   # (nw, window^2)
    diff = region_windows.unsqueeze(1) - region_windows.unsqueeze(2)
    return torch.where(diff != 0, torch.full_like(diff, ATTN_MASK_FILL), torch.zeros_like(diff))


class SwinBlock(nn.Module):
    """One transformer block: pre-norm W-MSA (or SW-MSA) and pre-norm MLP,
    each wrapped in a residual connection."""

    def __init__(
        self,
        dim: int,
        num_heads: int,
        resolution: tuple[int, int],
        window: int,
        shift: int,
        mlp_ratio: float,
        label: str = "block",
    ):
        super().__init__()
        h, w = resolution
        if shift < 0 or shift >= window:
            raise ValueError(f"shift {shift} must be in [0, window)")
        self.resolution = resolution
        self.window = window
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim, eps=1e-5)
        self.attn = WindowAttention(dim, num_heads, window, label=f"{label}.attn")
        self.norm2 = nn.LayerNorm(dim, eps=1e-5)
        hidden = int(mlp_ratio * dim)
        if hidden != mlp_ratio * dim:
            raise ValueError(f"mlp_ratio {mlp_ratio} * dim {dim} is not integral")
        self.mlp = Mlp(dim, hidden)
        if shift > 0:
            self.register_buffer(
                "attn_mask", shift_attention_mask(h, w, window, shift), persistent=False
            )
        else:
            self.attn_mask = None

    def windowed_attention(self, z: torch.Tensor) -> torch.Tensor:
        """Cyclic shift (when shifted), window partition, attention, undo."""
        b, h, w, c = z.shape
        if self.shift > 0:
            z = torch.roll(z, shifts=(-self.shift, -self.shift), dims=(1, 2))
        windows = window_partition(z, self.window)
        mask = self.attn_mask
        if mask is not None and mask.dtype != windows.dtype:
            mask = mask.to(windows.dtype)
        windows = self.attn(windows, mask=mask)
        z = window_reverse(windows, self.window, h, w)
        if self.shift > 0:
            z = torch.roll(z, shifts=(self.shift, self.shift), dims=(1, 2))
        return z

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        b, h, w, c = z.shape
        if (h, w) != self.resolution:
            raise ValueError(f"expected resolution {self.resolution}, got {(h, w)}")
        z = z + self.windowed_attention(self.norm1(z))
        return z + self.mlp(self.norm2(z))


class PatchEmbed(nn.Module):
    """Flatten each patch_size^2 x 3 patch and map it linearly to embed_dim."""

    def __init__(self, patch_size: int, embed_dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Linear(3 * patch_size * patch_size, embed_dim)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        b, h, w, c = image.shape
        p = self.patch_size
        if c != 3:
            raise ValueError(f"expected 3 input channels, got {c}")
        if h % p != 0 or w % p != 0:
            raise ValueError(f"image dims {h}x{w} not divisible by patch size {p}")
        if image.numel() and (image.max() > 1.0 + 1e-6 or image.min() < -1e-6):
            raise ValueError("image values outside [0, 1]; normalize before embedding")
        patches = image.view(b, h // p, p, w // p, p, c)
        patches = patches.permute(0, 1, 3, 2, 4, 5).reshape(b, h // p, w // p, p * p * c)
        return self.proj(patches)


class PatchMerging(nn.Module):
    """Concatenate each 2x2 neighbourhood, normalize and reduce 4c -> 2c."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim, eps=1e-5)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        b, h, w, c = z.shape
        if h % 2 != 0 or w % 2 != 0:
            raise ValueError(f"cannot merge odd spatial dims {h}x{w}")
        z00 = z[:, 0::2, 0::2, :]
        z10 = z[:, 1::2, 0::2, :]
        z01 = z[:, 0::2, 1::2, :]
        z11 = z[:, 1::2, 1::2, :]
        merged = torch.cat([z00, z10, z01, z11], dim=-1)
        return self.reduction(self.norm(merged))


class SwinBackbone(nn.Module):
    """Patch embedding plus four stages; returns the per-stage feature maps."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.patch_embed = PatchEmbed(config.patch_size, config.embed_dim)
        shapes = config.stage_shapes()
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        for s, (h, w, c) in enumerate(shapes):
            window = config.stage_window(s)
            shift = config.stage_shift(s)
            blocks = nn.ModuleList()
            for b in range(config.depths[s]):
                blocks.append(
                    SwinBlock(
                        dim=c,
                        num_heads=config.num_heads[s],
                        resolution=(h, w),
                        window=window,
                        shift=0 if b % 2 == 0 else shift,
                        mlp_ratio=config.mlp_ratio,
                        label=f"stage{s + 1}.block{b}",
                    )
                )
            self.stages.append(blocks)
            if s < 3:
                self.merges.append(PatchMerging(c))
        self.apply(init_parameters)

    def forward(self, image: torch.Tensor):
        z = self.patch_embed(image)
        features = []
        for s, blocks in enumerate(self.stages):
            for block in blocks:
                z = block(z)
            features.append(z)
            if s < 3:
                z = self.merges[s](z)
        return tuple(features)


def init_parameters(module: nn.Module) -> None:
    """Truncated-normal projections, zero biases and zero bias tables."""
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
    elif isinstance(module, WindowAttention):
        nn.init.zeros_(module.relative_bias)
