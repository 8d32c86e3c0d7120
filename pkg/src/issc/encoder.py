"""Semantic feature aggregator: fuse the four stage features into the
transmitted tensor x at (H/16, W/16, K)."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError, ModelConfig


def _avg_downsample(z: torch.Tensor, factor: int) -> torch.Tensor:
    """Average pool channel-last features by an integer factor."""
    b, h, w, c = z.shape
    if h % factor != 0 or w % factor != 0:
        raise ValueError(f"dims {h}x{w} not divisible by pooling factor {factor}")
    z = z.view(b, h // factor, factor, w // factor, factor, c)
    return z.mean(dim=(2, 4))


def _bilinear_upsample(z: torch.Tensor, factor: int) -> torch.Tensor:
    z = z.permute(0, 3, 1, 2)
    z = F.interpolate(z, scale_factor=factor, mode="bilinear", align_corners=False)
    return z.permute(0, 2, 3, 1)


def resample_multi_scale(f1, f2, f3, f4):
    """Bring F1/F2/F4 to F3's spatial size (rates 1/4, 1/2, 1, 2); F3 passes through."""
    b, h3, w3, _ = f3.shape
    expected = {
        "F1": (b, 4 * h3, 4 * w3), "F2": (b, 2 * h3, 2 * w3), "F4": (b, h3 // 2, w3 // 2),
    }
    for name, f in (("F1", f1), ("F2", f2), ("F4", f4)):
        if tuple(f.shape[:3]) != expected[name]:
            raise ValueError(
                f"{name} spatial shape {tuple(f.shape[:3])} inconsistent with F3 "
                f"{(b, h3, w3)}; expected {expected[name]}"
            )
    return (
        _avg_downsample(f1, 4),
        _avg_downsample(f2, 2),
        f3,
        _bilinear_upsample(f4, 2),
    )


class FeatureAggregator(nn.Module):
    """Concatenate the resampled stage features and project to K channels
    with a 1x1, stride-1 convolution (a per-pixel affine map)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.embed_dim
        self.in_channels = c + 2 * c + 4 * c + 8 * c
        self.proj = nn.Linear(self.in_channels, config.k)
        nn.init.trunc_normal_(self.proj.weight, std=0.02)
        nn.init.zeros_(self.proj.bias)

    def forward(self, f1, f2, f3, f4) -> torch.Tensor:
        f1d, f2d, f3d, f4u = resample_multi_scale(f1, f2, f3, f4)
        fused = torch.cat([f1d, f2d, f3d, f4u], dim=-1)
        if fused.shape[-1] != self.in_channels:
            raise ConfigError(
                f"concatenated channels {fused.shape[-1]} do not match aggregator "
                f"input width {self.in_channels}"
            )
        return self.proj(fused)


def power_normalize(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Scale x to unit average element power; returns (x_hat, scale).

    The scale sqrt(mean(x^2)) is assumed known at the receiver, which undoes
    it after the channel.
    """
    power = (x ** 2).mean()
    if power == 0:
        raise ValueError("cannot power-normalize an all-zero tensor")
    scale = torch.sqrt(power)
    return x / scale, scale
