"""Receiver side: denoise the received features and reconstruct per-pixel
class probabilities and the segmentation mask."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import SwinBackbone
from .channel import fading_transmit
from .config import ConfigError, ModelConfig
from .encoder import FeatureAggregator, power_normalize


class FeatureDecoder(nn.Module):
    """Three 1x1, stride-1 convolutions (K -> K each) that learn to strip
    channel noise from the received features. GELU follows the first two;
    the third output feeds the reconstructor directly."""

    def __init__(self, config: ModelConfig, activation=F.gelu):
        super().__init__()
        self.config = config
        self.activation = activation
        self.conv1 = nn.Linear(config.k, config.k)
        self.conv2 = nn.Linear(config.k, config.k)
        self.conv3 = nn.Linear(config.k, config.k)
        for layer in (self.conv1, self.conv2, self.conv3):
            nn.init.trunc_normal_(layer.weight, std=0.02)
            nn.init.zeros_(layer.bias)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.shape[-1] != self.config.k:
            raise ConfigError(
                f"received features have {y.shape[-1]} channels, decoder expects "
                f"{self.config.k}"
            )
        act = self.activation if self.activation is not None else lambda t: t
        y = act(self.conv1(y))
        y = act(self.conv2(y))
        return self.conv3(y)


class Reconstructor(nn.Module):
    """conv(K->K) -> upsample x2, x2, x4 -> conv(K->N_cls) -> softmax.

    Output spatial dims are 16x the input's, matching the original image.
    """

    def __init__(self, config: ModelConfig, activation=F.gelu):
        super().__init__()
        self.config = config
        self.activation = activation
        self.conv_in = nn.Linear(config.k, config.k)
        self.conv_out = nn.Linear(config.k, config.n_cls)
        for layer in (self.conv_in, self.conv_out):
            nn.init.trunc_normal_(layer.weight, std=0.02)
            nn.init.zeros_(layer.bias)

    def logits(self, f: torch.Tensor) -> torch.Tensor:
        act = self.activation if self.activation is not None else lambda t: t
        z = act(self.conv_in(f))
        z = z.permute(0, 3, 1, 2)
        for factor in (2, 2, 4):
            z = F.interpolate(z, scale_factor=factor, mode="bilinear", align_corners=False)
        z = z.permute(0, 2, 3, 1)
        return self.conv_out(z)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        logits = self.logits(f)
        # max-subtracted softmax keeps the exponentials in range
        logits = logits - logits.max(dim=-1, keepdim=True).values
        exp = torch.exp(logits)
        return exp / exp.sum(dim=-1, keepdim=True)


def argmax_mask(probs) -> np.ndarray:
    """Per-pixel argmax over the class dimension; ties take the lowest index."""
    if isinstance(probs, torch.Tensor):
        probs = probs.detach().cpu().numpy()
    return np.argmax(probs, axis=-1).astype(np.int64)


class IsscModel(nn.Module):
    """End-to-end transceiver: backbone -> aggregator -> power normalization
    -> channel -> feature decoder -> reconstructor.

    ``snr_db=None`` runs a noiseless channel, which doubles as the clean
    reference segmenter. The transmit-power scale (and the fading
    coefficient, when used) are treated as known at the receiver.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.backbone = SwinBackbone(config)
        self.aggregator = FeatureAggregator(config)
        self.feature_decoder = FeatureDecoder(config)
        self.reconstructor = Reconstructor(config)

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        f1, f2, f3, f4 = self.backbone(image)
        return self.aggregator(f1, f2, f3, f4)

    def forward(
        self,
        image: torch.Tensor,
        snr_db: float | None = None,
        noise_seed: int = 0,
        h: float = 1.0,
    ) -> torch.Tensor:
        x = self.encode(image)
        x_hat, scale = power_normalize(x)
        if snr_db is None:
            y = h * x_hat
        else:
            y = fading_transmit(x_hat, h, snr_db, noise_seed)
        y = y / h * scale
        f = self.feature_decoder(y)
        return self.reconstructor(f)

    @torch.no_grad()
    def predict(
        self,
        image: torch.Tensor,
        snr_db: float | None = None,
        noise_seed: int = 0,
        h: float = 1.0,
    ) -> tuple[torch.Tensor, np.ndarray]:
        probs = self.forward(image, snr_db=snr_db, noise_seed=noise_seed, h=h)
        return probs, argmax_mask(probs)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(config: ModelConfig, seed: int = 0) -> IsscModel:
    """Construct a model with seeded parameter initialization."""
    torch.manual_seed(seed)
    return IsscModel(config)
