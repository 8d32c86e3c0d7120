"""Shared configuration types, shape derivation and config-file loading.

Every other module takes its dimensions from here so that encoder, decoder
and experiment harness always agree on shapes and units.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml


class ConfigError(ValueError):
    """Invalid configuration value; maps to CLI exit code 2."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of the semantic transceiver.

    Defaults follow the full-scale setup (four transformer stages, 1x1-conv
    aggregator/decoder); toy runs override them through a config file.
    """

    height: int = 448
    width: int = 448
    patch_size: int = 4
    embed_dim: int = 96
    depths: tuple[int, ...] = (2, 2, 18, 2)
    num_heads: tuple[int, ...] = (3, 6, 12, 24)
    window_size: int = 7
    mlp_ratio: float = 4.0
    k: int = 256              # aggregator output channels; sets the compression ratio
    n_cls: int = 19
    ignore_index: int = 255

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "num_heads", tuple(self.num_heads))
        self.validate()

    def validate(self) -> None:
        if len(self.depths) != 4 or len(self.num_heads) != 4:
            raise ConfigError("depths and num_heads must each have 4 entries")
        for name, dim in (("height", self.height), ("width", self.width)):
            if dim <= 0 or dim % 32 != 0:
                raise ConfigError(f"{name}={dim} must be a positive multiple of 32")
        if self.patch_size != 4:
            raise ConfigError(f"patch_size={self.patch_size} unsupported; stages assume 4")
        if self.k < 1:
            raise ConfigError(f"k={self.k} must be >= 1")
        if self.n_cls < 2:
            raise ConfigError(f"n_cls={self.n_cls} must be >= 2")
        if self.window_size < 1:
            raise ConfigError(f"window_size={self.window_size} must be >= 1")
        for s, depth in enumerate(self.depths):
            if depth < 2 or depth % 2 != 0:
                raise ConfigError(
                    f"depths[{s}]={depth} must be even and >= 2 (stages pair regular "
                    "and shifted attention blocks)"
                )
        for s, (h, w, c) in enumerate(self.stage_shapes()):
            heads = self.num_heads[s]
            if heads < 1 or c % heads != 0:
                raise ConfigError(
                    f"stage {s + 1} channels {c} not divisible by num_heads[{s}]={heads}"
                )
            ws = self.stage_window(s)
            if h % ws != 0 or w % ws != 0:
                raise ConfigError(
                    f"stage {s + 1} spatial dims {h}x{w} not divisible by window size {ws}"
                )
        hidden = self.mlp_ratio * self.embed_dim
        if hidden != int(hidden) or int(hidden) < 1:
            raise ConfigError(
                f"mlp_ratio={self.mlp_ratio} times embed_dim={self.embed_dim} "
                "must be a positive integer"
            )

    def stage_channels(self) -> tuple[int, int, int, int]:
        c = self.embed_dim
        return (c, 2 * c, 4 * c, 8 * c)

    def stage_shapes(self) -> list[tuple[int, int, int]]:
        return derive_stage_shapes(self)

    def stage_window(self, stage: int) -> int:
        """Effective window size at a stage, clamped to the stage extent.

        Late stages of small inputs can be smaller than the configured window;
        the window then covers the full extent (and shifting is disabled),
        keeping the partition exact without padding.
        """
        h, w, _ = self.stage_shapes()[stage]
        return min(self.window_size, h, w)

    def stage_shift(self, stage: int) -> int:
        h, w, _ = self.stage_shapes()[stage]
        ws = self.stage_window(stage)
        return 0 if ws == min(h, w) else ws // 2

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["depths"] = list(self.depths)
        d["num_heads"] = list(self.num_heads)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config field(s): {sorted(unknown)}")
        return cls(**d)


def derive_stage_shapes(config: ModelConfig) -> list[tuple[int, int, int]]:
    """Spatial/channel shape of each of the four stage outputs.

    Patch embedding divides by the 4x4 patch; every later stage halves the
    spatial dims and doubles the channels.
    """
    for name, dim in (("height", config.height), ("width", config.width)):
        if dim % 32 != 0:
            raise ConfigError(f"{name}={dim} is not divisible by 32")
    h, w, c = config.height // 4, config.width // 4, config.embed_dim
    shapes = []
    for s in range(4):
        shapes.append((h >> s, w >> s, c << s))
    return shapes


def compression_ratio(config: ModelConfig) -> float:
    """Source elements per transmitted feature element, (H*W*3) / (H/16 * W/16 * K)."""
    if config.k < 1:
        raise ConfigError(f"k={config.k} must be >= 1")
    return (config.height * config.width * 3) / (
        (config.height // 16) * (config.width // 16) * config.k
    )


def k_for_ratio(ratio: float) -> int:
    """Aggregator channel count that realizes a target compression ratio."""
    k = 768 / ratio
    if k != int(k) or int(k) < 1:
        raise ConfigError(f"ratio={ratio} does not correspond to an integer channel count")
    return int(k)


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 10.0
    h: float = 1.0            # fading coefficient; 1.0 = pure AWGN
    seed: int = 0

    def __post_init__(self):
        import math

        if not math.isfinite(self.snr_db):
            raise ConfigError(f"snr_db={self.snr_db} must be finite")
        if self.h <= 0:
            raise ConfigError(f"fading coefficient h={self.h} must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 8
    crop_size: tuple[int, int] = (64, 64)
    snr_low_db: float = 1.0
    snr_high_db: float = 20.0
    ohem: bool = True
    ohem_threshold: float = 0.7
    ohem_min_kept_fraction: float = 0.05
    lr: float = 6e-5
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    warmup_fraction: float = 0.01
    eval_every: int = 500
    eval_images: int = 64
    checkpoint_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "crop_size", tuple(self.crop_size))
        object.__setattr__(self, "betas", tuple(self.betas))
        if not (0.0 < self.ohem_threshold < 1.0):
            raise ConfigError(f"ohem_threshold={self.ohem_threshold} must be in (0, 1)")
        if self.snr_low_db > self.snr_high_db:
            raise ConfigError(
                f"snr_low_db={self.snr_low_db} exceeds snr_high_db={self.snr_high_db}"
            )
        if not (0.0 < self.ohem_min_kept_fraction <= 1.0):
            raise ConfigError("ohem_min_kept_fraction must be in (0, 1]")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"            # synthetic | cityscapes_layout
    root: str = ""                     # cityscapes_layout directory root
    n_train: int = 2000
    n_test: int = 200
    height: int = 64
    width: int = 64
    n_cls: int = 5
    density: float = 1.0
    texture: float = 0.06
    seed: int = 1234

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown data config field(s): {sorted(unknown)}")
        cfg = cls(**d)
        if cfg.kind not in ("synthetic", "cityscapes_layout"):
            raise ConfigError(f"unknown dataset kind {cfg.kind!r}")
        return cfg


RECORD_HEADER = "system,codec,modulation,snr_db,ratio,seed,miou"

SYSTEMS = ("issc", "baseline")
CODECS = ("none", "jpeg", "png")
MODULATIONS = ("none", "qam4", "qam16", "qam64")


@dataclass(frozen=True)
class ExperimentRecord:
    """One evaluated (system, SNR, ratio, seed) -> mIoU cell."""

    system: str
    codec: str
    modulation: str
    snr_db: float
    ratio: float
    seed: int
    miou: float

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigError(f"system must be one of {SYSTEMS}, got {self.system!r}")
        if self.codec not in CODECS:
            raise ConfigError(f"codec must be one of {CODECS}, got {self.codec!r}")
        if self.modulation not in MODULATIONS:
            raise ConfigError(
                f"modulation must be one of {MODULATIONS}, got {self.modulation!r}"
            )
        if not (0.0 <= self.miou <= 1.0):
            raise ConfigError(f"miou={self.miou} outside [0, 1]")

    def to_csv_row(self) -> str:
        return (
            f"{self.system},{self.codec},{self.modulation},"
            f"{self.snr_db:g},{self.ratio:g},{self.seed},{self.miou:.6f}"
        )

    @classmethod
    def from_csv_row(cls, row: str) -> "ExperimentRecord":
        parts = row.strip().split(",")
        if len(parts) != 7:
            raise ConfigError(f"malformed record row: {row!r}")
        return cls(
            system=parts[0],
            codec=parts[1],
            modulation=parts[2],
            snr_db=float(parts[3]),
            ratio=float(parts[4]),
            seed=int(parts[5]),
            miou=float(parts[6]),
        )


# Table-I-style key names accepted in the model section of a config file.
_MODEL_KEY_ALIASES = {
    "depths": "depths",
    "head_number": "num_heads",
    "num_heads": "num_heads",
    "embedding_dimension": "embed_dim",
    "embed_dim": "embed_dim",
    "window_size": "window_size",
    "patch_size": "patch_size",
    "mlp_ratio": "mlp_ratio",
    "k": "k",
    "n_cls": "n_cls",
    "height": "height",
    "width": "width",
    "ignore_index": "ignore_index",
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a mapping of sections")
        unknown = set(raw) - {"model", "train", "data"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        model_raw = dict(raw.get("model", {}))
        model = {}
        for key, value in model_raw.items():
            if key not in _MODEL_KEY_ALIASES:
                raise ConfigError(f"unknown model config field: {key}")
            model[_MODEL_KEY_ALIASES[key]] = value
        return cls(
            model=ModelConfig.from_dict(model),
            train=TrainConfig.from_dict(dict(raw.get("train", {}))),
            data=DataConfig.from_dict(dict(raw.get("data", {}))),
        )


def load_config(path) -> ExperimentConfig:
    """Load a YAML config file with model/train/data sections."""
    try:
        with open(path, "r") as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} is not valid YAML: {e}")
    return ExperimentConfig.from_dict(raw or {})
