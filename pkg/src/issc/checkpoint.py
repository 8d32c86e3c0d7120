"""Checkpoint archive: one .npz keyed by hierarchical parameter names plus a
JSON manifest recording the model configuration and feature concat order."""

from __future__ import annotations

import json

import numpy as np
import torch

from .config import ModelConfig

FORMAT_VERSION = 1
MANIFEST_KEY = "__manifest__"


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    arrays = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    manifest = {
        "format": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "concat_order": ["F1", "F2", "F3", "F4"],
    }
    if extra:
        manifest["extra"] = extra
    arrays[MANIFEST_KEY] = np.frombuffer(
        json.dumps(manifest).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def read_manifest(path) -> dict:
    with np.load(path) as data:
        if MANIFEST_KEY not in data:
            raise ValueError(f"{path} is not a model checkpoint (no manifest)")
        return json.loads(bytes(data[MANIFEST_KEY]).decode("utf-8"))


def load_checkpoint(path):
    """Rebuild the model recorded in the manifest and load its parameters."""
    from .decoder import IsscModel

    with np.load(path) as data:
        manifest = json.loads(bytes(data[MANIFEST_KEY]).decode("utf-8"))
        if manifest.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format')}")
        config = ModelConfig.from_dict(manifest["model_config"])
        model = IsscModel(config)
        state = model.state_dict()
        stored = {k: data[k] for k in data.files if k != MANIFEST_KEY}
        missing = set(state) - set(stored)
        extra = set(stored) - set(state)
        if missing or extra:
            raise ValueError(
                f"checkpoint keys do not match model: missing={sorted(missing)} "
                f"extra={sorted(extra)}"
            )
        model.load_state_dict({k: torch.from_numpy(v) for k, v in stored.items()})
    model.eval()
    return model, manifest
