"""Sweep harness: deterministic seed schedule, per-cell evaluation of the
semantic and classical systems, CSV persistence and plots.

Every CSV row is reproducible from (config, master seed) alone: the per-cell
seed is a hash of (master seed, system label, axis value, repeat), so adding
repeats or systems never perturbs existing cells.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from .baseline.chain import DecodeFailure, baseline_segment, baseline_transmit
from .baseline.ldpc import LdpcCode, load_default_code
from .baseline.qam import make_constellation
from .checkpoint import load_checkpoint
from .config import ConfigError, ExperimentRecord, RECORD_HEADER, compression_ratio
from .decoder import IsscModel, argmax_mask
from .metrics import ConfusionMatrix

TRANSMIT_LOG_HEADER = (
    "system,codec,modulation,snr_db,ratio,seed,frame,symbols,residual_bit_errors,decode_ok"
)

_MODULATION_NAME = {4: "qam4", 16: "qam16", 64: "qam64"}


def cell_seed(master_seed: int, system: str, value: float, repeat: int) -> int:
    """Stable per-cell seed from the sweep coordinates."""
    key = f"{master_seed}|{system}|{value:.6f}|{repeat}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "big")


@dataclass
class SweepSpec:
    axis: str                                  # snr_db | compression_ratio
    values: list[float]
    systems: list[str]                         # issc | baseline_jpeg | baseline_png
    repeats: int = 1
    master_seed: int = 0
    modulation_order: int = 16
    images_per_cell: int = 8
    baseline_images_per_cell: int = 1
    target_ratio: float = 3.0
    baseline_snr_db: float = 30.0              # channel for ratio-axis baseline cells
    issc_snr_db: float = 10.0                  # channel for ratio-axis semantic cells

    def __post_init__(self):
        if self.axis not in ("snr_db", "compression_ratio"):
            raise ConfigError(f"unknown sweep axis {self.axis!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if list(self.values) != sorted(set(self.values)):
            raise ConfigError("sweep values must be strictly increasing")
        for system in self.systems:
            if system not in ("issc", "baseline_jpeg", "baseline_png"):
                raise ConfigError(f"unknown system {system!r}")


def model_segmenter(model: IsscModel):
    """Noiseless image -> mask function backed by a trained model."""

    @torch.no_grad()
    def segment(image: np.ndarray) -> np.ndarray:
        batch = torch.from_numpy(
            (image.astype(np.float32) / 255.0)[None]
        )
        probs = model(batch, snr_db=None)
        return argmax_mask(probs)[0]

    return segment


def pick_indices(rng: np.random.Generator, n_total: int, n_pick: int) -> list[int]:
    n_pick = min(n_pick, n_total)
    return [int(i) for i in rng.choice(n_total, size=n_pick, replace=False)]


def evaluate_issc_cell(
    model: IsscModel, dataset, snr_db: float, seed: int, n_images: int
) -> float:
    """mIoU of the semantic system on one sweep cell."""
    rng = np.random.default_rng(seed)
    indices = pick_indices(rng, len(dataset), n_images)
    conf = ConfusionMatrix(model.config.n_cls, model.config.ignore_index)
    images = np.stack([dataset[i][0] for i in indices]).astype(np.float32) / 255.0
    masks = np.stack([dataset[i][1] for i in indices])
    with torch.no_grad():
        probs = model(
            torch.from_numpy(images), snr_db=snr_db, noise_seed=int(rng.integers(2**31))
        )
    conf.accumulate(argmax_mask(probs), masks)
    return conf.miou()


def evaluate_baseline_cell(
    dataset,
    segmenter,
    codec: str,
    modulation_order: int,
    snr_db: float,
    seed: int,
    code: LdpcCode,
    target_ratio: float,
    n_images: int,
    n_cls: int,
    ignore_index: int = 255,
):
    """mIoU of the classical chain on one cell; returns (miou, frame logs)."""
    rng = np.random.default_rng(seed)
    indices = pick_indices(rng, len(dataset), n_images)
    const = make_constellation(modulation_order)
    conf = ConfusionMatrix(n_cls, ignore_index)
    frames = []
    measured_ratios = []
    for frame_no, i in enumerate(indices):
        image, gt = dataset[i]
        frame_seed = int(rng.integers(2**31))
        result, record = baseline_transmit(
            image,
            codec,
            modulation_order,
            snr_db,
            frame_seed,
            code,
            target_ratio=target_ratio,
            constellation=const,
        )
        baseline_segment(result, segmenter, gt, conf)
        measured_ratios.append(record.source_ratio)
        frames.append(
            {
                "frame": frame_no,
                "seed": frame_seed,
                "symbols": record.n_symbols,
                "residual_bit_errors": record.residual_bit_errors,
                "decode_ok": record.decode_ok,
            }
        )
    return conf.miou(), float(np.mean(measured_ratios)), frames


@dataclass
class SweepContext:
    """Everything a worker needs to evaluate cells."""

    dataset: object
    model: IsscModel | None = None
    segmenter_model: IsscModel | None = None
    ratio_models: dict = field(default_factory=dict)   # ratio -> IsscModel
    code: LdpcCode | None = None

    def ensure_code(self) -> LdpcCode:
        if self.code is None:
            self.code = load_default_code()
        return self.code


def _evaluate_cell(ctx: SweepContext, spec: SweepSpec, system: str, value: float, repeat: int):
    seed = cell_seed(spec.master_seed, f"{system}|{spec.axis}", value, repeat)
    if spec.axis == "snr_db":
        snr_db, ratio = value, spec.target_ratio
    else:
        ratio = value
        snr_db = spec.issc_snr_db if system == "issc" else spec.baseline_snr_db

    if system == "issc":
        if spec.axis == "compression_ratio":
            model = ctx.ratio_models.get(value)
            if model is None:
                raise ConfigError(f"no model registered for compression ratio {value}")
        else:
            model = ctx.model
        miou = evaluate_issc_cell(model, ctx.dataset, snr_db, seed, spec.images_per_cell)
        record = ExperimentRecord(
            system="issc",
            codec="none",
            modulation="none",
            snr_db=snr_db,
            ratio=compression_ratio(model.config),
            seed=seed,
            miou=miou,
        )
        return record, []

    codec = system.split("_", 1)[1]
    segmenter = model_segmenter(ctx.segmenter_model)
    n_cls = ctx.segmenter_model.config.n_cls
    miou, measured_ratio, frames = evaluate_baseline_cell(
        ctx.dataset,
        segmenter,
        codec,
        spec.modulation_order,
        snr_db,
        seed,
        ctx.ensure_code(),
        ratio,
        spec.baseline_images_per_cell,
        n_cls,
        ctx.segmenter_model.config.ignore_index,
    )
    record = ExperimentRecord(
        system="baseline",
        codec=codec,
        modulation=_MODULATION_NAME[spec.modulation_order],
        snr_db=snr_db,
        ratio=measured_ratio if codec == "png" else ratio,
        seed=seed,
        miou=miou,
    )
    return record, frames


_WORKER_STATE: dict = {}


def _worker_init(checkpoint_paths: dict, dataset):
    ctx = SweepContext(dataset=dataset)
    if "model" in checkpoint_paths:
        ctx.model, _ = load_checkpoint(checkpoint_paths["model"])
    if "segmenter" in checkpoint_paths:
        ctx.segmenter_model, _ = load_checkpoint(checkpoint_paths["segmenter"])
    for ratio, path in checkpoint_paths.get("ratios", {}).items():
        ctx.ratio_models[ratio], _ = load_checkpoint(path)
    _WORKER_STATE["ctx"] = ctx


def _worker_cell(args):
    spec, system, value, repeat = args
    torch.set_num_threads(1)
    record, frames = _evaluate_cell(_WORKER_STATE["ctx"], spec, system, value, repeat)
    return record, frames, system, value, repeat


def run_sweep(
    spec: SweepSpec,
    ctx: SweepContext,
    records_path: str,
    transmit_log_path: str | None = None,
    workers: int = 1,
    checkpoint_paths: dict | None = None,
    log_fn=None,
) -> list[ExperimentRecord]:
    """Evaluate every (system, value, repeat) cell and append the rows."""
    cells = [
        (system, value, repeat)
        for system in spec.systems
        for value in spec.values
        for repeat in range(spec.repeats)
    ]
    results = []
    if workers > 1:
        if checkpoint_paths is None:
            raise ConfigError("worker pools need checkpoint paths to rebuild models")
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_worker_init,
            initargs=(checkpoint_paths, ctx.dataset),
        ) as pool:
            args = [(spec, s, v, r) for s, v, r in cells]
            for record, frames, system, value, repeat in pool.map(_worker_cell, args):
                results.append((record, frames, system, value, repeat))
                if log_fn:
                    log_fn(f"{system} {spec.axis}={value:g} repeat={repeat}: miou={record.miou:.4f}")
    else:
        for system, value, repeat in cells:
            record, frames = _evaluate_cell(ctx, spec, system, value, repeat)
            results.append((record, frames, system, value, repeat))
            if log_fn:
                log_fn(f"{system} {spec.axis}={value:g} repeat={repeat}: miou={record.miou:.4f}")

    records = []
    new_file = not os.path.exists(records_path)
    with open(records_path, "a") as f:
        if new_file:
            f.write(RECORD_HEADER + "\n")
        for record, frames, system, value, repeat in results:
            f.write(record.to_csv_row() + "\n")
            records.append(record)
    if transmit_log_path:
        new_log = not os.path.exists(transmit_log_path)
        with open(transmit_log_path, "a") as f:
            if new_log:
                f.write(TRANSMIT_LOG_HEADER + "\n")
            for record, frames, system, value, repeat in results:
                for fr in frames:
                    f.write(
                        f"{record.system},{record.codec},{record.modulation},"
                        f"{record.snr_db:g},{record.ratio:g},{fr['seed']},{fr['frame']},"
                        f"{fr['symbols']},{fr['residual_bit_errors']},{int(fr['decode_ok'])}\n"
                    )
    return records


def read_records(path: str) -> list[ExperimentRecord]:
    records = []
    with open(path) as f:
        header = f.readline().strip()
        if header != RECORD_HEADER:
            raise ConfigError(f"{path} does not look like a records CSV")
        for line in f:
            if line.strip():
                records.append(ExperimentRecord.from_csv_row(line))
    return records


def series_from_records(records: list[ExperimentRecord], axis: str):
    """Group records into {series label: (axis values, mean mIoU)} for plotting."""
    groups: dict[str, dict[float, list[float]]] = {}
    for r in records:
        if r.system == "issc":
            label = "issc"
        else:
            label = f"{r.codec}+{r.modulation}"
        x = r.snr_db if axis == "snr_db" else r.ratio
        groups.setdefault(label, {}).setdefault(x, []).append(r.miou)
    series = {}
    for label, by_x in groups.items():
        xs = sorted(by_x)
        ys = [float(np.mean(by_x[x])) for x in xs]
        series[label] = (xs, ys)
    return series


def plot_records(records_path: str, out_path: str, axis: str) -> dict:
    """Line plot of mean mIoU vs the sweep axis, one series per system.

    A pure function of the CSV: replotting from the same file yields the same
    series values (returned for testing).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = read_records(records_path)
    series = series_from_records(records, axis)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, (xs, ys) in sorted(series.items()):
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel("SNR (dB)" if axis == "snr_db" else "compression ratio")
    ax.set_ylabel("mIoU")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return series


def verify_record(
    record: ExperimentRecord,
    spec: SweepSpec,
    ctx: SweepContext,
) -> tuple[bool, float]:
    """Re-run one CSV row from the seed schedule and compare the mIoU."""
    for system in spec.systems:
        for value in spec.values:
            for repeat in range(spec.repeats):
                seed = cell_seed(spec.master_seed, f"{system}|{spec.axis}", value, repeat)
                if seed == record.seed:
                    fresh, _ = _evaluate_cell(ctx, spec, system, value, repeat)
                    return abs(fresh.miou - record.miou) < 1e-9, fresh.miou
    raise ConfigError("record does not belong to this sweep's seed schedule")


def cliff_gallery(
    model: IsscModel,
    dataset,
    image_index: int,
    snr_list,
    codec: str,
    modulation_order: int,
    code: LdpcCode,
    out_dir: str,
    target_ratio: float = 3.0,
    master_seed: int = 0,
) -> list[dict]:
    """One panel per SNR: baseline reconstruction (or failure placard), the
    baseline mask and the semantic system's mask for one fixed image."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    image, gt = dataset[image_index]
    segmenter = model_segmenter(model)
    entries = []
    for snr_db in snr_list:
        seed = cell_seed(master_seed, f"gallery|{codec}", snr_db, image_index)
        result, record = baseline_transmit(
            image, codec, modulation_order, snr_db, seed, code, target_ratio=target_ratio
        )
        failed = isinstance(result, DecodeFailure)
        issc_probs = model(
            torch.from_numpy((image.astype(np.float32) / 255.0)[None]),
            snr_db=snr_db,
            noise_seed=seed,
        )
        issc_mask = argmax_mask(issc_probs)[0]

        fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
        axes[0].imshow(image)
        axes[0].set_title("source")
        if failed:
            axes[1].text(
                0.5, 0.5, "DECODE\nFAILURE", ha="center", va="center",
                fontsize=16, color="red", transform=axes[1].transAxes,
            )
            axes[1].set_title(f"baseline image ({codec})")
        else:
            axes[1].imshow(result)
            axes[1].set_title(f"baseline image ({codec})")
        if failed:
            axes[2].text(
                0.5, 0.5, "no mask", ha="center", va="center",
                transform=axes[2].transAxes,
            )
        else:
            axes[2].imshow(segmenter(result), vmin=0, vmax=model.config.n_cls - 1)
        axes[2].set_title("baseline mask")
        axes[3].imshow(issc_mask, vmin=0, vmax=model.config.n_cls - 1)
        axes[3].set_title("semantic mask")
        for ax in axes:
            ax.set_xticks([])
            ax.set_yticks([])
        fig.suptitle(
            f"{snr_db:g} dB - residual bit errors: {record.residual_bit_errors}"
        )
        fig.tight_layout()
        panel_path = os.path.join(out_dir, f"cliff_{snr_db:g}dB.png")
        fig.savefig(panel_path, dpi=110)
        plt.close(fig)

        entry = {
            "snr_db": float(snr_db),
            "panel": panel_path,
            "residual_bit_errors": record.residual_bit_errors,
            "decode_failure": failed,
            "symbols": record.n_symbols,
        }
        entries.append(entry)
    with open(os.path.join(out_dir, "gallery.json"), "w") as f:
        json.dump(entries, f, indent=2)
    return entries
