"""End-to-end optimization under randomized channel SNR: cross-entropy loss
with online hard example mining, augmentation, Adam with warmup + linear
decay, CSV history, periodic checkpoints."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import ModelConfig, TrainConfig
from .datasets import batcher
from .decoder import IsscModel, argmax_mask
from .metrics import ConfusionMatrix

PROB_FLOOR = 1e-12


def pixel_ce(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood of the true class for one pixel.

    ``p`` is a probability vector over classes, ``y`` one-hot (all-zero rows
    mean ignore and contribute 0). The batch-level minus sign is folded in
    here so reported losses are nonnegative.
    """
    p_true = (p * y).sum()
    if y.sum() == 0:
        return torch.zeros((), dtype=p.dtype)
    return -torch.log(torch.clamp(p_true, min=PROB_FLOOR))


def true_class_probs(probs: torch.Tensor, labels: torch.Tensor, ignore_index: int):
    """Per-pixel probability assigned to the true class; (values, valid mask)."""
    if probs.shape[:-1] != labels.shape:
        raise ValueError(
            f"probability shape {tuple(probs.shape)} does not match labels "
            f"{tuple(labels.shape)}"
        )
    valid = labels != ignore_index
    safe_labels = torch.where(valid, labels, torch.zeros_like(labels))
    p_true = probs.gather(-1, safe_labels.unsqueeze(-1)).squeeze(-1)
    return p_true, valid


def ohem_filter(
    probs: torch.Tensor,
    labels: torch.Tensor,
    threshold: float = 0.7,
    min_kept: int = 1,
    ignore_index: int = 255,
) -> torch.Tensor:
    """Boolean pixel selection: every non-ignored pixel whose true-class
    confidence is below the threshold; if fewer than ``min_kept`` qualify,
    the ``min_kept`` lowest-confidence pixels are kept instead."""
    if min_kept < 1:
        raise ValueError("min_kept must be >= 1")
    p_true, valid = true_class_probs(probs, labels, ignore_index)
    hard = (p_true < threshold) & valid
    n_valid = int(valid.sum())
    if n_valid == 0:
        return hard
    kept = min(min_kept, n_valid)
    if int(hard.sum()) >= kept:
        return hard
    flat = torch.where(valid, p_true, torch.full_like(p_true, math.inf)).reshape(-1)
    order = torch.argsort(flat.detach(), stable=True)
    selection = torch.zeros_like(flat, dtype=torch.bool)
    selection[order[:kept]] = True
    return selection.view(labels.shape)


def batch_loss(
    probs: torch.Tensor,
    labels: torch.Tensor,
    selection: torch.Tensor | None = None,
    ignore_index: int = 255,
) -> torch.Tensor:
    """Mean per-pixel cross entropy over the selected (or all valid) pixels."""
    p_true, valid = true_class_probs(probs, labels, ignore_index)
    selected = valid if selection is None else (selection & valid)
    n = int(selected.sum())
    if n == 0:
        raise ValueError("no pixels selected for the loss")
    losses = -torch.log(torch.clamp(p_true, min=PROB_FLOOR))
    return losses[selected].mean()


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    seed: int,
    crop_size: tuple[int, int] | None = None,
    brightness: float = 32.0 / 255.0,
    contrast: tuple[float, float] = (0.5, 1.5),
    saturation: tuple[float, float] = (0.5, 1.5),
):
    """Random crop + horizontal flip (applied to image and mask alike) and
    photometric jitter (image only). Deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    h, w = image.shape[:2]
    if crop_size is not None:
        ch, cw = crop_size
        if ch > h or cw > w:
            raise ValueError(f"crop {crop_size} larger than image {(h, w)}")
        y0 = int(rng.integers(0, h - ch + 1))
        x0 = int(rng.integers(0, w - cw + 1))
        image = image[y0 : y0 + ch, x0 : x0 + cw]
        mask = mask[y0 : y0 + ch, x0 : x0 + cw]
    if rng.random() < 0.5:
        image = image[:, ::-1]
        mask = mask[:, ::-1]
    image = image.astype(np.float32)
    image = image + rng.uniform(-brightness, brightness)
    image = image * rng.uniform(*contrast)
    gray = image.mean(axis=-1, keepdims=True)
    image = gray + (image - gray) * rng.uniform(*saturation)
    image = np.clip(image, 0.0, 1.0)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def lr_at_step(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear warmup into linear (power-1 polynomial) decay to zero."""
    warmup = max(1, int(warmup_fraction * total_steps))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    if total_steps <= warmup:
        return base_lr
    remaining = 1.0 - (step - warmup) / (total_steps - warmup)
    return base_lr * max(0.0, remaining)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)        # dicts: step, loss, snr_db, lr
    eval_history: list = field(default_factory=list)   # dicts: step, miou
    checkpoint_path: str | None = None


@torch.no_grad()
def evaluate_miou(
    model: IsscModel,
    dataset,
    snr_db: float | None,
    noise_seed: int = 0,
    max_images: int | None = None,
    batch_size: int = 8,
    image_indices=None,
) -> float:
    """Dataset-level mIoU of the model at one SNR."""
    model.eval()
    conf = ConfusionMatrix(model.config.n_cls, model.config.ignore_index)
    if image_indices is None:
        n = len(dataset) if max_images is None else min(max_images, len(dataset))
        image_indices = range(n)
    image_indices = list(image_indices)
    for start in range(0, len(image_indices), batch_size):
        chunk = image_indices[start : start + batch_size]
        images = np.stack([dataset[i][0] for i in chunk]).astype(np.float32) / 255.0
        masks = np.stack([dataset[i][1] for i in chunk])
        probs = model(
            torch.from_numpy(images), snr_db=snr_db, noise_seed=noise_seed + start
        )
        conf.accumulate(argmax_mask(probs), masks)
    return conf.miou()


def train(
    model: IsscModel,
    train_dataset,
    config: TrainConfig,
    out_dir: str | None = None,
    eval_dataset=None,
    eval_snr_db: float = 10.0,
    log_fn=None,
) -> TrainResult:
    """Run the optimization loop; returns history and writes CSVs/checkpoints
    when ``out_dir`` is given.

    Each step: sample a batch (augmented), draw one SNR uniformly from the
    configured range, run the full transceiver with that channel, apply the
    OHEM-filtered loss, and take one Adam step.
    """
    torch.manual_seed(config.seed)
    ss = np.random.SeedSequence(config.seed)
    snr_rng = np.random.default_rng(ss.spawn(1)[0])
    noise_rng = np.random.default_rng(ss.spawn(1)[0])

    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.lr,
        betas=config.betas,
        weight_decay=config.weight_decay,
    )
    result = TrainResult()
    history_f = eval_f = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        history_f = open(os.path.join(out_dir, "history.csv"), "w")
        history_f.write("step,loss,snr_db,lr\n")
        eval_f = open(os.path.join(out_dir, "eval.csv"), "w")
        eval_f.write("step,miou\n")

    def aug(image, mask, seed):
        crop = config.crop_size if config.crop_size != image.shape[:2] else None
        return augment(image, mask, seed, crop_size=crop)

    def batches():
        epoch = 0
        while True:
            for batch in batcher(
                train_dataset,
                config.batch_size,
                seed=config.seed + 7919 * epoch,
                train=True,
                augment_fn=aug,
            ):
                yield batch
            epoch += 1

    def run_eval(step):
        if eval_dataset is None:
            return
        miou = evaluate_miou(
            model,
            eval_dataset,
            snr_db=eval_snr_db,
            noise_seed=config.seed + step,
            max_images=config.eval_images,
        )
        model.train()
        result.eval_history.append({"step": step, "miou": miou})
        if eval_f:
            eval_f.write(f"{step},{miou:.6f}\n")
            eval_f.flush()
        if log_fn:
            log_fn(f"step {step}: miou@{eval_snr_db:g}dB = {miou:.4f}")

    model.train()
    stream = batches()
    try:
        for step in range(config.steps):
            images, labels = next(stream)
            snr_db = float(snr_rng.uniform(config.snr_low_db, config.snr_high_db))
            noise_seed = int(noise_rng.integers(0, 2**31 - 1))
            lr = lr_at_step(step, config.steps, config.lr, config.warmup_fraction)
            for group in optimizer.param_groups:
                group["lr"] = lr

            probs = model(torch.from_numpy(images), snr_db=snr_db, noise_seed=noise_seed)
            labels_t = torch.from_numpy(labels)
            selection = None
            if config.ohem:
                valid = (labels_t != model.config.ignore_index).sum()
                min_kept = max(1, int(config.ohem_min_kept_fraction * int(valid)))
                selection = ohem_filter(
                    probs.detach(),
                    labels_t,
                    threshold=config.ohem_threshold,
                    min_kept=min_kept,
                    ignore_index=model.config.ignore_index,
                )
            loss = batch_loss(
                probs, labels_t, selection=selection, ignore_index=model.config.ignore_index
            )
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at step {step} (snr_db={snr_db:.2f}); aborting"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            row = {"step": step, "loss": float(loss.detach()), "snr_db": snr_db, "lr": lr}
            result.history.append(row)
            if history_f:
                history_f.write(f"{step},{row['loss']:.6f},{snr_db:.4f},{lr:.8g}\n")
            if log_fn and (step % 100 == 0 or step == config.steps - 1):
                log_fn(f"step {step}: loss {row['loss']:.4f} (snr {snr_db:.1f} dB, lr {lr:.2e})")
            if config.eval_every and (step + 1) % config.eval_every == 0:
                run_eval(step + 1)
            if (
                out_dir
                and config.checkpoint_every
                and (step + 1) % config.checkpoint_every == 0
            ):
                save_checkpoint(model, os.path.join(out_dir, f"checkpoint_{step + 1}.npz"))
    finally:
        if history_f:
            history_f.close()
        if eval_f:
            eval_f.close()

    model.eval()
    if out_dir is not None:
        path = os.path.join(out_dir, "checkpoint.npz")
        save_checkpoint(model, path, extra={"steps": config.steps, "seed": config.seed})
        result.checkpoint_path = path
    return result


def majority_class_miou(dataset, n_cls: int, ignore_index: int = 255) -> float:
    """mIoU of the constant predictor that always emits the most frequent class."""
    counts = np.zeros(n_cls, dtype=np.int64)
    for i in range(len(dataset)):
        _, mask = dataset[i]
        valid = mask != ignore_index
        counts += np.bincount(mask[valid].astype(np.int64), minlength=n_cls)
    majority = int(counts.argmax())
    conf = ConfusionMatrix(n_cls, ignore_index)
    for i in range(len(dataset)):
        _, mask = dataset[i]
        conf.accumulate(np.full_like(mask, majority, dtype=np.int64), mask)
    return conf.miou()
