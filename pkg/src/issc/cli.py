"""Command-line front door: train models, evaluate, run sweeps, render the
cliff gallery, generate data, verify recorded rows.

Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np
import torch

from .baseline.ldpc import load_default_code
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, DataConfig, ExperimentConfig, load_config
from .datasets import SceneDataset, generate_synthetic, load_layout_dataset, materialize
from .decoder import build_model
from .experiments import (
    SweepContext,
    SweepSpec,
    cliff_gallery,
    plot_records,
    read_records,
    run_sweep,
    verify_record,
)
from .metrics import ConfusionMatrix
from .training import evaluate_miou, train

TEST_SEED_OFFSET = 500009


def build_dataset(data: DataConfig, split: str) -> SceneDataset:
    if data.kind == "synthetic":
        seed = data.seed if split == "train" else data.seed + TEST_SEED_OFFSET
        n = data.n_train if split == "train" else data.n_test
        return generate_synthetic(
            n,
            height=data.height,
            width=data.width,
            n_cls=data.n_cls,
            density=data.density,
            texture=data.texture,
            seed=seed,
        )
    return load_layout_dataset(data.root, split, n_cls=data.n_cls)


def _require_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config PATH is required for this command")
    return load_config(args.config)


def cmd_train(args) -> int:
    cfg = _require_config(args)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if args.steps is not None:
        train_cfg = dataclasses.replace(train_cfg, steps=args.steps)
    out_dir = args.out or "out"
    train_ds = build_dataset(cfg.data, "train")
    test_ds = build_dataset(cfg.data, "test")
    model = build_model(cfg.model, seed=train_cfg.seed)
    print(
        f"training {model.parameter_count()} parameters for {train_cfg.steps} steps "
        f"(out: {out_dir})"
    )
    result = train(
        model,
        train_ds,
        train_cfg,
        out_dir=out_dir,
        eval_dataset=test_ds,
        log_fn=print,
    )
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    cfg = _require_config(args)
    if cfg.data.n_cls != model.config.n_cls:
        raise ConfigError(
            f"dataset has {cfg.data.n_cls} classes but checkpoint expects "
            f"{model.config.n_cls}"
        )
    dataset = build_dataset(cfg.data, args.split)
    snr_db = None if args.snr_db is None else args.snr_db
    conf = ConfusionMatrix(model.config.n_cls, model.config.ignore_index)
    from .decoder import argmax_mask

    indices = list(range(len(dataset) if args.images is None else min(args.images, len(dataset))))
    for start in range(0, len(indices), 8):
        chunk = indices[start : start + 8]
        images = np.stack([dataset[i][0] for i in chunk]).astype(np.float32) / 255.0
        masks = np.stack([dataset[i][1] for i in chunk])
        with torch.no_grad():
            probs = model(
                torch.from_numpy(images),
                snr_db=snr_db,
                noise_seed=(args.seed or 0) + start,
            )
        conf.accumulate(argmax_mask(probs), masks)
    rows = conf.report_rows()
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "eval_report.csv")
    with open(report_path, "w") as f:
        f.write("\n".join(rows) + "\n")
    print(rows[-1])
    print(f"report: {report_path}")
    return 0


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"could not parse values list {text!r}")


def cmd_sweep(args) -> int:
    spec = SweepSpec(
        axis=args.axis,
        values=_parse_values(args.values),
        systems=args.systems.split(","),
        repeats=args.repeats,
        master_seed=args.seed or 0,
        modulation_order=args.modulation,
        images_per_cell=args.images_per_cell,
        baseline_images_per_cell=args.baseline_images_per_cell,
        target_ratio=args.ratio,
        baseline_snr_db=args.baseline_snr_db,
        issc_snr_db=args.issc_snr_db,
    )
    cfg = _require_config(args)
    dataset = build_dataset(cfg.data, args.split)
    ctx = SweepContext(dataset=dataset)
    checkpoint_paths = {}
    if "issc" in spec.systems:
        if spec.axis == "compression_ratio":
            if not args.ratio_checkpoints:
                raise ConfigError(
                    "--ratio-checkpoints RATIO=PATH[,RATIO=PATH...] is required for "
                    "compression-ratio sweeps of the semantic system"
                )
            mapping = {}
            for part in args.ratio_checkpoints.split(","):
                ratio_str, _, path = part.partition("=")
                if not path:
                    raise ConfigError(f"malformed ratio checkpoint entry {part!r}")
                mapping[float(ratio_str)] = path
            for ratio, path in mapping.items():
                ctx.ratio_models[ratio], _ = load_checkpoint(path)
            checkpoint_paths["ratios"] = mapping
        else:
            if not args.checkpoint:
                raise ConfigError("--checkpoint is required to sweep the semantic system")
            ctx.model, _ = load_checkpoint(args.checkpoint)
            checkpoint_paths["model"] = args.checkpoint
    if any(s.startswith("baseline") for s in spec.systems):
        seg_path = args.segmenter or args.checkpoint
        if not seg_path:
            raise ConfigError("baseline sweeps need --segmenter (or --checkpoint)")
        ctx.segmenter_model, _ = load_checkpoint(seg_path)
        checkpoint_paths["segmenter"] = seg_path

    out_dir = args.out or "out"
    os.makedirs(out_dir, exist_ok=True)
    records_path = os.path.join(out_dir, "records.csv")
    transmit_log = os.path.join(out_dir, "transmit_log.csv")
    run_sweep(
        spec,
        ctx,
        records_path,
        transmit_log_path=transmit_log,
        workers=args.workers,
        checkpoint_paths=checkpoint_paths,
        log_fn=print,
    )
    plot_path = os.path.join(out_dir, f"sweep_{spec.axis}.png")
    plot_records(records_path, plot_path, spec.axis)
    print(f"records: {records_path}")
    print(f"plot: {plot_path}")
    return 0


def cmd_cliff_gallery(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    cfg = _require_config(args)
    dataset = build_dataset(cfg.data, args.split)
    entries = cliff_gallery(
        model,
        dataset,
        args.image_index,
        _parse_values(args.snrs),
        args.codec,
        args.modulation,
        load_default_code(),
        args.out or "out",
        target_ratio=args.ratio,
        master_seed=args.seed or 0,
    )
    for entry in entries:
        status = "FAILED" if entry["decode_failure"] else "ok"
        print(
            f"{entry['snr_db']:g} dB: {status}, residual bit errors "
            f"{entry['residual_bit_errors']} -> {entry['panel']}"
        )
    return 0


def cmd_gen_data(args) -> int:
    cfg = _require_config(args)
    out_dir = args.out or "data"
    for split in ("train", "test"):
        ds = build_dataset(cfg.data, split)
        materialize(ds, out_dir, split)
        print(f"{split}: {len(ds)} images -> {os.path.join(out_dir, split)}")
    return 0


def cmd_verify_row(args) -> int:
    records = read_records(args.records)
    if not records:
        raise ConfigError(f"no records in {args.records}")
    index = args.row_index if args.row_index is not None else len(records) - 1
    if not (0 <= index < len(records)):
        raise ConfigError(f"row index {index} out of range (0..{len(records) - 1})")
    record = records[index]
    spec = SweepSpec(
        axis=args.axis,
        values=_parse_values(args.values),
        systems=args.systems.split(","),
        repeats=args.repeats,
        master_seed=args.seed or 0,
        modulation_order=args.modulation,
        images_per_cell=args.images_per_cell,
        baseline_images_per_cell=args.baseline_images_per_cell,
        target_ratio=args.ratio,
        baseline_snr_db=args.baseline_snr_db,
        issc_snr_db=args.issc_snr_db,
    )
    cfg = _require_config(args)
    dataset = build_dataset(cfg.data, args.split)
    ctx = SweepContext(dataset=dataset)
    if args.checkpoint:
        ctx.model, _ = load_checkpoint(args.checkpoint)
        ctx.segmenter_model = ctx.model
    if args.segmenter:
        ctx.segmenter_model, _ = load_checkpoint(args.segmenter)
    ok, fresh = verify_record(record, spec, ctx)
    print(f"row {index}: recorded miou={record.miou:.6f} recomputed={fresh:.6f} -> "
          f"{'MATCH' if ok else 'MISMATCH'}")
    return 0 if ok else 1


def _add_sweep_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--axis", choices=("snr_db", "compression_ratio"), default="snr_db")
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--systems", default="issc", help="comma list: issc,baseline_jpeg,baseline_png")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--modulation", type=int, choices=(4, 16, 64), default=16)
    p.add_argument("--images-per-cell", type=int, default=8)
    p.add_argument("--baseline-images-per-cell", type=int, default=1)
    p.add_argument("--ratio", type=float, default=3.0, help="target compression ratio")
    p.add_argument("--baseline-snr-db", type=float, default=30.0)
    p.add_argument("--issc-snr-db", type=float, default=10.0)
    p.add_argument("--checkpoint", help="trained semantic-system checkpoint")
    p.add_argument("--segmenter", help="reference segmenter checkpoint (defaults to --checkpoint)")
    p.add_argument("--split", default="test")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="issc", description="semantic communication experiment harness"
    )
    parser.add_argument("--config", help="YAML config with model/train/data sections")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the semantic transceiver")
    p_train.add_argument("--steps", type=int, help="override configured step count")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint at one SNR")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--snr-db", type=float, default=None,
                        help="channel SNR; omit for a noiseless channel")
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--images", type=int, default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="run an SNR or compression-ratio sweep")
    _add_sweep_args(p_sweep)
    p_sweep.add_argument("--ratio-checkpoints",
                         help="RATIO=PATH[,RATIO=PATH...] for compression-ratio sweeps")
    p_sweep.set_defaults(func=cmd_sweep)

    p_gallery = sub.add_parser("cliff-gallery", help="render per-SNR reconstruction panels")
    p_gallery.add_argument("--checkpoint", required=True)
    p_gallery.add_argument("--snrs", default="18,19,20,21")
    p_gallery.add_argument("--image-index", type=int, default=0)
    p_gallery.add_argument("--codec", choices=("jpeg", "png"), default="jpeg")
    p_gallery.add_argument("--modulation", type=int, choices=(4, 16, 64), default=16)
    p_gallery.add_argument("--ratio", type=float, default=3.0)
    p_gallery.add_argument("--split", default="test")
    p_gallery.set_defaults(func=cmd_cliff_gallery)

    p_gen = sub.add_parser("gen-data", help="materialize the configured dataset to disk")
    p_gen.set_defaults(func=cmd_gen_data)

    p_verify = sub.add_parser("verify-row", help="re-run one records.csv row and compare")
    p_verify.add_argument("--records", required=True)
    p_verify.add_argument("--row-index", type=int, default=None)
    _add_sweep_args(p_verify)
    p_verify.set_defaults(func=cmd_verify_row)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(max(1, os.cpu_count() or 1))
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
