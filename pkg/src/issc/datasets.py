"""Dataset ingestion: a procedurally generated traffic-toy dataset with exact
ground truth, plus a Cityscapes-style directory-layout loader.

Images are stored as uint8 RGB in [0, 255]; normalization to [0, 1] happens
at model input. Masks are uint8 class indices with 255 reserved for ignore.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

IGNORE_INDEX = 255

# Class layout of the synthetic scenes.
BACKGROUND, ROAD, VEHICLE, PEDESTRIAN, OBSTACLE = 0, 1, 2, 3, 4

# Cityscapes label ids -> 19 train ids (everything else is ignore).
CITYSCAPES_ID_TO_TRAIN = {
    7: 0, 8: 1, 11: 2, 12: 3, 13: 4, 17: 5, 19: 6, 20: 7, 21: 8, 22: 9,
    23: 10, 24: 11, 25: 12, 26: 13, 27: 14, 28: 15, 31: 16, 32: 17, 33: 18,
}


@dataclass
class SceneDataset:
    images: np.ndarray          # (N, H, W, 3) uint8
    masks: np.ndarray           # (N, H, W) uint8
    n_cls: int
    ignore_index: int = IGNORE_INDEX
    scene_params: list | None = None   # synthetic only: shape lists per image

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int):
        return self.images[i], self.masks[i]


def _paint_shape(mask: np.ndarray, shape: tuple) -> np.ndarray:
    """Boolean footprint of one shape spec on the mask grid."""
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    kind = shape[0]
    if kind == "band":
        _, y0, y1 = shape[:3]
        return (yy >= y0) & (yy < y1)
    if kind == "rect":
        _, x0, x1, y0, y1 = shape[:5]
        return (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
    if kind == "ellipse":
        _, cx, cy, rx, ry = shape[:5]
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    if kind == "tri":
        _, cx, y0, height, halfw = shape[:5]
        rel = (yy - y0) / height
        return (rel >= 0) & (rel <= 1) & (np.abs(xx - cx) <= rel * halfw)
    raise ValueError(f"unknown shape kind {kind!r}")


def rasterize_mask(shapes: list, height: int, width: int) -> np.ndarray:
    """Exact mask from a shape list; later shapes overwrite earlier ones."""
    mask = np.zeros((height, width), dtype=np.uint8)
    for cls, shape in shapes:
        mask[_paint_shape(mask, shape)] = cls
    return mask


def _sample_scene(rng: np.random.Generator, h: int, w: int, density: float):
    """Shape list and per-shape colors for one scene."""
    shapes = []
    colors = []

    def color(low, high):
        return rng.uniform(low, high)

    if density > 0 and rng.random() < min(1.0, density):
        band_h = int(rng.uniform(0.18, 0.30) * h)
        y0 = int(rng.uniform(0.40, 0.75) * h)
        shapes.append((ROAD, ("band", y0, min(h, y0 + band_h))))
        colors.append(np.array([color(0.22, 0.34)] * 3) + rng.uniform(-0.02, 0.02, 3))

    n_veh = min(4, rng.poisson(1.7 * density))
    for _ in range(n_veh):
        vw = int(rng.uniform(0.22, 0.40) * w)
        vh = int(rng.uniform(0.14, 0.26) * h)
        x0 = int(rng.uniform(0, max(1, w - vw)))
        y0 = int(rng.uniform(0.30 * h, max(0.30 * h + 1, h - vh)))
        shapes.append((VEHICLE, ("rect", x0, x0 + vw, y0, y0 + vh)))
        base = rng.choice(3)
        c = np.full(3, 0.15) + rng.uniform(0.0, 0.1, 3)
        c[base] = rng.uniform(0.65, 0.9)
        colors.append(c)

    n_ped = min(4, rng.poisson(1.3 * density))
    for _ in range(n_ped):
        rx = rng.uniform(0.045, 0.075) * w
        ry = rng.uniform(0.10, 0.17) * h
        cx = rng.uniform(rx, w - rx)
        cy = rng.uniform(0.3 * h, h - ry)
        shapes.append((PEDESTRIAN, ("ellipse", cx, cy, rx, ry)))
        colors.append(np.array([color(0.8, 1.0), color(0.5, 0.7), color(0.05, 0.2)]))

    n_obs = min(3, rng.poisson(1.0 * density))
    for _ in range(n_obs):
        halfw = rng.uniform(0.07, 0.13) * w
        th = rng.uniform(0.12, 0.22) * h
        cx = rng.uniform(halfw, w - halfw)
        y0 = rng.uniform(0.25 * h, h - th)
        shapes.append((OBSTACLE, ("tri", cx, y0, th, halfw)))
        colors.append(np.array([color(0.05, 0.25), color(0.6, 0.85), color(0.05, 0.25)]))

    return shapes, colors


def render_scene(shapes, colors, rng, h, w, texture: float):
    """Paint shapes over a textured background; returns uint8 RGB."""
    base = rng.uniform(0.55, 0.80, 3)
    image = np.ones((h, w, 3), dtype=np.float64) * base
    mask = np.zeros((h, w), dtype=np.uint8)
    for (cls, shape), col in zip(shapes, colors):
        footprint = _paint_shape(mask, shape)
        image[footprint] = col
        mask[footprint] = cls
    if texture > 0:
        image = image + rng.normal(0.0, texture, (h, w, 3))
    image = np.clip(image, 0.0, 1.0)
    return (image * 255.0 + 0.5).astype(np.uint8), mask


def generate_synthetic(
    n_images: int,
    height: int = 64,
    width: int = 64,
    n_cls: int = 5,
    density: float = 1.0,
    texture: float = 0.06,
    seed: int = 1234,
) -> SceneDataset:
    """Deterministic toy scenes: road band, vehicles, pedestrians, obstacles."""
    if n_cls < 2:
        raise ValueError("n_cls must be >= 2")
    if height % 32 != 0 or width % 32 != 0:
        raise ValueError(f"scene dims {height}x{width} must be multiples of 32")
    images = np.zeros((n_images, height, width, 3), dtype=np.uint8)
    masks = np.zeros((n_images, height, width), dtype=np.uint8)
    params = []
    for i in range(n_images):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        shapes, colors = _sample_scene(rng, height, width, density)
        shapes = [(c, s) for c, s in shapes if c < n_cls]
        images[i], masks[i] = render_scene(shapes, colors, rng, height, width, texture)
        params.append(shapes)
    return SceneDataset(images=images, masks=masks, n_cls=n_cls, scene_params=params)


def normalize_images(images: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float32 [0, 1]."""
    if images.dtype != np.uint8:
        images = np.asarray(images)
        if images.max(initial=0.0) > 1.0:
            return (images / 255.0).astype(np.float32)
        return images.astype(np.float32)
    return (images.astype(np.float32)) / 255.0


def batcher(dataset, batch_size: int, seed: int = 0, train: bool = True, augment_fn=None):
    """One epoch of batches with deterministic shuffling.

    Training drops the last partial batch and requires batch_size <= len;
    evaluation keeps order and yields the final truncated batch.
    """
    n = len(dataset)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if train and batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    if train:
        order = np.random.default_rng(seed).permutation(n)
        stop = (n // batch_size) * batch_size
    else:
        order = np.arange(n)
        stop = n
    for start in range(0, stop, batch_size):
        idx = order[start : start + batch_size]
        images = []
        masks = []
        for j, i in enumerate(idx):
            img, msk = dataset[int(i)]
            img = normalize_images(img)
            if augment_fn is not None:
                img, msk = augment_fn(img, msk, int(seed) * 100003 + start + j)
            images.append(img)
            masks.append(msk)
        yield np.stack(images), np.stack(masks).astype(np.int64)


def materialize(dataset: SceneDataset, root: str, split: str) -> None:
    """Write the dataset in the directory layout the loader reads back."""
    img_dir = os.path.join(root, split, "images")
    lbl_dir = os.path.join(root, split, "labels")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lbl_dir, exist_ok=True)
    for i in range(len(dataset)):
        stem = f"scene_{i:05d}"
        Image.fromarray(dataset.images[i]).save(os.path.join(img_dir, stem + ".png"))
        Image.fromarray(dataset.masks[i]).save(os.path.join(lbl_dir, stem + ".png"))


def scan_layout(root: str, split: str):
    """Pair image and label files by stem; unmatched files land in the skip report."""
    img_dir = os.path.join(root, split, "images")
    lbl_dir = os.path.join(root, split, "labels")
    skip = []
    if not os.path.isdir(img_dir):
        return [], [f"missing image directory: {img_dir}"]
    labels = {}
    if os.path.isdir(lbl_dir):
        for name in sorted(os.listdir(lbl_dir)):
            labels[os.path.splitext(name)[0]] = os.path.join(lbl_dir, name)
    pairs = []
    for name in sorted(os.listdir(img_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        if stem not in labels:
            skip.append(f"no label for image {name}")
            continue
        pairs.append((os.path.join(img_dir, name), labels[stem]))
    return pairs, skip


def load_cityscapes_layout(root: str, split: str, remap: bool = True):
    """Yield (image uint8 HxWx3, mask uint8 HxW) pairs from a directory layout.

    Returns (iterator, skip_report). With ``remap`` the label files are read
    as Cityscapes label ids and remapped to the 19 train classes; unlabeled
    ids become the ignore index. Pairs with mismatched dimensions are skipped
    and reported, not raised.
    """
    pairs, skip = scan_layout(root, split)

    lut = np.full(256, IGNORE_INDEX, dtype=np.uint8)
    for label_id, train_id in CITYSCAPES_ID_TO_TRAIN.items():
        lut[label_id] = train_id

    def iterate():
        for img_path, lbl_path in pairs:
            image = np.asarray(Image.open(img_path).convert("RGB"))
            mask = np.asarray(Image.open(lbl_path))
            if mask.ndim == 3:
                mask = mask[..., 0]
            if image.shape[:2] != mask.shape[:2]:
                skip.append(
                    f"dimension mismatch {os.path.basename(img_path)}: "
                    f"{image.shape[:2]} vs {mask.shape[:2]}"
                )
                continue
            if remap:
                mask = lut[mask]
            yield image, mask.astype(np.uint8)

    return iterate(), skip


def load_layout_dataset(root: str, split: str, n_cls: int, remap: bool = True) -> SceneDataset:
    """Eagerly load a (desk-scale) layout dataset into memory."""
    it, skip = load_cityscapes_layout(root, split, remap=remap)
    images, masks = [], []
    for image, mask in it:
        images.append(image)
        masks.append(mask)
    if not images:
        raise ValueError(f"no usable image/label pairs under {root}/{split} (skips: {skip})")
    return SceneDataset(
        images=np.stack(images), masks=np.stack(masks), n_cls=n_cls
    )
