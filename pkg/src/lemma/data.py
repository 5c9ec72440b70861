"""Dataset manifests, PNG image/mask I/O, and a synthetic marine-scene
generator for desk-scale training."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import pyramid
from .errors import ConfigError, DataError, LabelError, ShapeError
from .tensor import Tensor

IGNORE_INDEX = 255

DEFAULT_CLASSES = ["sky", "water", "obstacle", "spill"]
DEFAULT_PALETTE = [
    [135, 206, 235], [0, 60, 130], [200, 60, 40], [40, 40, 40],
    [230, 230, 80], [160, 60, 200], [60, 200, 120], [255, 140, 0],
]


@dataclass(frozen=True)
class SampleRecord:
    image: str
    mask: str
    split: str  # train | val | test


@dataclass
class DatasetManifest:
    name: str
    classes: list[str]
    palette: list[list[int]]
    samples: list[SampleRecord]
    root: str = "."

    @property
    def nc(self) -> int:
        return len(self.classes)

    def split(self, tag: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.split == tag]

    def resolve(self, rel: str) -> str:
        return os.path.join(self.root, rel)


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    payload = {
        "name": manifest.name,
        "classes": manifest.classes,
        "palette": manifest.palette,
        "samples": [{"image": s.image, "mask": s.mask, "split": s.split}
                    for s in manifest.samples],
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def load_manifest(path: str) -> DatasetManifest:
    try:
        with open(path) as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    for key in ("name", "classes", "palette", "samples"):
        if key not in payload:
            raise DataError(f"manifest {path} missing field {key!r}")
    samples = [SampleRecord(s["image"], s["mask"], s["split"])
               for s in payload["samples"]]
    m = DatasetManifest(payload["name"], list(payload["classes"]),
                        [list(p) for p in payload["palette"]], samples,
                        root=os.path.dirname(os.path.abspath(path)))
    if m.nc < 2:
        raise DataError(f"manifest {path} needs >= 2 classes")
    seen = {tuple(p) for p in m.palette}
    if len(seen) != len(m.palette):
        raise DataError(f"manifest {path} has duplicate palette entries")
    return m


# ---------------------------------------------------------------------------
# PNG I/O

def load_image(path: str) -> Tensor:
    """8-bit RGB PNG -> (1, 3, H, W) float tensor scaled to [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    if img.mode != "RGB":
        raise DataError(f"image {path} is mode {img.mode}, expected RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return Tensor(arr.transpose(2, 0, 1)[None])


def save_image(path: str, image: Tensor | np.ndarray) -> None:
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim == 4:
        arr = arr[0]
    arr = np.clip(arr, 0.0, 1.0)
    Image.fromarray((arr.transpose(1, 2, 0) * 255.0).round().astype(np.uint8),
                    mode="RGB").save(path)


def load_mask(path: str, nc: int) -> np.ndarray:
    """8-bit single-channel PNG of class ids -> (H, W) int map."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read mask {path}: {e}") from e
    if img.mode not in ("L", "P"):
        raise DataError(f"mask {path} is mode {img.mode}, expected 8-bit grayscale")
    arr = np.asarray(img.convert("L"), dtype=np.int64)
    bad = (arr >= nc) & (arr != IGNORE_INDEX)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise LabelError(f"mask {path} has class id {int(arr[r, c])} at "
                         f"({int(r)}, {int(c)}) but nc={nc}")
    return arr


def save_mask(path: str, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {mask.shape}")
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def colorize_mask(mask: np.ndarray, palette: list[list[int]]) -> np.ndarray:
    """Class-id map -> (H, W, 3) uint8 image using the palette."""
    lut = np.zeros((256, 3), dtype=np.uint8)
    for i, rgb in enumerate(palette):
        lut[i] = rgb
    return lut[np.asarray(mask)]


# ---------------------------------------------------------------------------
# synthetic scenes

def synth_scene(seed: int, size: int | tuple[int, int], nc: int = 4,
                return_geometry: bool = False):
    """Deterministic synthetic marine scene.

    Sky gradient above a horizon (class 0), textured water below (class 1),
    up to 3 elliptical obstacles near the horizon (class 2) and up to 2
    low-contrast dark blobs on the water (class 3). The mask is the exact
    generator geometry.
    """
    if nc < 2:
        raise ConfigError(f"synth_scene needs nc >= 2, got {nc}")
    h, w = (size, size) if isinstance(size, int) else size
    if h % 4 or w % 4:
        raise ConfigError(f"scene size {h}x{w} must be divisible by 4")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.zeros((3, h, w), dtype=np.float32)
    mask = np.ones((h, w), dtype=np.int64)

    horizon = int(h * rng.uniform(0.3, 0.6))
    mask[:horizon] = 0

    # sky: bright blue fading toward the horizon
    grad = (yy / max(h - 1, 1)).astype(np.float32)
    sky = np.stack([0.55 + 0.25 * grad, 0.70 + 0.15 * grad,
                    0.95 - 0.10 * grad]).astype(np.float32)
    # water: darker blue-green with wave texture
    fx, fy = rng.uniform(2, 6), rng.uniform(8, 20)
    phase = rng.uniform(0, 2 * np.pi)
    waves = 0.04 * np.sin(2 * np.pi * (fx * xx / w + fy * yy / h) + phase)
    water = np.stack([0.05 + 0.10 * grad + waves, 0.22 + 0.10 * grad + waves,
                      0.35 + 0.08 * grad + waves]).astype(np.float32)
    above = mask == 0
    img[:, above] = sky[:, above]
    img[:, ~above] = water[:, ~above]

    spills = []
    if nc >= 4:
        for _ in range(int(rng.integers(0, 3))):
            cy = rng.uniform(horizon + 0.1 * (h - horizon), h - 1)
            cx = rng.uniform(0, w - 1)
            a = rng.uniform(w / 12, w / 5)
            b = rng.uniform(h / 20, h / 8)
            spills.append((cy, cx, a, b))
    for cy, cx, a, b in spills:
        inside = (((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2) <= 1.0
        region = inside & (mask == 1)
        mask[region] = 3
        img[:, region] *= 0.45  # dark sheen, low contrast against water

    obstacles = []
    if nc >= 3:
        for _ in range(int(rng.integers(0, 4))):
            cy = rng.uniform(max(horizon - 0.08 * h, 0), min(horizon + 0.15 * h, h - 1))
            cx = rng.uniform(0, w - 1)
            a = rng.uniform(w / 16, w / 6)
            b = rng.uniform(h / 20, h / 8)
            obstacles.append((cy, cx, a, b))
    for cy, cx, a, b in obstacles:
        inside = (((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2) <= 1.0
        mask[inside] = 2
        color = rng.uniform(0.3, 0.7)
        img[0, inside] = color
        img[1, inside] = color * 0.55
        img[2, inside] = color * 0.45

    img += rng.normal(0.0, 0.02, size=img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0)
    image = Tensor(img[None])
    if return_geometry:
        return image, mask, {"horizon": horizon, "obstacles": obstacles,
                             "spills": spills}
    return image, mask


def build_synthetic_dataset(out_dir: str, n: int, size: int | tuple[int, int] = 64,
                            nc: int = 4, seed: int = 0,
                            val_fraction: float = 0.2) -> str:
    """Generate a PNG dataset plus manifest.json; returns the manifest path."""
    if n < 1:
        raise ConfigError("dataset needs at least one sample")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    n_val = int(round(n * val_fraction))
    samples = []
    for i in range(n):
        image, mask = synth_scene(seed * 100003 + i, size, nc)
        img_rel = f"images/{i:05d}.png"
        mask_rel = f"masks/{i:05d}.png"
        save_image(os.path.join(out_dir, img_rel), image)
        save_mask(os.path.join(out_dir, mask_rel), mask)
        split = "val" if i >= n - n_val else "train"
        samples.append(SampleRecord(img_rel, mask_rel, split))
    manifest = DatasetManifest("synthetic-marine", DEFAULT_CLASSES[:nc],
                               DEFAULT_PALETTE[:nc], samples, root=out_dir)
    path = os.path.join(out_dir, "manifest.json")
    save_manifest(manifest, path)
    return path


# ---------------------------------------------------------------------------
# batching

def _pad_sample(image: np.ndarray, mask: np.ndarray, th: int, tw: int):
    _, _, h, w = image.shape
    if (h, w) != (th, tw):
        rows = np.concatenate([np.arange(h), pyramid._mirror_tail(h, th - h)])
        cols = np.concatenate([np.arange(w), pyramid._mirror_tail(w, tw - w)])
        image = np.ascontiguousarray(image[:, :, rows][:, :, :, cols])
        full = np.full((th, tw), IGNORE_INDEX, dtype=mask.dtype)
        full[:h, :w] = mask
        mask = full
    return image, mask


def batch_iter(manifest: DatasetManifest, split: str, batch_size: int,
               seed: int = 0, pad_multiple: int = 4, epoch: int = 0):
    """Yield shuffled (images, masks, indices) batches for one epoch.

    Images are mirror-padded (masks padded with the ignore label) so every
    batch satisfies the model's divisibility precondition; the last partial
    batch is emitted.
    """
    records = manifest.split(split)
    if not records:
        raise ConfigError(f"split {split!r} of manifest {manifest.name!r} is empty")
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(len(records))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        images, masks = [], []
        for i in idx:
            rec = records[i]
            img = load_image(manifest.resolve(rec.image))
            msk = load_mask(manifest.resolve(rec.mask), manifest.nc)
            if img.shape[2:] != msk.shape:
                raise DataError(f"image/mask size mismatch for {rec.image}: "
                                f"{img.shape[2:]} vs {msk.shape}")
            images.append(img.data)
            masks.append(msk)
        th = max(im.shape[2] for im in images)
        tw = max(im.shape[3] for im in images)
        th = -(-th // pad_multiple) * pad_multiple
        tw = -(-tw // pad_multiple) * pad_multiple
        padded = [_pad_sample(im, mk, th, tw) for im, mk in zip(images, masks)]
        batch_img = Tensor(np.concatenate([p[0] for p in padded], axis=0))
        batch_mask = np.stack([p[1] for p in padded], axis=0)
        yield batch_img, batch_mask, [int(i) for i in idx]
