"""Synthetic shape/color image datasets.

Each class is a (shape, color) pair rendered at jittered position, size,
hue and brightness over a noisy dark background. The class identity is the
discriminative signal; position/scale are nuisance structure, which makes
the datasets useful for probing what a conditional generator encodes where.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from pathlib import Path

from .data import Dataset, to_uint8_images

COLOR_TABLE = {
    "red": (0.90, 0.12, 0.12),
    "green": (0.10, 0.85, 0.20),
    "blue": (0.15, 0.25, 0.95),
    "yellow": (0.92, 0.88, 0.10),
    "magenta": (0.88, 0.15, 0.80),
}

SHAPES = ("disk", "square", "triangle", "cross", "bar")

# 10 classes; names carry a numeric prefix so the lexicographic split is
# explicit. The first eight form a 4-shapes-by-4-colors selection in which
# every shape and every color appears exactly twice, in different pairings;
# the last two are held-out combinations whose factors are both familiar.
# Models conditioned on their features must compose, not memorize.
DEFAULT_CLASSES = (
    ("c00_disk_red", "disk", "red"),
    ("c01_disk_green", "disk", "green"),
    ("c02_square_magenta", "square", "magenta"),
    ("c03_square_blue", "square", "blue"),
    ("c04_cross_green", "cross", "green"),
    ("c05_cross_magenta", "cross", "magenta"),
    ("c06_bar_red", "bar", "red"),
    ("c07_bar_blue", "bar", "blue"),
    ("c08_cross_red", "cross", "red"),
    ("c09_bar_magenta", "bar", "magenta"),
)


@dataclass(frozen=True)
class ShapeDatasetSpec:
    classes: tuple[tuple[str, str, str], ...] = DEFAULT_CLASSES
    per_class: int = 64
    image_size: int = 32
    position_jitter: float = 0.20  # fraction of image size, per axis
    radius_range: tuple[float, float] = (0.22, 0.36)  # fraction of image size
    brightness_range: tuple[float, float] = (0.25, 1.0)
    hue_jitter: float = 0.12
    background_range: tuple[float, float] = (0.02, 0.30)
    background_noise: float = 0.05


def _shape_mask(shape: str, u: np.ndarray, v: np.ndarray, r: float) -> np.ndarray:
    if shape == "disk":
        return (u**2 + v**2) <= r**2
    if shape == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.85 * r
    if shape == "triangle":
        # apex up: vertices (0, -r), (+-0.95r, 0.75r)
        inside_base = v <= 0.75 * r
        inside_sides = np.abs(u) <= 0.95 * r * (v + r) / (1.75 * r)
        return inside_base & inside_sides & (v >= -r)
    if shape == "cross":
        arm = 0.30 * r
        return ((np.abs(u) <= arm) & (np.abs(v) <= r)) | (
            (np.abs(v) <= arm) & (np.abs(u) <= r)
        )
    if shape == "bar":
        return (np.abs(v) <= 0.30 * r) & (np.abs(u) <= r)
    raise ValueError(f"unknown shape: {shape!r}")


def _render(
    shape: str,
    color: tuple[float, float, float],
    size: int,
    rng: np.random.Generator,
    spec: ShapeDatasetSpec,
) -> np.ndarray:
    jit = spec.position_jitter * size
    cx = size / 2 + rng.uniform(-jit, jit)
    cy = size / 2 + rng.uniform(-jit, jit)
    radius = rng.uniform(*spec.radius_range) * size
    brightness = rng.uniform(*spec.brightness_range)
    rgb = np.clip(
        np.asarray(color) * brightness + rng.normal(0.0, spec.hue_jitter, 3), 0.0, 1.0
    )
    bg = rng.uniform(*spec.background_range)

    # 2x supersampling for soft, anti-aliased edges
    ss = 2
    coords = (np.arange(size * ss) + 0.5) / ss
    xs, ys = np.meshgrid(coords, coords)
    mask = _shape_mask(shape, xs - cx, ys - cy, radius).astype(np.float64)
    mask = mask.reshape(size, ss, size, ss).mean(axis=(1, 3))

    canvas = np.empty((size, size, 3), dtype=np.float64)
    canvas[:] = bg
    canvas += rng.normal(0.0, spec.background_noise, canvas.shape)
    canvas = canvas * (1.0 - mask[..., None]) + rgb * mask[..., None]
    return np.clip(canvas * 2.0 - 1.0, -1.0, 1.0).astype(np.float32)


def make_shape_dataset(spec: ShapeDatasetSpec | None = None, seed: int = 0) -> Dataset:
    """Render the full dataset in memory; deterministic under (spec, seed)."""
    spec = spec or ShapeDatasetSpec()
    rng = np.random.default_rng(seed)
    images, labels, ids = [], [], []
    for name, shape, color_name in spec.classes:
        color = COLOR_TABLE[color_name]
        for i in range(spec.per_class):
            images.append(_render(shape, color, spec.image_size, rng, spec))
            labels.append(name)
            ids.append(f"{name}/{i:04d}")
    return Dataset(images=np.stack(images), labels=tuple(labels), ids=tuple(ids))


def write_dataset_directory(dataset: Dataset, root: str | Path) -> Path:
    """Write a dataset as a directory-per-class PNG tree for `load_dataset`."""
    root = Path(root)
    as_uint8 = to_uint8_images(dataset.images)
    for i in range(len(dataset)):
        label = dataset.labels[i]
        name = dataset.ids[i].split("/")[-1]
        class_dir = root / label
        class_dir.mkdir(parents=True, exist_ok=True)
        Image.fromarray(as_uint8[i]).save(class_dir / f"{name}.png")
    return root
