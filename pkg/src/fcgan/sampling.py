"""Conditioning-feature sampling and image generation.

Supported conditioning modes: features of specific source images, normal
draws centred on a class mean, and fully random features drawn from a
single scalar mean/std computed across all examples and dimensions of a
partition. Small Gaussian perturbations of real features are expressed in
units of that same scalar std.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from PIL import Image

from .data import Dataset, as_numpy_images, to_uint8_images
from .metric import FeatureExtractor, extract_dataset_features, extract_features
from .networks import Generator
from .seeding import numpy_rng


@dataclass(frozen=True)
class FeatureStats:
    """Per-class and global moments of a partition's features.

    The global mean and std are scalars taken across all examples and all
    embedding dimensions.
    """

    class_means: Mapping[str, np.ndarray]
    class_stds: Mapping[str, np.ndarray]
    global_mean: float
    global_std: float
    feature_dim: int
    partition: str
    count: int


@dataclass(frozen=True)
class SampleSpec:
    """A sampling request, serializable into grid manifests."""

    mode: str  # "source" | "class-mean" | "random"
    count: int = 16
    class_name: str | None = None
    partition: str | None = None
    std_scale: float = 1.0
    eta: float = 0.0
    z_policy: str = "per-sample"  # "per-sample" | "fixed"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("source", "class-mean", "random"):
            raise ValueError(f"unknown sampling mode: {self.mode!r}")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.count < 1:
            raise ValueError("count must be >= 1")


def compute_feature_stats(
    extractor: FeatureExtractor,
    dataset: Dataset,
    partition: str = "train",
    batch_size: int = 256,
    device: str = "cpu",
) -> FeatureStats:
    feats = extract_dataset_features(extractor, dataset, batch_size, device)
    class_means: dict[str, np.ndarray] = {}
    class_stds: dict[str, np.ndarray] = {}
    for cls, idx in dataset.class_index.items():
        rows = feats[np.asarray(idx)]
        class_means[cls] = rows.mean(axis=0)
        class_stds[cls] = rows.std(axis=0)
    return FeatureStats(
        class_means=class_means,
        class_stds=class_stds,
        global_mean=float(feats.mean()),
        global_std=float(feats.std()),
        feature_dim=feats.shape[1],
        partition=partition,
        count=len(dataset),
    )


def draw_class_mean_features(
    stats: FeatureStats,
    class_name: str,
    count: int,
    std_scale: float = 1.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Normal draws centred on a class mean with scaled per-class std."""
    if class_name not in stats.class_means:
        raise KeyError(f"class {class_name!r} not present in {stats.partition!r} stats")
    rng = rng or np.random.default_rng(0)
    mean = stats.class_means[class_name]
    std = stats.class_stds[class_name] * std_scale
    return (mean[None, :] + rng.standard_normal((count, stats.feature_dim)) * std[None, :]).astype(
        np.float32
    )


def draw_random_features(
    stats: FeatureStats, count: int, rng: np.random.Generator | None = None
) -> np.ndarray:
    """I.i.d. per-dimension draws from N(global_mean, global_std**2)."""
    rng = rng or np.random.default_rng(0)
    draws = rng.standard_normal((count, stats.feature_dim))
    return (stats.global_mean + draws * stats.global_std).astype(np.float32)


def perturb_feature(
    features: np.ndarray,
    eta: float,
    sigma_f: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Add per-dimension Gaussian noise with std eta * sigma_f."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    features = np.asarray(features, dtype=np.float32)
    if eta == 0:
        return features.copy()
    rng = rng or np.random.default_rng(0)
    noise = rng.standard_normal(features.shape) * (eta * sigma_f)
    return (features + noise).astype(np.float32)


def generate_images(
    generator: Generator,
    features: np.ndarray | torch.Tensor,
    latents: np.ndarray | torch.Tensor,
    batch_size: int = 16,
    device: str = "cpu",
) -> np.ndarray:
    """Run the generator in eval mode; returns (n, h, w, 3) arrays in [-1, 1].

    Generation is chunked at a fixed batch size so results only depend on
    (features, latents, batch_size).
    """
    if isinstance(features, np.ndarray):
        features = torch.from_numpy(np.ascontiguousarray(features, dtype=np.float32))
    if isinstance(latents, np.ndarray):
        latents = torch.from_numpy(np.ascontiguousarray(latents, dtype=np.float32))
    if features.shape[0] != latents.shape[0]:
        raise ValueError("need one latent per feature")
    was_training = generator.training
    generator.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, features.shape[0], batch_size):
            z = latents[start : start + batch_size].to(device)
            f = features[start : start + batch_size].to(device)
            chunks.append(as_numpy_images(generator(z, f)))
    if was_training:
        generator.train()
    return np.concatenate(chunks, axis=0)


def sample_latents(count: int, latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((count, latent_dim)).astype(np.float32)


def sample_from_source(
    generator: Generator,
    extractor: FeatureExtractor,
    source_image: np.ndarray,
    count: int = 1,
    z_policy: str = "per-sample",
    seed: int = 0,
    device: str = "cpu",
) -> np.ndarray:
    """Generate `count` images conditioned on one source image's feature.

    No weights are updated; the source only conditions the generator. With
    `z_policy="fixed"` all outputs share a single latent, so repeated calls
    are identical.
    """
    if z_policy not in ("per-sample", "fixed"):
        raise ValueError(f"unknown z policy: {z_policy!r}")
    if source_image.ndim == 3:
        source_image = source_image[None]
    with torch.no_grad():
        feature = extract_features(extractor, source_image, device).cpu().numpy()
    features = np.repeat(feature, count, axis=0)
    rng = numpy_rng(seed, "sample-source")
    if z_policy == "fixed":
        z = np.repeat(sample_latents(1, generator.config.latent_dim, rng), count, axis=0)
    else:
        z = sample_latents(count, generator.config.latent_dim, rng)
    return generate_images(generator, features, z, device=device)


def sample_class_mean(
    generator: Generator,
    stats: FeatureStats,
    class_name: str,
    count: int = 1,
    std_scale: float = 1.0,
    seed: int = 0,
    device: str = "cpu",
) -> np.ndarray:
    """Generate from normal feature draws centred on a class mean."""
    rng = numpy_rng(seed, "sample-class-mean", class_name)
    features = draw_class_mean_features(stats, class_name, count, std_scale, rng)
    z = sample_latents(count, generator.config.latent_dim, rng)
    return generate_images(generator, features, z, device=device)


def sample_random_feature(
    generator: Generator,
    stats: FeatureStats,
    count: int = 1,
    seed: int = 0,
    device: str = "cpu",
) -> np.ndarray:
    """Generate from fully random features; no class information consulted."""
    rng = numpy_rng(seed, "sample-random-feature")
    features = draw_random_features(stats, count, rng)
    z = sample_latents(count, generator.config.latent_dim, rng)
    return generate_images(generator, features, z, device=device)


def save_image_grid(
    images: np.ndarray,
    path: str | Path,
    columns: int | None = None,
    padding: int = 2,
) -> Path:
    """Tile (n, h, w, 3) images row-major into one PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, h, w, _ = images.shape
    columns = columns or int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / columns))
    canvas = np.zeros(
        (rows * (h + padding) - padding, columns * (w + padding) - padding, 3),
        dtype=np.uint8,
    )
    tiles = to_uint8_images(images)
    for i in range(n):
        r, c = divmod(i, columns)
        canvas[r * (h + padding) : r * (h + padding) + h, c * (w + padding) : c * (w + padding) + w] = tiles[i]
    Image.fromarray(canvas).save(path)
    return path
