"""Distribution distances and feature-space diagnostics.

The Frechet distance between Gaussian moment estimates is computed with the
matrix square root taken on the symmetrized product, via scipy's Schur-based
sqrtm; tests validate it against an independent eigendecomposition oracle.
The embedder used for image-set distances is deliberately pluggable: at desk
scale it is the frozen metric extractor, so reported numbers rank models but
are not comparable across embedders.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import scipy.linalg
import torch

from .data import Dataset
from .metric import FeatureExtractor, extract_features
from .networks import Generator
from .sampling import generate_images, sample_latents
from .seeding import numpy_rng


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self) -> None:
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("mean must be (d,) and cov (d, d)")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        if self.count < 2:
            raise ValueError("need at least 2 samples for an unbiased covariance")


def gaussian_moments(features: np.ndarray) -> GaussianMoments:
    """Mean and unbiased covariance of an (n, d) feature array."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("need an (n >= 2, d) feature array")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return GaussianMoments(mean=mean, cov=(cov + cov.T) / 2.0, count=features.shape[0])


def frechet_distance(a: GaussianMoments, b: GaussianMoments) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 sqrt(S_a S_b)), clamped at 0."""
    if a.mean.size != b.mean.size:
        raise ValueError(
            f"moment dimensionality mismatch: {a.mean.size} vs {b.mean.size}"
        )
    for m in (a, b):
        if not (np.isfinite(m.mean).all() and np.isfinite(m.cov).all()):
            raise ValueError("non-finite moments")
    # Tr sqrt(S_a S_b) computed on the symmetrized product S_b^1/2 S_a S_b^1/2
    root_b = scipy.linalg.sqrtm(b.cov)
    root_b = np.real(root_b)
    inner = root_b @ a.cov @ root_b
    inner = (inner + inner.T) / 2.0
    sqrt_inner = np.real(scipy.linalg.sqrtm(inner))
    trace_term = float(np.trace(sqrt_inner))
    dist = (
        float(((a.mean - b.mean) ** 2).sum())
        + float(np.trace(a.cov))
        + float(np.trace(b.cov))
        - 2.0 * trace_term
    )
    return max(dist, 0.0)


Embedder = Callable[[np.ndarray], np.ndarray]


def _embed(embedder: FeatureExtractor | Embedder, images: np.ndarray, batch_size: int, device: str) -> np.ndarray:
    if isinstance(embedder, FeatureExtractor):
        chunks = []
        with torch.no_grad():
            for start in range(0, images.shape[0], batch_size):
                chunk = extract_features(embedder, images[start : start + batch_size], device)
                chunks.append(chunk.cpu().numpy())
        return np.concatenate(chunks, axis=0)
    return np.asarray(embedder(images), dtype=np.float64)


def fid(
    real_images: np.ndarray,
    fake_images: np.ndarray,
    embedder: FeatureExtractor | Embedder,
    batch_size: int = 64,
    device: str = "cpu",
) -> float:
    """Frechet distance between embedded moment estimates of two image sets."""
    if real_images.shape[0] < 2 or fake_images.shape[0] < 2:
        raise ValueError("need at least 2 images on each side")
    moments_real = gaussian_moments(_embed(embedder, real_images, batch_size, device))
    moments_fake = gaussian_moments(_embed(embedder, fake_images, batch_size, device))
    return frechet_distance(moments_real, moments_fake)


def intra_fid(
    real: Dataset,
    generator_samples_per_class: Mapping[str, np.ndarray],
    embedder: FeatureExtractor | Embedder,
    min_per_class: int = 2,
    batch_size: int = 64,
    device: str = "cpu",
) -> float:
    """Mean per-class FID over the classes present in both inputs.

    Classes with fewer than `min_per_class` samples on either side are
    skipped with a warning.
    """
    scores = []
    skipped = []
    for cls in real.classes:
        if cls not in generator_samples_per_class:
            skipped.append(cls)
            continue
        real_idx = np.asarray(real.class_index[cls])
        fake = generator_samples_per_class[cls]
        if len(real_idx) < min_per_class or fake.shape[0] < min_per_class:
            skipped.append(cls)
            continue
        scores.append(
            fid(real.images[real_idx], fake, embedder, batch_size, device)
        )
    if skipped:
        warnings.warn(
            f"intra-FID skipped {len(skipped)} class(es) below {min_per_class} "
            f"samples or without generated samples: {sorted(skipped)}",
            stacklevel=2,
        )
    if not scores:
        raise ValueError("no class had enough samples for intra-FID")
    return float(np.mean(scores))


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """A random permutation of range(n) with no fixed point (n >= 2)."""
    if n < 2:
        raise ValueError("derangement needs n >= 2")
    while True:
        perm = rng.permutation(n)
        if not (perm == np.arange(n)).any():
            return perm


def feature_match_report(
    extractor: FeatureExtractor,
    source_images: np.ndarray,
    generated_images: np.ndarray,
    seed: int = 0,
    batch_size: int = 64,
    device: str = "cpu",
) -> dict:
    """Matched-pair feature MSE and a deranged-pair baseline.

    MSE is the per-pair squared feature distance averaged over pairs. With
    fewer than 2 pairs no derangement exists and the baseline is None.
    """
    if source_images.shape[0] != generated_images.shape[0]:
        raise ValueError("need one generated image per source image")
    src = _embed(extractor, source_images, batch_size, device)
    gen = _embed(extractor, generated_images, batch_size, device)
    matched = float(((gen - src) ** 2).sum(axis=1).mean())
    if src.shape[0] < 2:
        return {"matched_mse": matched, "mismatched_mse": None, "pairs": int(src.shape[0])}
    perm = derangement(src.shape[0], numpy_rng(seed, "feature-match-derangement"))
    mismatched = float(((gen - src[perm]) ** 2).sum(axis=1).mean())
    return {"matched_mse": matched, "mismatched_mse": mismatched, "pairs": int(src.shape[0])}


def information_split_report(
    generator: Generator,
    extractor: FeatureExtractor,
    feature_pool: np.ndarray,
    probes: int = 20,
    samples_per_probe: int = 8,
    seed: int = 0,
    device: str = "cpu",
) -> dict:
    """Compare output-feature variance under varying z versus varying f.

    For each probe, one pool feature is fixed while z varies, and one z is
    fixed while features vary (drawn from the pool). Variance is the mean
    per-dimension variance of the extractor's features of the generated
    images. A ratio well below 1 means semantics follow the conditioning
    feature rather than the latent.
    """
    pool = np.asarray(feature_pool, dtype=np.float32)
    if pool.shape[0] < samples_per_probe:
        raise ValueError("feature pool smaller than samples_per_probe")
    rng = numpy_rng(seed, "information-split")
    latent_dim = generator.config.latent_dim

    var_fixed_feature = []
    var_fixed_latent = []
    for _ in range(probes):
        f_idx = rng.integers(pool.shape[0])
        fixed_f = np.repeat(pool[f_idx : f_idx + 1], samples_per_probe, axis=0)
        z_varied = sample_latents(samples_per_probe, latent_dim, rng)
        images = generate_images(generator, fixed_f, z_varied, batch_size=samples_per_probe, device=device)
        feats = _embed(extractor, images, samples_per_probe, device)
        var_fixed_feature.append(float(feats.var(axis=0).mean()))

        z_fixed = np.repeat(sample_latents(1, latent_dim, rng), samples_per_probe, axis=0)
        f_idxs = rng.choice(pool.shape[0], size=samples_per_probe, replace=False)
        images = generate_images(generator, pool[f_idxs], z_fixed, batch_size=samples_per_probe, device=device)
        feats = _embed(extractor, images, samples_per_probe, device)
        var_fixed_latent.append(float(feats.var(axis=0).mean()))

    mean_z_var = float(np.mean(var_fixed_feature))
    mean_f_var = float(np.mean(var_fixed_latent))
    return {
        "variance_varying_latent": mean_z_var,
        "variance_varying_feature": mean_f_var,
        "ratio": mean_z_var / mean_f_var if mean_f_var > 0 else float("inf"),
        "probes": probes,
    }


def export_embeddings(
    extractor: FeatureExtractor,
    dataset: Dataset,
    path: str | Path,
    batch_size: int = 256,
    device: str = "cpu",
) -> Path:
    """Write (id, label, feature) records as JSON lines; lossless round-trip."""
    from .metric import extract_dataset_features

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    feats = extract_dataset_features(extractor, dataset, batch_size, device)
    with path.open("w", encoding="utf-8") as fh:
        for i in range(len(dataset)):
            record = {
                "id": dataset.ids[i],
                "label": dataset.labels[i],
                "feature": [float(v) for v in feats[i]],
            }
            fh.write(json.dumps(record) + "\n")
    return path


def read_embeddings(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    ids, labels, feats = [], [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            ids.append(record["id"])
            labels.append(record["label"])
            feats.append(record["feature"])
    return ids, labels, np.asarray(feats, dtype=np.float64)
