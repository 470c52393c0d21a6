"""Metric-learning feature extractor trained with a cached-center NCA loss.

A small residual CNN maps images to d-dimensional features. Training
maximizes, for every batch feature, the Gaussian kernel mass of same-class
cached centers relative to the total kernel mass, where the cache holds one
center per training image and is refreshed periodically. After training the
extractor is frozen and serves as the conditioning backbone for everything
downstream.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .data import Dataset, as_torch_batch, make_batch
from .seeding import derive_seed


@dataclass
class MetricTrainConfig:
    feature_dim: int = 512
    sigma: float = 10.0
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    cache_refresh_period: int = 5
    epochs: int = 30
    batch_size: int = 32
    blocks_per_stage: int = 2
    image_size: int = 32
    augment: bool = True
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.cache_refresh_period < 1:
            raise ValueError("cache_refresh_period must be >= 1")
        if self.feature_dim < 4 or self.feature_dim % 4:
            raise ValueError("feature_dim must be a positive multiple of 4")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


class _ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.skip = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return torch.relu(h + self.skip(x))


class FeatureExtractor(nn.Module):
    """Residual CNN backbone with the class head removed.

    Three stages of width d/4, d/2, d followed by global average pooling,
    so the output dimension equals `feature_dim` for every input.
    """

    def __init__(self, feature_dim: int = 512, image_size: int = 32, blocks_per_stage: int = 2):
        super().__init__()
        if feature_dim < 4 or feature_dim % 4:
            raise ValueError("feature_dim must be a positive multiple of 4")
        self.feature_dim = feature_dim
        self.image_size = image_size
        widths = (feature_dim // 4, feature_dim // 2, feature_dim)
        self.stem = nn.Sequential(
            nn.Conv2d(3, widths[0], 3, padding=1, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(),
        )
        stages = []
        in_ch = widths[0]
        for stage, width in enumerate(widths):
            blocks = []
            for b in range(blocks_per_stage):
                stride = 2 if stage > 0 and b == 0 else 1
                blocks.append(_ResidualBlock(in_ch, width, stride))
                in_ch = width
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.Sequential(*stages)
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "FeatureExtractor":
        """Switch to frozen evaluation mode; parameters stop receiving grads."""
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        self._frozen = True
        return self

    def train(self, mode: bool = True):
        if mode and self._frozen:
            raise RuntimeError("extractor is frozen; cannot re-enter training mode")
        return super().train(mode)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (n, 3, h, w) images, got {tuple(x.shape)}")
        if x.shape[2] != self.image_size or x.shape[3] != self.image_size:
            raise ValueError(
                f"expected {self.image_size}x{self.image_size} inputs, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        h = self.stages(self.stem(x))
        return h.mean(dim=(2, 3))


def extract_features(
    extractor: FeatureExtractor,
    images: np.ndarray | torch.Tensor,
    device: str = "cpu",
) -> torch.Tensor:
    """One d-vector per image; accepts (n, h, w, 3) arrays or NCHW tensors."""
    if isinstance(images, np.ndarray):
        images = as_torch_batch(images, device)
    return extractor(images)


def extract_dataset_features(
    extractor: FeatureExtractor,
    dataset: Dataset,
    batch_size: int = 256,
    device: str = "cpu",
) -> np.ndarray:
    """Features of every item in dataset order, without gradients."""
    was_training = extractor.training
    extractor.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            images = dataset.images[start : start + batch_size]
            chunks.append(extract_features(extractor, images, device).cpu().numpy())
    if was_training:
        extractor.train()
    return np.concatenate(chunks, axis=0)


@dataclass
class CenterCache:
    """Cached kernel centers: one row per training image, in dataset order."""

    centres: torch.Tensor  # (n, d)
    labels: tuple[str, ...]
    epoch_of_last_refresh: int = 0

    def __post_init__(self) -> None:
        if self.centres.shape[0] != len(self.labels):
            raise ValueError("one label per cached center required")

    def __len__(self) -> int:
        return self.centres.shape[0]


def refresh_cache(
    extractor: FeatureExtractor,
    train: Dataset,
    epoch: int = 0,
    batch_size: int = 256,
    device: str = "cpu",
) -> CenterCache:
    """Recompute every cached center from the current extractor, order-stable."""
    feats = extract_dataset_features(extractor, train, batch_size, device)
    return CenterCache(
        centres=torch.from_numpy(feats),
        labels=tuple(train.labels),
        epoch_of_last_refresh=epoch,
    )


def nca_loss(
    features: torch.Tensor,
    labels: Sequence[str],
    cache: CenterCache,
    sigma: float,
    indices: Sequence[int] | np.ndarray | None = None,
    on_missing_positive: str = "raise",
) -> torch.Tensor:
    """Negative sum of log same-class kernel mass ratios over the batch.

    For batch feature i the ratio is the kernel mass exp(-||c_i - c_hat_j||^2
    / (2 sigma^2)) summed over same-class cached centers (j != i) divided by
    the mass over all cached centers (k != i). `indices` give each batch
    item's row in the cache for the self-exclusion; None means no batch item
    is cached.

    A batch item whose class has no other cached center cannot form the
    numerator: this raises by default, or drops the item with a warning when
    `on_missing_positive="drop"`.
    """
    if len(cache) == 0:
        raise ValueError("cache is empty")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if on_missing_positive not in ("raise", "drop"):
        raise ValueError("on_missing_positive must be 'raise' or 'drop'")
    if features.dim() != 2:
        raise ValueError("features must be (batch, d)")
    if features.shape[0] != len(labels):
        raise ValueError("one label per batch feature required")

    centres = cache.centres.to(dtype=features.dtype, device=features.device)
    diff = features[:, None, :] - centres[None, :, :]
    logits = -(diff**2).sum(dim=2) / (2.0 * sigma**2)

    cache_labels = np.asarray(cache.labels, dtype=object)
    same = torch.from_numpy(
        np.asarray(labels, dtype=object)[:, None] == cache_labels[None, :]
    ).to(features.device)
    not_self = torch.ones_like(same)
    if indices is not None:
        idx = np.asarray(indices, dtype=int)
        if idx.shape[0] != features.shape[0]:
            raise ValueError("one cache index per batch feature required")
        rows = torch.arange(features.shape[0])
        valid = (idx >= 0) & (idx < len(cache))
        not_self[rows[valid], torch.from_numpy(idx[valid])] = False

    numerator_mask = same & not_self
    has_positive = numerator_mask.any(dim=1)
    if not bool(has_positive.all()):
        missing = sorted({labels[i] for i in (~has_positive).nonzero().flatten().tolist()})
        if on_missing_positive == "raise":
            raise ValueError(
                f"classes with no other cached center: {missing}; "
                "cannot form the same-class kernel mass"
            )
        warnings.warn(
            f"dropping {int((~has_positive).sum())} batch item(s) whose class "
            f"has no other cached center: {missing}",
            stacklevel=2,
        )
        if not bool(has_positive.any()):
            return features.sum() * 0.0

    neg_inf = torch.finfo(features.dtype).min
    log_num = torch.logsumexp(
        torch.where(numerator_mask, logits, torch.full_like(logits, neg_inf)), dim=1
    )
    log_den = torch.logsumexp(
        torch.where(not_self, logits, torch.full_like(logits, neg_inf)), dim=1
    )
    per_item = log_den - log_num
    return per_item[has_positive].sum()


@dataclass
class MetricTrainResult:
    extractor: FeatureExtractor
    epoch_losses: list[float] = field(default_factory=list)
    cache: CenterCache | None = None


def train_metric(train: Dataset, config: MetricTrainConfig) -> MetricTrainResult:
    """Train and freeze a feature extractor on the given dataset.

    The center cache is refreshed every `cache_refresh_period` epochs
    (including epoch 0). Returns the frozen extractor plus the per-epoch
    mean loss log.
    """
    classes = train.classes
    if len(classes) < 2:
        raise ValueError("metric training needs at least 2 classes")
    singletons = [c for c, ix in train.class_index.items() if len(ix) < 2]
    if singletons:
        warnings.warn(
            f"classes with a single image are dropped from the loss: {sorted(singletons)}",
            stacklevel=2,
        )
    if train.image_size != config.image_size:
        raise ValueError(
            f"dataset images are {train.image_size}px but config expects "
            f"{config.image_size}px"
        )

    torch.manual_seed(derive_seed(config.seed, "metric-init"))
    extractor = FeatureExtractor(
        config.feature_dim, config.image_size, config.blocks_per_stage
    ).to(config.device)
    if config.epochs == 0:
        extractor.freeze()
        return MetricTrainResult(extractor=extractor)

    optimizer = torch.optim.Adam(
        extractor.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    steps_per_epoch = max(1, math.ceil(len(train) / config.batch_size))
    batch_size = min(config.batch_size, len(train))

    cache: CenterCache | None = None
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        if epoch % config.cache_refresh_period == 0 or cache is None:
            cache = refresh_cache(extractor, train, epoch=epoch, device=config.device)
        extractor.train()
        total, items = 0.0, 0
        for step in range(steps_per_epoch):
            batch = make_batch(
                train,
                batch_size,
                seed=derive_seed(config.seed, "metric-batch", epoch, step),
                augment=config.augment,
            )
            feats = extract_features(extractor, batch.images, config.device)
            loss = nca_loss(
                feats,
                batch.labels,
                cache,
                config.sigma,
                indices=batch.indices,
                on_missing_positive="drop",
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            items += len(batch)
        epoch_losses.append(total / items)
    extractor.freeze()
    final_cache = refresh_cache(extractor, train, epoch=config.epochs, device=config.device)
    return MetricTrainResult(extractor=extractor, epoch_losses=epoch_losses, cache=final_cache)


def retrieval_recall(
    features: np.ndarray,
    labels: Sequence[str],
    k: int = 1,
    query_mask: np.ndarray | None = None,
) -> float:
    """Fraction of queries whose k nearest other items share their class.

    Queries whose class has no other item are skipped (a warning reports the
    count); the gallery is always the full feature set.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < 2:
        raise ValueError("need at least two items")
    labels_arr = np.asarray(labels, dtype=object)
    if query_mask is None:
        query_mask = np.ones(n, dtype=bool)

    sq = (features**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * features @ features.T
    np.fill_diagonal(d2, np.inf)

    counts = {c: int((labels_arr == c).sum()) for c in set(labels_arr)}
    hits, evaluated, skipped = 0, 0, 0
    for i in np.nonzero(query_mask)[0]:
        if counts[labels_arr[i]] < 2:
            skipped += 1
            continue
        neighbours = np.argpartition(d2[i], min(k, n - 1) - 1)[:k]
        evaluated += 1
        if (labels_arr[neighbours] == labels_arr[i]).any():
            hits += 1
    if skipped:
        warnings.warn(f"skipped {skipped} single-item-class queries", stacklevel=2)
    if evaluated == 0:
        raise ValueError("no evaluable queries")
    return hits / evaluated


def retrieval_eval(
    extractor: FeatureExtractor,
    dataset: Dataset,
    k: int = 1,
    query_classes: Sequence[str] | None = None,
    batch_size: int = 256,
    device: str = "cpu",
) -> float:
    """recall@k of extractor features over the dataset.

    `query_classes` restricts which items are used as queries; the gallery
    stays the whole dataset.
    """
    feats = extract_dataset_features(extractor, dataset, batch_size, device)
    mask = None
    if query_classes is not None:
        wanted = set(query_classes)
        mask = np.asarray([l in wanted for l in dataset.labels])
        if not mask.any():
            raise ValueError("no dataset items belong to the requested query classes")
    return retrieval_recall(feats, dataset.labels, k=k, query_mask=mask)


def permutation_recall_baseline(
    dataset: Dataset,
    k: int = 1,
    rounds: int = 20,
    seed: int = 0,
    query_classes: Sequence[str] | None = None,
    feature_dim: int = 8,
) -> float:
    """Empirical chance recall@k: random features, real labels, averaged."""
    rng = np.random.default_rng(seed)
    mask = None
    if query_classes is not None:
        wanted = set(query_classes)
        mask = np.asarray([l in wanted for l in dataset.labels])
    values = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(rounds):
            feats = rng.standard_normal((len(dataset), feature_dim))
            values.append(retrieval_recall(feats, dataset.labels, k=k, query_mask=mask))
    return float(np.mean(values))
