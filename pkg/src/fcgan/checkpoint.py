"""Checkpoint serialization.

Checkpoints are plain dicts of tensors and primitives (loadable with
`torch.load(weights_only=True)`) carrying both the parameters and the
configs that built them, so models can always be reconstructed from the
file alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from .gan import GanTrainConfig
from .metric import FeatureExtractor, MetricTrainConfig
from .networks import (
    Discriminator,
    Generator,
    NetworkConfig,
    build_discriminator,
    build_generator,
)


def _build_extractor(metric_config: MetricTrainConfig) -> FeatureExtractor:
    return FeatureExtractor(
        feature_dim=metric_config.feature_dim,
        image_size=metric_config.image_size,
        blocks_per_stage=metric_config.blocks_per_stage,
    )


def save_metric_checkpoint(
    path: str | Path,
    extractor: FeatureExtractor,
    config: MetricTrainConfig,
    split_manifest_hash: str = "",
    config_hash: str | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "kind": "metric",
        "theta_f": extractor.state_dict(),
        "metric_config": asdict(config),
        "feature_dim": config.feature_dim,
        "sigma": config.sigma,
        "split_manifest_hash": split_manifest_hash,
        "config_hash": config_hash or "unhashed",
    }
    torch.save(payload, path)
    return path


@dataclass
class MetricCheckpoint:
    extractor: FeatureExtractor
    config: MetricTrainConfig
    split_manifest_hash: str
    config_hash: str


def load_metric_checkpoint(path: str | Path) -> MetricCheckpoint:
    payload = torch.load(Path(path), weights_only=True)
    if payload.get("kind") != "metric":
        raise ValueError(f"{path} is not a metric checkpoint")
    config = MetricTrainConfig(**payload["metric_config"])
    extractor = _build_extractor(config)
    extractor.load_state_dict(payload["theta_f"])
    extractor.freeze()
    return MetricCheckpoint(
        extractor=extractor,
        config=config,
        split_manifest_hash=payload["split_manifest_hash"],
        config_hash=payload["config_hash"],
    )


def save_gan_checkpoint(
    path: str | Path,
    generator: Generator,
    discriminator: Discriminator,
    extractor: FeatureExtractor,
    network_config: NetworkConfig,
    gan_config: GanTrainConfig,
    metric_config: MetricTrainConfig | None,
    iteration: int,
    config_hash: str | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "kind": "gan",
        "theta_g": generator.state_dict(),
        "theta_d": discriminator.state_dict(),
        "theta_f": extractor.state_dict(),
        "network_config": asdict(network_config),
        "gan_config": asdict(gan_config),
        "metric_config": asdict(metric_config) if metric_config else None,
        "extractor_shape": {
            "feature_dim": extractor.feature_dim,
            "image_size": extractor.image_size,
        },
        "iteration": iteration,
        "config_hash": config_hash or "unhashed",
    }
    torch.save(payload, path)
    return path


@dataclass
class GanCheckpoint:
    generator: Generator
    discriminator: Discriminator
    extractor: FeatureExtractor
    network_config: NetworkConfig
    gan_config: GanTrainConfig
    metric_config: MetricTrainConfig | None
    iteration: int
    config_hash: str


def load_gan_checkpoint(path: str | Path) -> GanCheckpoint:
    payload = torch.load(Path(path), weights_only=True)
    if payload.get("kind") != "gan":
        raise ValueError(f"{path} is not a GAN checkpoint")
    network_config = NetworkConfig(**payload["network_config"])
    gan_config = GanTrainConfig(**payload["gan_config"])
    metric_config = (
        MetricTrainConfig(**payload["metric_config"]) if payload["metric_config"] else None
    )
    generator = build_generator(network_config)
    generator.load_state_dict(payload["theta_g"])
    generator.eval()
    discriminator = build_discriminator(network_config)
    discriminator.load_state_dict(payload["theta_d"])
    discriminator.eval()
    if metric_config is not None:
        extractor = _build_extractor(metric_config)
    else:
        shape = payload["extractor_shape"]
        extractor = FeatureExtractor(shape["feature_dim"], shape["image_size"])
    extractor.load_state_dict(payload["theta_f"])
    extractor.freeze()
    return GanCheckpoint(
        generator=generator,
        discriminator=discriminator,
        extractor=extractor,
        network_config=network_config,
        gan_config=gan_config,
        metric_config=metric_config,
        iteration=payload["iteration"],
        config_hash=payload["config_hash"],
    )
