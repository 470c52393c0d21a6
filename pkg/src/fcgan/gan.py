"""Adversarial training loop.

Each iteration performs one discriminator update and one generator update,
each on its own freshly sampled latent batch. The discriminator minimizes a
two-sided hinge loss; the generator minimizes the negated score plus a
scaled squared-error term between the frozen extractor's features of its
output and the conditioning features.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import Dataset, as_torch_batch, make_batch
from .metric import FeatureExtractor, MetricTrainConfig
from .networks import Discriminator, Generator, NetworkConfig, build_discriminator, build_generator
from .seeding import derive_seed, torch_generator


@dataclass
class GanTrainConfig:
    feature_loss_scale: float = 0.01  # lambda
    learning_rate: float = 1e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.999
    batch_size: int = 48
    max_iterations: int = 10_000
    checkpoint_every: int = 1000
    augment: bool = True
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.feature_loss_scale < 0:
            raise ValueError("feature_loss_scale must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


def d_hinge_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """mean(relu(1 - real)) + mean(relu(1 + fake))."""
    return torch.relu(1.0 - real_scores).mean() + torch.relu(1.0 + fake_scores).mean()


def g_hinge_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Adversarial part of the generator objective: mean(-fake)."""
    return (-fake_scores).mean()


def feature_match_mse(
    generated_features: torch.Tensor, target_features: torch.Tensor
) -> torch.Tensor:
    """Mean over the batch of per-sample squared feature distances."""
    return ((generated_features - target_features) ** 2).sum(dim=1).mean()


def sample_latent(
    count: int, dim: int, generator: torch.Generator | None = None
) -> torch.Tensor:
    return torch.randn(count, dim, generator=generator)


def parameter_hash(module: torch.nn.Module) -> str:
    """Order-stable digest of all parameter bytes.

    Covers learnable parameters only; estimator state such as power-iteration
    buffers is excluded on purpose.
    """
    digest = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    extractor: FeatureExtractor
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    feature_loss_scale: float
    iteration: int = 0
    metrics: list[dict] = field(default_factory=list)


def discriminator_step(
    state: TrainState,
    real_images: torch.Tensor,
    features: torch.Tensor,
    z: torch.Tensor,
) -> float:
    """One hinge update of the discriminator; generator outputs are constants."""
    with torch.no_grad():
        fake_images = state.generator(z, features)
    real_scores = state.discriminator(real_images, features)
    fake_scores = state.discriminator(fake_images, features)
    loss = d_hinge_loss(real_scores, fake_scores)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite discriminator loss at iteration {state.iteration}")
    state.opt_d.zero_grad()
    loss.backward()
    state.opt_d.step()
    return float(loss.detach())


def generator_step(
    state: TrainState,
    features: torch.Tensor,
    z: torch.Tensor,
) -> tuple[float, float]:
    """One generator update; gradients flow through the frozen extractor.

    Returns (adversarial loss, unscaled feature MSE).
    """
    fake_images = state.generator(z, features)
    fake_scores = state.discriminator(fake_images, features)
    adv = g_hinge_loss(fake_scores)
    fmse = feature_match_mse(state.extractor(fake_images), features)
    loss = adv + state.feature_loss_scale * fmse
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite generator loss at iteration {state.iteration}")
    state.opt_g.zero_grad()
    loss.backward()
    state.opt_g.step()
    return float(adv.detach()), float(fmse.detach())


@dataclass
class GanTrainResult:
    state: TrainState
    checkpoint_path: Path | None
    metrics_path: Path | None
    theta_f_hash: str


def train_gan(
    train: Dataset,
    extractor: FeatureExtractor,
    network_config: NetworkConfig,
    config: GanTrainConfig,
    output_dir: str | Path | None = None,
    metric_config: MetricTrainConfig | None = None,
    config_hash: str | None = None,
) -> GanTrainResult:
    """Run the alternating D/G loop and write checkpoints plus a metrics log.

    The extractor is frozen for the duration; its parameter hash is verified
    unchanged at the end. With `max_iterations == 0` only the initial
    checkpoint is produced.
    """
    from .checkpoint import save_gan_checkpoint  # local import to avoid a cycle

    if len(train) == 0:
        raise ValueError("training dataset is empty")
    if not extractor.frozen:
        extractor.freeze()
    if extractor.feature_dim != network_config.embedding_dim:
        raise ValueError(
            f"extractor feature_dim {extractor.feature_dim} != network "
            f"embedding_dim {network_config.embedding_dim}"
        )
    theta_f_before = parameter_hash(extractor)

    torch.manual_seed(derive_seed(config.seed, "gan-init"))
    generator = build_generator(network_config).to(config.device)
    discriminator = build_discriminator(network_config).to(config.device)
    opt_g = torch.optim.Adam(
        generator.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    opt_d = torch.optim.Adam(
        discriminator.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    state = TrainState(
        generator=generator,
        discriminator=discriminator,
        extractor=extractor,
        opt_g=opt_g,
        opt_d=opt_d,
        feature_loss_scale=config.feature_loss_scale,
    )

    out_dir = Path(output_dir) if output_dir is not None else None
    metrics_file = None
    metrics_path = None
    checkpoint_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        metrics_file = metrics_path.open("w", encoding="utf-8")
        header = {"config_hash": config_hash or "unhashed", "seed": config.seed}
        metrics_file.write(json.dumps(header) + "\n")

    z_gen = torch_generator(config.seed, "gan-latent")
    batch_size = min(config.batch_size, len(train))

    def save(tag: str) -> Path | None:
        if out_dir is None:
            return None
        path = out_dir / f"gan_{tag}.pt"
        save_gan_checkpoint(
            path,
            generator=generator,
            discriminator=discriminator,
            extractor=extractor,
            network_config=network_config,
            gan_config=config,
            metric_config=metric_config,
            iteration=state.iteration,
            config_hash=config_hash,
        )
        return path

    try:
        for iteration in range(config.max_iterations):
            state.iteration = iteration
            batch = make_batch(
                train,
                batch_size,
                seed=derive_seed(config.seed, "gan-batch", iteration),
                augment=config.augment,
            )
            real = as_torch_batch(batch.images, config.device)
            with torch.no_grad():
                features = extractor(real)

            z_d = sample_latent(batch_size, network_config.latent_dim, z_gen).to(config.device)
            loss_d = discriminator_step(state, real, features, z_d)
            z_g = sample_latent(batch_size, network_config.latent_dim, z_gen).to(config.device)
            loss_g_adv, fmse = generator_step(state, features, z_g)

            record = {
                "iteration": iteration,
                "loss_d": loss_d,
                "loss_g_adv": loss_g_adv,
                "feature_mse": fmse,
            }
            state.metrics.append(record)
            if metrics_file is not None:
                metrics_file.write(json.dumps(record) + "\n")
            if (iteration + 1) % config.checkpoint_every == 0:
                state.iteration = iteration + 1
                save(f"iter{iteration + 1:06d}")
            state.iteration = iteration + 1
    except FloatingPointError:
        if out_dir is not None:
            dump = out_dir / "diagnostic_dump.json"
            dump.write_text(json.dumps(state.metrics[-50:], indent=2), encoding="utf-8")
        raise
    finally:
        if metrics_file is not None:
            metrics_file.close()

    checkpoint_path = save("final")
    theta_f_after = parameter_hash(extractor)
    if theta_f_after != theta_f_before:
        raise RuntimeError("frozen extractor parameters changed during GAN training")
    return GanTrainResult(
        state=state,
        checkpoint_path=checkpoint_path,
        metrics_path=metrics_path,
        theta_f_hash=theta_f_after,
    )
