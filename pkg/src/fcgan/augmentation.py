"""Few-shot classifier training with generated-sample augmentation.

The augmented loop interleaves one optimization step on each real batch
with `fake_per_real` steps on generated batches: the real batch's features
are perturbed (freshly per repetition), images are generated with fresh
latents, and the fakes inherit the real batch's labels. A ratio of zero
reduces the loop to plain supervised training, bit-identical to the
baseline under the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .data import Dataset, as_torch_batch
from .gan import parameter_hash
from .metric import FeatureExtractor, extract_features
from .networks import Generator
from .sampling import generate_images, perturb_feature, sample_latents
from .seeding import derive_seed, numpy_rng


@dataclass
class AugmentConfig:
    real_per_class: int = 1
    fake_per_real: int = 0
    eta: float = 0.0
    classifier_epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.real_per_class < 1:
            raise ValueError("real_per_class must be >= 1")
        if self.fake_per_real < 0:
            raise ValueError("fake_per_real must be >= 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")


@dataclass
class AugmentReport:
    baseline_accuracy: float
    augmented_accuracy: float
    config: AugmentConfig

    def __post_init__(self) -> None:
        for acc in (self.baseline_accuracy, self.augmented_accuracy):
            if not 0.0 <= acc <= 1.0:
                raise ValueError("accuracies must lie in [0, 1]")


class SmallClassifier(nn.Module):
    """Compact CNN classifier used for the desk-scale protocol."""

    def __init__(self, num_classes: int, width: int = 16):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(width, width * 2, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(width * 2, width * 4, 3, padding=1),
            nn.ReLU(),
        )
        self.head = nn.Linear(width * 4, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x).mean(dim=(2, 3))
        return self.head(h)


def few_shot_split(
    dataset: Dataset,
    shots: int,
    seed: int,
    test_per_class: int,
) -> tuple[Dataset, Dataset]:
    """Per class: a fixed trailing test block plus `shots` seeded train picks.

    The test block is the last `test_per_class` items of each class in
    dataset order, independent of shots and seed, so every experiment sees
    the same test set.
    """
    rng = numpy_rng(seed, "few-shot-picks")
    train_idx: list[int] = []
    test_idx: list[int] = []
    for cls in dataset.classes:
        idx = list(dataset.class_index[cls])
        if len(idx) <= test_per_class:
            raise ValueError(
                f"class {cls!r} has {len(idx)} items; needs more than "
                f"test_per_class={test_per_class}"
            )
        pool, test = idx[:-test_per_class], idx[-test_per_class:]
        if shots > len(pool):
            raise ValueError(
                f"class {cls!r} has only {len(pool)} non-test items for {shots} shots"
            )
        picks = rng.choice(len(pool), size=shots, replace=False)
        train_idx.extend(pool[i] for i in sorted(picks))
        test_idx.extend(test)
    return dataset.subset(train_idx), dataset.subset(test_idx)


def _evaluate(model: nn.Module, dataset: Dataset, classes: Sequence[str], device: str) -> float:
    # test items whose class the classifier never saw count as incorrect
    label_to_idx = {c: i for i, c in enumerate(classes)}
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(dataset), 64):
            images = as_torch_batch(dataset.images[start : start + 64], device)
            predicted = model(images).argmax(dim=1).cpu().numpy()
            expected = np.asarray(
                [label_to_idx.get(l, -1) for l in dataset.labels[start : start + 64]]
            )
            correct += int((predicted == expected).sum())
    return correct / len(dataset)


def _train_classifier(
    train_subset: Dataset,
    test_set: Dataset,
    config: AugmentConfig,
    generator: Generator | None,
    extractor: FeatureExtractor | None,
    capture_model: list | None = None,
) -> float:
    # the label set is the training subset's; test items outside it are
    # scored as wrong by _evaluate
    classes = train_subset.classes
    label_to_idx = {c: i for i, c in enumerate(classes)}

    use_fakes = config.fake_per_real > 0
    if use_fakes and (generator is None or extractor is None):
        raise ValueError("fake_per_real > 0 requires a generator and extractor")

    torch.manual_seed(derive_seed(config.seed, "augment-classifier-init"))
    model = SmallClassifier(len(classes)).to(config.device)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = numpy_rng(config.seed, "augment-order")

    sigma_f = 0.0
    if use_fakes:
        with torch.no_grad():
            feats = extract_features(extractor, train_subset.images, config.device)
        sigma_f = float(feats.cpu().numpy().std())

    targets_all = np.asarray([label_to_idx[l] for l in train_subset.labels])

    def step(images: torch.Tensor, targets: torch.Tensor) -> None:
        model.train()
        loss = F.cross_entropy(model(images), targets)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    for _ in range(config.classifier_epochs):
        order = rng.permutation(len(train_subset))
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            real_images = as_torch_batch(train_subset.images[batch_idx], config.device)
            targets = torch.as_tensor(targets_all[batch_idx], device=config.device)
            step(real_images, targets)
            if not use_fakes:
                continue
            with torch.no_grad():
                features = extractor(real_images).cpu().numpy()
            for _ in range(config.fake_per_real):
                perturbed = perturb_feature(features, config.eta, sigma_f, rng)
                z = sample_latents(len(batch_idx), generator.config.latent_dim, rng)
                fakes = generate_images(
                    generator, perturbed, z, batch_size=len(batch_idx), device=config.device
                )
                step(as_torch_batch(fakes, config.device), targets)

    if capture_model is not None:
        capture_model.append(model)
    return _evaluate(model, test_set, classes, config.device)


def train_classifier_baseline(
    train_subset: Dataset, test_set: Dataset, config: AugmentConfig
) -> float:
    """Supervised training on real data only; deterministic under the seed."""
    baseline_config = replace(config, fake_per_real=0)
    return _train_classifier(train_subset, test_set, baseline_config, None, None)


def train_classifier_augmented(
    train_subset: Dataset,
    test_set: Dataset,
    generator: Generator,
    extractor: FeatureExtractor,
    config: AugmentConfig,
) -> float:
    """Real steps interleaved with generated-batch steps at the configured ratio."""
    gan_hash = parameter_hash(generator)
    extractor_hash = parameter_hash(extractor)
    accuracy = _train_classifier(train_subset, test_set, config, generator, extractor)
    if parameter_hash(generator) != gan_hash or parameter_hash(extractor) != extractor_hash:
        raise RuntimeError("generator/extractor parameters changed during classifier training")
    return accuracy


@dataclass
class GridSearchResult:
    best_per_shots: dict[int, AugmentReport]
    table: list[dict]


def grid_search(
    novel: Dataset,
    generator: Generator,
    extractor: FeatureExtractor,
    shots_list: Sequence[int],
    ratio_list: Sequence[int],
    eta_list: Sequence[float],
    base_config: AugmentConfig,
    test_per_class: int,
) -> GridSearchResult:
    """Exhaustive (shots x ratio x eta) sweep; best augmented run per shots.

    The full table is returned so the per-shots argmax is re-derivable.
    """
    best: dict[int, AugmentReport] = {}
    table: list[dict] = []
    for shots in shots_list:
        train_subset, test_set = few_shot_split(
            novel, shots, base_config.seed, test_per_class
        )
        baseline_cfg = replace(base_config, real_per_class=shots, fake_per_real=0, eta=0.0)
        baseline = train_classifier_baseline(train_subset, test_set, baseline_cfg)
        for ratio in ratio_list:
            for eta in eta_list:
                cfg = replace(
                    base_config, real_per_class=shots, fake_per_real=ratio, eta=eta
                )
                augmented = train_classifier_augmented(
                    train_subset, test_set, generator, extractor, cfg
                )
                table.append(
                    {
                        "shots": shots,
                        "ratio": ratio,
                        "eta": eta,
                        "baseline_accuracy": baseline,
                        "augmented_accuracy": augmented,
                    }
                )
                report = AugmentReport(
                    baseline_accuracy=baseline, augmented_accuracy=augmented, config=cfg
                )
                if shots not in best or augmented > best[shots].augmented_accuracy:
                    best[shots] = report
    return GridSearchResult(best_per_shots=best, table=table)
