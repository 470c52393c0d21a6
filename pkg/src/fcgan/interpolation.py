"""Latent/feature interpolation grids and attribute-direction traversals.

Interpolation is linear in both spaces (recorded in the grid metadata).
Attribute directions are unit vectors from the positive-group mean to the
negative-group mean, computed per space from externally labeled samples;
this module never trains the labeling predictor.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .networks import Generator
from .sampling import generate_images


@dataclass(frozen=True)
class InterpolationGrid:
    latent_start: np.ndarray
    latent_end: np.ndarray
    feature_start: np.ndarray
    feature_end: np.ndarray
    steps: int
    images: np.ndarray  # (steps, steps, h, w, 3); [i][j] = G(z(s_i), f(t_j))
    method: str = "linear"


@dataclass(frozen=True)
class AttributeDirection:
    name: str
    latent_direction: np.ndarray | None
    feature_direction: np.ndarray | None
    positive_latent_mean: np.ndarray | None
    negative_latent_mean: np.ndarray | None
    positive_feature_mean: np.ndarray | None
    negative_feature_mean: np.ndarray | None
    degenerate: bool = False
    # sign convention: direction points from the positive group mean
    # towards the negative group mean
    sign_convention: str = "positive-to-negative"


def interpolate_2d(
    generator: Generator,
    z_a: np.ndarray,
    z_b: np.ndarray,
    f_a: np.ndarray,
    f_b: np.ndarray,
    steps: int = 5,
    device: str = "cpu",
) -> InterpolationGrid:
    """Grid of generations over independent linear paths in z and f.

    grid[i][j] = G((1 - s_i) z_a + s_i z_b, (1 - t_j) f_a + t_j f_b) with
    s, t evenly spaced on [0, 1]. Cells are generated one at a time so the
    corners equal stand-alone endpoint generations exactly.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    z_a = np.asarray(z_a, dtype=np.float32).reshape(-1)
    z_b = np.asarray(z_b, dtype=np.float32).reshape(-1)
    f_a = np.asarray(f_a, dtype=np.float32).reshape(-1)
    f_b = np.asarray(f_b, dtype=np.float32).reshape(-1)
    fractions = [i / (steps - 1) for i in range(steps)]
    rows = []
    for s in fractions:
        z = ((1.0 - s) * z_a + s * z_b).astype(np.float32)
        row = []
        for t in fractions:
            f = ((1.0 - t) * f_a + t * f_b).astype(np.float32)
            row.append(generate_images(generator, f[None], z[None], batch_size=1, device=device)[0])
        rows.append(np.stack(row))
    return InterpolationGrid(
        latent_start=z_a,
        latent_end=z_b,
        feature_start=f_a,
        feature_end=f_b,
        steps=steps,
        images=np.stack(rows),
    )


def _unit_or_none(positive: np.ndarray, negative: np.ndarray) -> np.ndarray | None:
    diff = negative - positive
    norm = float(np.linalg.norm(diff))
    if norm == 0.0:
        return None
    return diff / norm


def find_attribute_directions(
    labeled_samples: Sequence[tuple[np.ndarray, np.ndarray, Mapping[str, int]]],
) -> dict[str, AttributeDirection]:
    """Per-attribute unit vectors between label-group means, in both spaces.

    `labeled_samples` holds (latent, feature, {attribute: +1/-1}) triples,
    typically generated samples labeled by an external predictor. Attributes
    with only one polarity (or identical group means) come back flagged
    degenerate and cannot be traversed.
    """
    attributes: dict[str, dict[int, list[tuple[np.ndarray, np.ndarray]]]] = {}
    for z, f, labels in labeled_samples:
        for name, value in labels.items():
            if value not in (-1, 1):
                raise ValueError(f"attribute {name!r} labels must be +1 or -1, got {value}")
            attributes.setdefault(name, {}).setdefault(value, []).append(
                (np.asarray(z, dtype=np.float64), np.asarray(f, dtype=np.float64))
            )

    directions: dict[str, AttributeDirection] = {}
    for name, groups in attributes.items():
        if 1 not in groups or -1 not in groups:
            warnings.warn(f"attribute {name!r} is single-sided; direction degenerate", stacklevel=2)
            directions[name] = AttributeDirection(
                name=name,
                latent_direction=None,
                feature_direction=None,
                positive_latent_mean=None,
                negative_latent_mean=None,
                positive_feature_mean=None,
                negative_feature_mean=None,
                degenerate=True,
            )
            continue
        pos_z = np.mean([z for z, _ in groups[1]], axis=0)
        neg_z = np.mean([z for z, _ in groups[-1]], axis=0)
        pos_f = np.mean([f for _, f in groups[1]], axis=0)
        neg_f = np.mean([f for _, f in groups[-1]], axis=0)
        z_dir = _unit_or_none(pos_z, neg_z)
        f_dir = _unit_or_none(pos_f, neg_f)
        directions[name] = AttributeDirection(
            name=name,
            latent_direction=z_dir,
            feature_direction=f_dir,
            positive_latent_mean=pos_z,
            negative_latent_mean=neg_z,
            positive_feature_mean=pos_f,
            negative_feature_mean=neg_f,
            degenerate=z_dir is None and f_dir is None,
        )
    return directions


def traverse(
    generator: Generator,
    z: np.ndarray,
    f: np.ndarray,
    direction: AttributeDirection,
    space: str = "feature",
    scales: Sequence[float] = (-2.0, -1.0, 0.0, 1.0, 2.0),
    device: str = "cpu",
) -> np.ndarray:
    """One image per scale, shifting only the chosen space along the direction."""
    if direction.degenerate:
        raise ValueError(f"attribute {direction.name!r} direction is degenerate")
    if space not in ("latent", "feature"):
        raise ValueError(f"space must be 'latent' or 'feature', got {space!r}")
    vector = direction.latent_direction if space == "latent" else direction.feature_direction
    if vector is None:
        raise ValueError(f"attribute {direction.name!r} has no {space} direction")
    z = np.asarray(z, dtype=np.float32).reshape(-1)
    f = np.asarray(f, dtype=np.float32).reshape(-1)
    images = []
    for scale in scales:
        z_s, f_s = z, f
        if space == "latent":
            z_s = (z + scale * vector).astype(np.float32)
        else:
            f_s = (f + scale * vector).astype(np.float32)
        images.append(
            generate_images(generator, f_s[None], z_s[None], batch_size=1, device=device)[0]
        )
    return np.stack(images)


def load_attribute_labels(path: str | Path) -> dict[str, dict[str, int]]:
    """Read per-sample attribute labels: JSONL of {id, attributes: {name: +-1}}."""
    labels: dict[str, dict[str, int]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            labels[str(record["id"])] = {
                str(k): int(v) for k, v in record["attributes"].items()
            }
    return labels
