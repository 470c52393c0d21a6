"""Run configuration: parsing, validation, defaults and hashing.

Configs are JSON files with nested sections. Unknown keys are rejected,
constraints are validated at construction, and one global seed fans out to
per-component substreams. A few fields are derived rather than read from
the file so they cannot disagree: the networks' resolution equals the data
image size, the conditioning embedding width equals the metric feature
dimension, and every section seed is derived from the global seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_args, get_origin, get_type_hints

from .augmentation import AugmentConfig
from .gan import GanTrainConfig
from .metric import MetricTrainConfig
from .networks import NetworkConfig
from .seeding import derive_seed


@dataclass(frozen=True)
class DataConfig:
    root: str | None = None
    image_size: int = 32
    train_class_count: int | None = None

    def __post_init__(self) -> None:
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.train_class_count is not None and self.train_class_count < 1:
            raise ValueError("train_class_count must be >= 1")


@dataclass(frozen=True)
class SamplerConfig:
    count: int = 16
    std_scale: float = 1.0
    eta: float = 0.0
    z_policy: str = "per-sample"
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.std_scale < 0:
            raise ValueError("std_scale must be >= 0")
        if self.z_policy not in ("per-sample", "fixed", "per-column", "per-cell"):
            raise ValueError(f"unknown z_policy: {self.z_policy!r}")


@dataclass(frozen=True)
class EvalConfig:
    samples_per_class: int = 16
    min_per_class: int = 2
    feature_match_pairs: int = 64
    probes: int = 20
    samples_per_probe: int = 8
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.samples_per_class < 2:
            raise ValueError("samples_per_class must be >= 2")
        if self.min_per_class < 2:
            raise ValueError("min_per_class must be >= 2")


@dataclass(frozen=True)
class AugmentSection:
    real_per_class: int = 1
    fake_per_real: int = 0
    eta: float = 0.0
    classifier_epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    test_per_class: int = 16
    shots: tuple[int, ...] = (1, 2, 5, 10)
    ratios: tuple[int, ...] = (1, 2, 3, 4, 5)
    etas: tuple[float, ...] = (0.0, 1.5, 2.0)

    def __post_init__(self) -> None:
        if self.fake_per_real < 0:
            raise ValueError("fake_per_real must be >= 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")

    def to_augment_config(self, seed: int, device: str) -> AugmentConfig:
        return AugmentConfig(
            real_per_class=self.real_per_class,
            fake_per_real=self.fake_per_real,
            eta=self.eta,
            classifier_epochs=self.classifier_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=seed,
            device=device,
        )


# File-visible keys per section; derived fields are deliberately absent.
_SECTION_SCHEMAS: dict[str, tuple[type, tuple[str, ...]]] = {
    "data": (DataConfig, ("root", "image_size", "train_class_count")),
    "metric": (
        MetricTrainConfig,
        (
            "feature_dim",
            "sigma",
            "learning_rate",
            "adam_beta1",
            "adam_beta2",
            "cache_refresh_period",
            "epochs",
            "batch_size",
            "blocks_per_stage",
            "augment",
        ),
    ),
    "networks": (
        NetworkConfig,
        ("latent_dim", "base_channels", "residual_blocks", "attention_after", "norm_mode"),
    ),
    "gan": (
        GanTrainConfig,
        (
            "feature_loss_scale",
            "learning_rate",
            "adam_beta1",
            "adam_beta2",
            "batch_size",
            "max_iterations",
            "checkpoint_every",
            "augment",
        ),
    ),
    "sampler": (SamplerConfig, ("count", "std_scale", "eta", "z_policy", "batch_size")),
    "eval": (
        EvalConfig,
        (
            "samples_per_class",
            "min_per_class",
            "feature_match_pairs",
            "probes",
            "samples_per_probe",
            "batch_size",
        ),
    ),
    "augment": (
        AugmentSection,
        (
            "real_per_class",
            "fake_per_real",
            "eta",
            "classifier_epochs",
            "batch_size",
            "learning_rate",
            "test_per_class",
            "shots",
            "ratios",
            "etas",
        ),
    ),
}

_TOP_LEVEL_KEYS = ("seed", "output_dir", "device") + tuple(_SECTION_SCHEMAS)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    device: str = "cpu"
    data: DataConfig = field(default_factory=DataConfig)
    metric: MetricTrainConfig = field(default_factory=MetricTrainConfig)
    networks: NetworkConfig = field(default_factory=NetworkConfig)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    augment: AugmentSection = field(default_factory=AugmentSection)


def _check_type(section: str, key: str, value: Any, annotation: Any) -> Any:
    origin = get_origin(annotation)
    if origin is None and annotation in (int, float, bool, str):
        if annotation is bool:
            if not isinstance(value, bool):
                raise ValueError(f"{section}.{key}: expected bool, got {value!r}")
            return value
        if annotation is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"{section}.{key}: expected int, got {value!r}")
            return value
        if annotation is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"{section}.{key}: expected number, got {value!r}")
            return float(value)
        if not isinstance(value, str):
            raise ValueError(f"{section}.{key}: expected string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{section}.{key}: expected a list, got {value!r}")
        element = get_args(annotation)[0]
        return tuple(_check_type(section, key, v, element) for v in value)
    # optional scalars (X | None)
    args = [a for a in get_args(annotation) if a is not type(None)]
    if args:
        if value is None:
            return None
        return _check_type(section, key, value, args[0])
    return value


def _build_section(name: str, payload: dict[str, Any], overrides: dict[str, Any]) -> Any:
    cls, allowed = _SECTION_SCHEMAS[name]
    unknown = set(payload) - set(allowed)
    if unknown:
        raise ValueError(f"unknown key(s) in section {name!r}: {sorted(unknown)}")
    hints = get_type_hints(cls)
    kwargs = {
        key: _check_type(name, key, value, hints[key]) for key, value in payload.items()
    }
    kwargs.update(overrides)
    return cls(**kwargs)


def config_from_dict(payload: dict[str, Any]) -> RunConfig:
    """Validate a raw mapping into a RunConfig, filling defaults."""
    if not isinstance(payload, dict):
        raise ValueError("config root must be a JSON object")
    unknown = set(payload) - set(_TOP_LEVEL_KEYS)
    if unknown:
        raise ValueError(f"unknown top-level key(s): {sorted(unknown)}")
    seed = payload.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ValueError(f"seed: expected int, got {seed!r}")
    output_dir = payload.get("output_dir", "runs/default")
    if not isinstance(output_dir, str):
        raise ValueError(f"output_dir: expected string, got {output_dir!r}")
    device = payload.get("device", "cpu")
    if not isinstance(device, str):
        raise ValueError(f"device: expected string, got {device!r}")

    sections: dict[str, Any] = {}
    for name in _SECTION_SCHEMAS:
        raw = payload.get(name, {})
        if not isinstance(raw, dict):
            raise ValueError(f"section {name!r} must be a JSON object")
        sections[name] = dict(raw)

    data = _build_section("data", sections["data"], {})
    metric = _build_section(
        "metric",
        sections["metric"],
        {
            "image_size": data.image_size,
            "seed": derive_seed(seed, "metric"),
            "device": device,
        },
    )
    networks = _build_section(
        "networks",
        sections["networks"],
        {"resolution": data.image_size, "embedding_dim": metric.feature_dim},
    )
    gan = _build_section(
        "gan",
        sections["gan"],
        {"seed": derive_seed(seed, "gan"), "device": device},
    )
    sampler = _build_section("sampler", sections["sampler"], {})
    eval_cfg = _build_section("eval", sections["eval"], {})
    augment = _build_section("augment", sections["augment"], {})
    return RunConfig(
        seed=seed,
        output_dir=output_dir,
        device=device,
        data=data,
        metric=metric,
        networks=networks,
        gan=gan,
        sampler=sampler,
        eval=eval_cfg,
        augment=augment,
    )


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    """File-schema mapping (derived fields omitted); inverse of parsing."""
    out: dict[str, Any] = {
        "seed": config.seed,
        "output_dir": config.output_dir,
        "device": config.device,
    }
    for name, (cls, allowed) in _SECTION_SCHEMAS.items():
        section = getattr(config, name)
        out[name] = {
            key: _jsonable(getattr(section, key)) for key in allowed
        }
    return out


def _jsonable(value: Any) -> Any:
    if isinstance(value, tuple):
        return list(value)
    return value


def parse_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON config file; empty files mean all defaults."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8").strip()
    if not text:
        return config_from_dict({})
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


def save_config(config: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(config), indent=2) + "\n", encoding="utf-8")
    return path


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
