"""Image dataset loading, class splitting and batch production.

Images live in memory as float32 arrays of shape (n, size, size, 3) scaled
to [-1, 1]. Item order is deterministic given identical directory contents,
so splits and batches are reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")


@dataclass(frozen=True)
class Dataset:
    """Immutable image collection with per-class index.

    images: (n, size, size, 3) float32 in [-1, 1]
    labels: class identifier per item
    ids: stable per-item identifier (e.g. "class/filename")
    """

    images: np.ndarray
    labels: tuple[str, ...]
    ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.images.ndim != 4 or self.images.shape[3] != 3:
            raise ValueError(f"images must be (n, h, w, 3), got {self.images.shape}")
        n = self.images.shape[0]
        if len(self.labels) != n or len(self.ids) != n:
            raise ValueError("labels/ids length must match image count")
        if n and (self.images.min() < -1.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [-1, 1]")
        index: dict[str, list[int]] = {}
        for i, label in enumerate(self.labels):
            index.setdefault(label, []).append(i)
        object.__setattr__(
            self, "_class_index", {c: tuple(ix) for c, ix in index.items()}
        )

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def class_index(self) -> Mapping[str, tuple[int, ...]]:
        return dict(self._class_index)  # type: ignore[attr-defined]

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(sorted(self._class_index))  # type: ignore[attr-defined]

    @property
    def image_size(self) -> int:
        return int(self.images.shape[1])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            images=self.images[idx],
            labels=tuple(self.labels[i] for i in idx),
            ids=tuple(self.ids[i] for i in idx),
        )


@dataclass(frozen=True)
class ClassSplit:
    train_classes: tuple[str, ...]
    novel_classes: tuple[str, ...]

    def __post_init__(self) -> None:
        overlap = set(self.train_classes) & set(self.novel_classes)
        if overlap:
            raise ValueError(f"classes in both partitions: {sorted(overlap)}")


@dataclass(frozen=True)
class Batch:
    images: np.ndarray
    labels: tuple[str, ...]
    indices: np.ndarray  # positions of the items in the source dataset

    def __len__(self) -> int:
        return self.images.shape[0]


def load_dataset(root: str | Path, image_size: int) -> Dataset:
    """Load a directory-per-class image tree, resized and scaled to [-1, 1].

    Class directories and files are visited in sorted order, so the item
    ordering only depends on the directory contents.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"no class directories under {root}")

    images: list[np.ndarray] = []
    labels: list[str] = []
    ids: list[str] = []
    for class_dir in class_dirs:
        files = sorted(
            p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise ValueError(f"class directory has no images: {class_dir}")
        for path in files:
            try:
                with Image.open(path) as img:
                    rgb = img.convert("RGB").resize(
                        (image_size, image_size), Image.BILINEAR
                    )
            except Exception as exc:
                raise ValueError(f"unreadable image {path}: {exc}") from exc
            arr = np.asarray(rgb, dtype=np.float32) / 127.5 - 1.0
            images.append(arr)
            labels.append(class_dir.name)
            ids.append(f"{class_dir.name}/{path.name}")
    return Dataset(
        images=np.stack(images), labels=tuple(labels), ids=tuple(ids)
    )


def split_classes(
    dataset: Dataset, train_class_count: int, ordering: str = "lexicographic"
) -> tuple[Dataset, Dataset]:
    """Partition a dataset into (train, novel) by class.

    The first `train_class_count` classes under lexicographic name order go
    to train, the remainder to novel.
    """
    if ordering != "lexicographic":
        raise ValueError(f"unsupported class ordering: {ordering!r}")
    classes = dataset.classes
    if not 0 < train_class_count < len(classes):
        raise ValueError(
            f"train_class_count must be in (0, {len(classes)}), got {train_class_count}"
        )
    train_classes = set(classes[:train_class_count])
    train_idx = [i for i, l in enumerate(dataset.labels) if l in train_classes]
    novel_idx = [i for i, l in enumerate(dataset.labels) if l not in train_classes]
    return dataset.subset(train_idx), dataset.subset(novel_idx)


def class_split_of(train: Dataset, novel: Dataset) -> ClassSplit:
    return ClassSplit(train_classes=train.classes, novel_classes=novel.classes)


def split_manifest_text(split: ClassSplit) -> str:
    lines = [f"{c}\ttrain" for c in split.train_classes]
    lines += [f"{c}\tnovel" for c in split.novel_classes]
    return "\n".join(sorted(lines)) + "\n"


def write_split_manifest(split: ClassSplit, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(split_manifest_text(split), encoding="utf-8")
    return path


def split_manifest_hash(split: ClassSplit) -> str:
    return hashlib.sha256(split_manifest_text(split).encode("utf-8")).hexdigest()


def make_batch(
    dataset: Dataset,
    batch_size: int,
    seed: int,
    augment: bool = False,
    replace: bool = False,
) -> Batch:
    """Draw a reproducible batch; horizontal flips only when `augment`."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > len(dataset) and not replace:
        raise ValueError(
            f"batch_size {batch_size} exceeds dataset size {len(dataset)} "
            "without replacement"
        )
    rng = np.random.default_rng(seed)
    indices = rng.choice(len(dataset), size=batch_size, replace=replace)
    images = dataset.images[indices].copy()
    if augment:
        flips = rng.random(batch_size) < 0.5
        images[flips] = images[flips, :, ::-1, :]
    labels = tuple(dataset.labels[i] for i in indices)
    return Batch(images=images, labels=labels, indices=indices)


def to_uint8_images(images: np.ndarray) -> np.ndarray:
    """De-normalize [-1, 1] float images to 8-bit, inverse of loading."""
    scaled = (np.asarray(images, dtype=np.float64) + 1.0) / 2.0 * 255.0
    return np.clip(np.round(scaled), 0, 255).astype(np.uint8)


def as_torch_batch(images: np.ndarray, device: str = "cpu") -> torch.Tensor:
    """(n, h, w, 3) float arrays -> (n, 3, h, w) float32 tensor."""
    tensor = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    return tensor.permute(0, 3, 1, 2).contiguous().to(device)


def as_numpy_images(tensor: torch.Tensor) -> np.ndarray:
    """(n, 3, h, w) tensor -> (n, h, w, 3) float32 array."""
    return tensor.detach().cpu().permute(0, 2, 3, 1).contiguous().numpy()
