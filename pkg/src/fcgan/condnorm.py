"""Conditional normalization layers.

Activations are standardized (batch or instance statistics) and then
rescaled with per-channel gain/bias produced from a conditioning input:
a continuous embedding for `FeatureCondNorm`, a learned per-class
embedding for `ClassCondNorm`. The gain head starts near identity
(gain ~ 1, bias ~ 0) so an untrained layer is close to plain
normalization.
"""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn


def _standardize(x: torch.Tensor, mode: str, eps: float) -> torch.Tensor:
    if mode == "batch":
        mean = x.mean(dim=(0, 2, 3), keepdim=True)
        var = x.var(dim=(0, 2, 3), unbiased=False, keepdim=True)
    elif mode == "instance":
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
    else:
        raise ValueError(f"unknown normalization mode: {mode!r}")
    return (x - mean) / torch.sqrt(var + eps)


class _ConditionalAffine(nn.Module):
    """Two-layer projection from an embedding to per-channel (gain, bias)."""

    def __init__(self, embed_dim: int, num_channels: int):
        super().__init__()
        self.num_channels = num_channels
        self.hidden = nn.Linear(embed_dim, embed_dim)
        self.out = nn.Linear(embed_dim, 2 * num_channels)
        nn.init.orthogonal_(self.hidden.weight)
        nn.init.zeros_(self.hidden.bias)
        # small weight + identity bias: gain ~ 1, bias ~ 0 at init while
        # keeping a gradient path to every parameter and the embedding
        nn.init.normal_(self.out.weight, std=0.02)
        with torch.no_grad():
            self.out.bias[: num_channels] = 1.0
            self.out.bias[num_channels:] = 0.0

    def forward(self, embedding: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = torch.relu(self.hidden(embedding))
        out = self.out(h)
        return out[:, : self.num_channels], out[:, self.num_channels :]


class FeatureCondNorm(nn.Module):
    """Normalization with gain/bias computed from a conditioning embedding."""

    def __init__(
        self,
        num_channels: int,
        embed_dim: int,
        mode: str = "batch",
        eps: float = 1e-5,
    ):
        super().__init__()
        if mode not in ("batch", "instance"):
            raise ValueError(f"unknown normalization mode: {mode!r}")
        self.num_channels = num_channels
        self.embed_dim = embed_dim
        self.mode = mode
        self.eps = eps
        self.affine = _ConditionalAffine(embed_dim, num_channels)

    def gains(self, embedding: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-channel (gain, bias) for an (n, embed_dim) embedding batch."""
        if embedding.dim() == 1:
            embedding = embedding.unsqueeze(0)
        return self.affine(embedding)

    def forward(self, x: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.num_channels:
            raise ValueError(
                f"expected (n, {self.num_channels}, h, w) activations, got {tuple(x.shape)}"
            )
        if not torch.isfinite(x).all():
            raise ValueError("non-finite activations")
        if embedding.dim() == 1:
            embedding = embedding.unsqueeze(0).expand(x.shape[0], -1)
        if embedding.shape[0] != x.shape[0]:
            raise ValueError("need one embedding per batch item (or a shared one)")
        gain, bias = self.affine(embedding)
        normalized = _standardize(x, self.mode, self.eps)
        return gain[:, :, None, None] * normalized + bias[:, :, None, None]


class ClassCondNorm(nn.Module):
    """Closed-set variant: gain/bias from a learned per-class embedding.

    Lookup is defined only for the class identifiers given at construction;
    anything else raises.
    """

    def __init__(
        self,
        num_channels: int,
        class_ids: Sequence[str],
        embed_dim: int = 64,
        mode: str = "batch",
        eps: float = 1e-5,
    ):
        super().__init__()
        if mode not in ("batch", "instance"):
            raise ValueError(f"unknown normalization mode: {mode!r}")
        if not class_ids:
            raise ValueError("need at least one class identifier")
        self.num_channels = num_channels
        self.mode = mode
        self.eps = eps
        self.class_to_index = {c: i for i, c in enumerate(class_ids)}
        self.embeddings = nn.Embedding(len(self.class_to_index), embed_dim)
        nn.init.normal_(self.embeddings.weight, std=1.0)
        self.affine = _ConditionalAffine(embed_dim, num_channels)

    def class_embedding(self, class_ids: Sequence[str]) -> torch.Tensor:
        try:
            idx = [self.class_to_index[c] for c in class_ids]
        except KeyError as exc:
            raise KeyError(
                f"unknown class {exc.args[0]!r}: class-conditional lookup is "
                "defined only for training classes"
            ) from None
        device = self.embeddings.weight.device
        return self.embeddings(torch.tensor(idx, dtype=torch.long, device=device))

    def gains(self, class_ids: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        return self.affine(self.class_embedding(class_ids))

    def forward(self, x: torch.Tensor, class_id: str | Sequence[str]) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.num_channels:
            raise ValueError(
                f"expected (n, {self.num_channels}, h, w) activations, got {tuple(x.shape)}"
            )
        ids = [class_id] * x.shape[0] if isinstance(class_id, str) else list(class_id)
        if len(ids) != x.shape[0]:
            raise ValueError("need one class id per batch item (or a shared one)")
        gain, bias = self.gains(ids)
        normalized = _standardize(x, self.mode, self.eps)
        return gain[:, :, None, None] * normalized + bias[:, :, None, None]


class PlainNorm(nn.Module):
    """Unconditional normalization with learned per-channel affine."""

    def __init__(self, num_channels: int, mode: str = "batch", eps: float = 1e-5):
        super().__init__()
        if mode not in ("batch", "instance"):
            raise ValueError(f"unknown normalization mode: {mode!r}")
        self.num_channels = num_channels
        self.mode = mode
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(num_channels))
        self.bias = nn.Parameter(torch.zeros(num_channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        normalized = _standardize(x, self.mode, self.eps)
        return self.weight[None, :, None, None] * normalized + self.bias[
            None, :, None, None
        ]
