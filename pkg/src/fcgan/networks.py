"""Generator and discriminator architectures.

Residual up/down blocks change scale by a factor of two (nearest-neighbour
upsampling / average pooling), a single self-attention block sits at the
quarter-resolution stage of each network, and spectral normalization is
applied to every weight except those inside the conditional-normalization
projections. The generator consumes a latent vector through one linear map
only; the conditioning embedding enters exclusively through conditional
normalization, never concatenated with the latent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .condnorm import FeatureCondNorm, PlainNorm


# ---------------------------------------------------------------------------
# spectral normalization


def spectral_normalize(
    weight: torch.Tensor, iterations: int = 50, eps: float = 1e-12
) -> torch.Tensor:
    """Divide a weight by its power-iteration largest singular value.

    The weight is flattened to 2-D over its leading dimension. A zero
    weight is returned unchanged.
    """
    w = weight.reshape(weight.shape[0], -1)
    if w.abs().max() == 0:
        return weight
    # deterministic, generically non-orthogonal start vector
    u = w.sum(dim=1)
    if u.norm() < eps:
        u = torch.linspace(1.0, 2.0, w.shape[0], dtype=w.dtype, device=w.device)
    u = u / (u.norm() + eps)
    for _ in range(max(int(iterations), 1)):
        v = w.t() @ u
        v = v / (v.norm() + eps)
        u = w @ v
        u = u / (u.norm() + eps)
    sigma = torch.dot(u, w @ v)
    return weight / sigma


class SpectralNorm(nn.Module):
    """Wrap a module, normalizing its weight by power iteration per forward.

    The persistent left singular vector estimate is refined only in
    training mode, so frozen/eval modules are deterministic across calls.
    """

    def __init__(self, module: nn.Module, power_iterations: int = 1, eps: float = 1e-12):
        super().__init__()
        self.module = module
        self.power_iterations = power_iterations
        self.eps = eps
        weight = module._parameters["weight"]
        height = weight.shape[0]
        self.weight_orig = nn.Parameter(weight.data.clone())
        del module._parameters["weight"]
        with torch.no_grad():
            w = self.weight_orig.reshape(height, -1)
            u = torch.randn(height, dtype=w.dtype)
            self.register_buffer("weight_u", u / (u.norm() + eps))

    def _normalized_weight(self) -> torch.Tensor:
        w = self.weight_orig.reshape(self.weight_orig.shape[0], -1)
        u = self.weight_u
        if self.training:
            with torch.no_grad():
                for _ in range(self.power_iterations):
                    v = w.t() @ u
                    v = v / (v.norm() + self.eps)
                    u = w @ v
                    u = u / (u.norm() + self.eps)
                self.weight_u.copy_(u)
        with torch.no_grad():
            v = w.t() @ u
            v = v / (v.norm() + self.eps)
        sigma = torch.dot(u, w @ v)
        if float(sigma.detach().abs()) < self.eps:  # zero-weight guard
            return self.weight_orig
        return self.weight_orig / sigma

    def forward(self, *args, **kwargs):
        setattr(self.module, "weight", self._normalized_weight())
        return self.module(*args, **kwargs)


def _orthogonal(module: nn.Module) -> nn.Module:
    nn.init.orthogonal_(module.weight)
    if module.bias is not None:
        nn.init.zeros_(module.bias)
    return module


def sn_conv(in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0) -> SpectralNorm:
    return SpectralNorm(_orthogonal(nn.Conv2d(in_ch, out_ch, kernel, stride, padding)))


def sn_linear(in_features: int, out_features: int) -> SpectralNorm:
    return SpectralNorm(_orthogonal(nn.Linear(in_features, out_features)))


# ---------------------------------------------------------------------------
# building blocks


class SelfAttention(nn.Module):
    """Single-head spatial self-attention with a zero-initialized scale.

    At initialization the block is exactly the identity; the learned scale
    gates the attention branch in.
    """

    def __init__(self, channels: int):
        super().__init__()
        inner = max(channels // 8, 1)
        self.query = sn_conv(channels, inner, 1)
        self.key = sn_conv(channels, inner, 1)
        self.value = sn_conv(channels, channels, 1)
        self.scale = nn.Parameter(torch.zeros(1))

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        n, _, h, w = x.shape
        q = self.query(x).reshape(n, -1, h * w)
        k = self.key(x).reshape(n, -1, h * w)
        return torch.softmax(torch.bmm(q.transpose(1, 2), k), dim=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        attn = self.attention_weights(x)  # (n, hw_query, hw_key)
        v = self.value(x).reshape(n, c, h * w)
        out = torch.bmm(v, attn.transpose(1, 2)).reshape(n, c, h, w)
        return x + self.scale * out


class ResBlockUp(nn.Module):
    """Residual block doubling spatial scale via nearest-neighbour upsampling."""

    def __init__(self, in_ch: int, out_ch: int, embed_dim: int, norm_mode: str = "batch"):
        super().__init__()
        self.in_ch = in_ch
        self.norm1 = FeatureCondNorm(in_ch, embed_dim, norm_mode)
        self.conv1 = sn_conv(in_ch, out_ch, 3, padding=1)
        self.norm2 = FeatureCondNorm(out_ch, embed_dim, norm_mode)
        self.conv2 = sn_conv(out_ch, out_ch, 3, padding=1)
        self.skip = sn_conv(in_ch, out_ch, 1) if in_ch != out_ch else None

    def forward(self, x: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {x.shape[1]}")
        h = torch.relu(self.norm1(x, embedding))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.conv1(h)
        h = torch.relu(self.norm2(h, embedding))
        h = self.conv2(h)
        shortcut = F.interpolate(x, scale_factor=2, mode="nearest")
        if self.skip is not None:
            shortcut = self.skip(shortcut)
        return h + shortcut


class ResBlockDown(nn.Module):
    """Residual block halving spatial scale via average pooling (no norm)."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.in_ch = in_ch
        self.conv1 = sn_conv(in_ch, out_ch, 3, padding=1)
        self.conv2 = sn_conv(out_ch, out_ch, 3, padding=1)
        self.skip = sn_conv(in_ch, out_ch, 1) if in_ch != out_ch else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {x.shape[1]}")
        h = self.conv1(torch.relu(x))
        h = self.conv2(torch.relu(h))
        h = F.avg_pool2d(h, 2)
        shortcut = x if self.skip is None else self.skip(x)
        shortcut = F.avg_pool2d(shortcut, 2)
        return h + shortcut


# ---------------------------------------------------------------------------
# configuration and channel schedule


@dataclass(frozen=True)
class NetworkConfig:
    """Shared generator/discriminator shape configuration.

    `resolution` must equal 4 * 2**residual_blocks. When `residual_blocks`
    or the attention positions are None they are derived from the
    resolution (attention sits after the block whose output is a quarter
    of the final/input resolution).
    """

    latent_dim: int = 128
    base_channels: int = 32
    resolution: int = 32
    embedding_dim: int = 512
    residual_blocks: int | None = None
    attention_after: int | None = None
    norm_mode: str = "batch"

    def __post_init__(self) -> None:
        if self.latent_dim < 1 or self.base_channels < 1 or self.embedding_dim < 1:
            raise ValueError("latent_dim, base_channels, embedding_dim must be >= 1")
        if self.norm_mode not in ("batch", "instance"):
            raise ValueError(f"unknown normalization mode: {self.norm_mode!r}")
        blocks = self.blocks
        if blocks < 1 or 4 * 2**blocks != self.resolution:
            raise ValueError(
                f"resolution {self.resolution} incompatible with {blocks} "
                "residual blocks (need resolution = 4 * 2**blocks, blocks >= 1)"
            )
        if self.attention_after is not None and not (
            1 <= self.attention_after <= blocks
        ):
            raise ValueError("attention_after must name one of the residual blocks")

    @property
    def blocks(self) -> int:
        if self.residual_blocks is not None:
            return self.residual_blocks
        ratio = self.resolution / 4
        blocks = int(round(math.log2(ratio))) if ratio >= 2 else 0
        return blocks

    @property
    def generator_attention_after(self) -> int:
        if self.attention_after is not None:
            return self.attention_after
        return max(self.blocks - 2, 1)

    @property
    def discriminator_attention_after(self) -> int:
        if self.attention_after is not None:
            return self.attention_after
        return min(2, self.blocks)


def channel_multipliers(blocks: int, cap: int = 16) -> list[int]:
    """Output-channel multipliers per up-block, first to last.

    Built from the output side: 1, 2, 4, 8, 8, 16, 16, ... (doubling with a
    repeat at 8, then capped), then reversed.
    """
    if blocks < 1:
        raise ValueError("need at least one residual block")
    rev = [1]
    while len(rev) < blocks:
        m = rev[-1]
        if m < 8:
            rev.append(m * 2)
        elif m == 8 and rev.count(8) < 2:
            rev.append(8)
        else:
            rev.append(min(m * 2, cap) if m < cap else cap)
    return rev[::-1]


# ---------------------------------------------------------------------------
# networks


class Generator(nn.Module):
    """Latent + embedding -> image in [-1, 1]."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        base = config.base_channels
        mults = channel_multipliers(config.blocks)
        out_chs = [m * base for m in mults]
        in_chs = [out_chs[0]] + out_chs[:-1]

        self.initial_channels = out_chs[0]
        self.input_linear = sn_linear(config.latent_dim, out_chs[0] * 4 * 4)
        self.blocks = nn.ModuleList(
            ResBlockUp(i, o, config.embedding_dim, config.norm_mode)
            for i, o in zip(in_chs, out_chs)
        )
        self.attention_after = config.generator_attention_after
        self.attention = SelfAttention(out_chs[self.attention_after - 1])
        self.head_norm = PlainNorm(out_chs[-1], config.norm_mode)
        self.head_conv = sn_conv(out_chs[-1], 3, 3, padding=1)

    def forward(self, z: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.config.latent_dim:
            raise ValueError(
                f"expected latent of shape (n, {self.config.latent_dim}), got {tuple(z.shape)}"
            )
        h = self.input_linear(z).reshape(z.shape[0], self.initial_channels, 4, 4)
        for i, block in enumerate(self.blocks, start=1):
            h = block(h, embedding)
            if i == self.attention_after:
                h = self.attention(h)
        h = torch.relu(self.head_norm(h))
        return torch.tanh(self.head_conv(h))


class Discriminator(nn.Module):
    """(image, embedding) -> one realness score per pair."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        base = config.base_channels
        g_mults = channel_multipliers(config.blocks)
        g_in = [g_mults[0]] + g_mults[:-1]
        out_chs = [m * base for m in reversed(g_in)]
        in_chs = [base] + out_chs[:-1]

        self.stem = sn_conv(3, base, 3, padding=1)
        self.blocks = nn.ModuleList(
            ResBlockDown(i, o) for i, o in zip(in_chs, out_chs)
        )
        self.attention_after = config.discriminator_attention_after
        self.attention = SelfAttention(out_chs[self.attention_after - 1])
        self.head_norm = FeatureCondNorm(
            out_chs[-1], config.embedding_dim, config.norm_mode
        )
        self.head_conv = sn_conv(out_chs[-1], 1, 4)

    def forward(self, x: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        res = self.config.resolution
        if x.dim() != 4 or x.shape[1:] != (3, res, res):
            raise ValueError(
                f"expected images of shape (n, 3, {res}, {res}), got {tuple(x.shape)}"
            )
        h = self.stem(x)
        for i, block in enumerate(self.blocks, start=1):
            h = block(h)
            if i == self.attention_after:
                h = self.attention(h)
        h = torch.relu(self.head_norm(h, embedding))
        return self.head_conv(h).reshape(x.shape[0])


def build_generator(config: NetworkConfig) -> Generator:
    return Generator(config)


def build_discriminator(config: NetworkConfig) -> Discriminator:
    return Discriminator(config)


def parameter_manifest(module: nn.Module) -> list[tuple[str, tuple[int, ...]]]:
    """Sorted (name, shape) inventory of all parameters."""
    return sorted((name, tuple(p.shape)) for name, p in module.named_parameters())


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
