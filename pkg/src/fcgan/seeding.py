"""Deterministic seed fan-out.

One root seed is expanded into independent substreams, one per named
component, so that e.g. batch order, latent draws and weight init never
share a stream.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(root_seed: int, *components: object) -> int:
    """Return a stable 63-bit seed for (root_seed, components)."""
    key = "/".join([str(int(root_seed))] + [str(c) for c in components])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def numpy_rng(root_seed: int, *components: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, *components))


def torch_generator(root_seed: int, *components: object) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(root_seed, *components))
    return gen
