"""Deterministic name-keyed unit vectors standing in for learned encoders.

Both stub encoders (mask-side and text-side) derive class vectors from the
same function, so a mask dominated by part "part_a" scores highest against
the prompt "part_a" without any model weights. Arbitrary unknown strings map
to reproducible pseudo-random unit vectors through the same hash path.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Salt chosen so the standard fixture part names stay well separated
# (pairwise |cosine| < 0.2 at dim 8); see tests for the frozen check.
_SALT = "ov4d-stub-v638"


def _seed_from(text: str) -> int:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def class_vector(name: str, dim: int) -> np.ndarray:
    """Unit vector deterministically derived from a class name."""
    rng = np.random.default_rng(_seed_from(f"{_SALT}|class|{name}"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def cell_vector(name: str, t: int, v: int, dim: int, noise_scale: float = 0.03) -> np.ndarray:
    """Per-cell vector near the class vector, perturbed deterministically by (t, v)."""
    center = class_vector(name, dim)
    if noise_scale <= 0.0:
        return center
    rng = np.random.default_rng(_seed_from(f"{_SALT}|cell|{name}|{t}|{v}"))
    noise = rng.standard_normal(dim)
    noise /= np.linalg.norm(noise)
    out = center + noise_scale * noise
    return out / np.linalg.norm(out)


def content_vector(token: str, dim: int) -> np.ndarray:
    """Fallback unit vector for content without a part identity (e.g. empty masks)."""
    rng = np.random.default_rng(_seed_from(f"{_SALT}|content|{token}"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)
