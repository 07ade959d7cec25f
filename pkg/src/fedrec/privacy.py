"""Clip-and-noise for outgoing model updates.

Each per-item delta vector is L2-clipped to ``clip_norm`` and perturbed with
independent Gaussian noise of standard deviation ``noise_sigma * clip_norm``.
The same mechanism can optionally be re-applied by the aggregator to the
per-item means (``aggregator_side``).  No (epsilon, delta) accounting is
performed; sigma is configured directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .factors import LocalDelta


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float = 1.0  # L2 bound per item-delta vector; may be math.inf
    noise_sigma: float = 0.0  # std multiplier; noise std is noise_sigma * clip_norm
    rng_seed: int = 0
    aggregator_side: bool = False

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.noise_sigma > 0 and not math.isfinite(self.clip_norm):
            raise ValueError("clip_norm must be finite when noise_sigma > 0")


def clip_and_noise_vectors(
    vectors: dict[int, np.ndarray],
    cfg: DpConfig,
    rng: np.random.Generator | None = None,
) -> dict[int, np.ndarray]:
    """Clip and noise a map of item id -> delta vector; key set is preserved.

    Items are processed in ascending id order so a fixed seed yields a fixed
    result.  The caller may pass its own generator (must not be shared across
    threads); by default a fresh one is seeded from ``cfg.rng_seed``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    out: dict[int, np.ndarray] = {}
    scale = cfg.noise_sigma * cfg.clip_norm
    for item_id in sorted(vectors):
        v = np.asarray(vectors[item_id], dtype=np.float64)
        norm = float(np.linalg.norm(v))
        clipped = v * min(1.0, cfg.clip_norm / norm) if norm > 0 else v.copy()
        if cfg.noise_sigma > 0:
            clipped = clipped + rng.normal(0.0, scale, size=v.shape)
        out[item_id] = clipped
    return out


def clip_and_noise(delta: LocalDelta, cfg: DpConfig, rng: np.random.Generator | None = None) -> LocalDelta:
    """Privatize a LocalDelta before it leaves the client.

    Returns a new LocalDelta; the user-factor snapshot is dropped (it never
    leaves the client, so the outbound artifact must not carry it).
    """
    return LocalDelta(item_deltas=clip_and_noise_vectors(delta.item_deltas, cfg, rng), user_snapshot=None)
