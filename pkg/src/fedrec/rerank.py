"""Greedy diversity re-ranking over title embeddings.

The re-ranker keeps the top-relevance item first, then repeatedly picks the
candidate maximizing

    lambda * relevance_norm(i) - (1 - lambda) * max_{j selected} cos(e_i, e_j)

Relevance is min-max normalized over the candidate pool by default so the
mixing weight stays meaningful even when predicted scores are unbounded
(`normalize_relevance=False` restores raw-score mixing).

Embeddings come from an external JSON file when available; otherwise
:func:`embed_fallback` provides a deterministic hashed character-trigram
stand-in so the system has no ML-runtime dependency.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .catalog import CatalogItem

FALLBACK_DIM = 256
DEFAULT_POOL_SIZE = 50  # re-ranking candidate pool: top 50 by relevance


class MissingEmbeddingError(KeyError):
    """An item in the candidate list has no embedding vector."""


@dataclass(frozen=True)
class MmrConfig:
    lambda_param: float = 0.3  # relevance weight; 1 - lambda_param penalizes similarity
    list_size: int = 5
    normalize_relevance: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lambda_param <= 1.0:
            raise ValueError("lambda_param must be in [0, 1]")
        if self.list_size < 1:
            raise ValueError("list_size must be >= 1")


def embed_fallback(title: str, dim: int = FALLBACK_DIM) -> np.ndarray:
    """Deterministic hashed character-trigram embedding, L2-normalized.

    The lowercased title is padded with '#' boundary markers so near-identical
    short titles still share trigrams.  A title yielding no trigram mass maps
    to the first basis vector.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    vec = np.zeros(dim, dtype=np.float64)
    padded = "#" + title.lower() + "#"
    for i in range(len(padded) - 2):
        bucket = zlib.crc32(padded[i : i + 3].encode("utf-8")) % dim
        vec[bucket] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec[0] = 1.0
        return vec
    return vec / norm


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero vectors and length mismatches are errors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"vector length mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


class EmbeddingTable:
    """Immutable item_id -> unit vector map of a fixed dimension."""

    def __init__(self, dim: int, vectors: Mapping[int, Sequence[float]]):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self._vectors: dict[int, np.ndarray] = {}
        for item_id, raw in vectors.items():
            v = np.asarray(raw, dtype=np.float64)
            if v.shape != (self.dim,):
                raise ValueError(f"embedding for item {item_id} has shape {v.shape}, expected ({self.dim},)")
            norm = float(np.linalg.norm(v))
            if norm == 0.0 or not np.isfinite(norm):
                raise ValueError(f"embedding for item {item_id} cannot be normalized")
            self._vectors[int(item_id)] = v / norm

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def vector(self, item_id: int) -> np.ndarray:
        try:
            return self._vectors[item_id]
        except KeyError:
            raise MissingEmbeddingError(f"no embedding for item {item_id}") from None

    @classmethod
    def from_catalog(cls, catalog: Iterable[CatalogItem], dim: int = FALLBACK_DIM) -> "EmbeddingTable":
        return cls(dim, {item.item_id: embed_fallback(item.title, dim) for item in catalog})

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        """Read the embedding file: a JSON object with a ``dim`` field and one
        ``"<item_id>": [floats]`` entry per item."""
        data = json.loads(Path(path).read_text())
        if "dim" not in data:
            raise ValueError("embedding file is missing the 'dim' field")
        dim = int(data["dim"])
        vectors = {int(key): value for key, value in data.items() if key != "dim"}
        return cls(dim, vectors)

    def save(self, path: str | Path) -> None:
        payload: dict = {"dim": self.dim}
        for item_id in sorted(self._vectors):
            payload[str(item_id)] = self._vectors[item_id].tolist()
        Path(path).write_text(json.dumps(payload))


def embeddings_for(catalog: list[CatalogItem], path: str | Path | None) -> EmbeddingTable:
    """External embedding file when given, else the trigram fallback."""
    if path is not None and Path(path).exists():
        return EmbeddingTable.load(path)
    return EmbeddingTable.from_catalog(catalog)


def mmr_rerank(
    candidates: Sequence[tuple[int, float]],
    emb: EmbeddingTable,
    cfg: MmrConfig,
) -> list[int]:
    """Re-rank a relevance-descending candidate list for diversity.

    Returns min(cfg.list_size, len(candidates)) item ids.  The first output is
    always the top-relevance candidate; ties in the greedy objective keep the
    original candidate order.
    """
    if not candidates:
        return []
    ids = [item_id for item_id, _ in candidates]
    rel = np.array([score for _, score in candidates], dtype=np.float64)
    E = np.stack([emb.vector(item_id) for item_id in ids])

    if cfg.normalize_relevance:
        span = float(rel.max() - rel.min())
        rel = (rel - rel.min()) / span if span > 0 else np.ones_like(rel)

    sims = E @ E.T  # rows are unit vectors, so this is the cosine matrix
    lam = cfg.lambda_param

    selected = [0]
    max_sim = sims[:, 0].copy()  # max similarity of each candidate to the selected set
    remaining = list(range(1, len(ids)))
    target = min(cfg.list_size, len(ids))
    while len(selected) < target:
        best_idx = -1
        best_score = -np.inf
        for idx in remaining:
            score = lam * rel[idx] - (1.0 - lam) * max_sim[idx]
            if score > best_score:
                best_score = score
                best_idx = idx
        selected.append(best_idx)
        remaining.remove(best_idx)
        np.maximum(max_sim, sims[:, best_idx], out=max_sim)
    return [ids[i] for i in selected]
