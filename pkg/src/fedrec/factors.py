"""Latent-factor model with two interchangeable local fine-tuning algorithms.

The explicit variant runs SGD on squared rating error; the implicit variant
runs pairwise-ranking SGD with a logistic gradient over sampled
(positive, negative) item pairs.  Both consume and produce identically shaped
models, mutate only a private model copy, and emit per-item factor deltas
(final minus initial) as the round's exportable update.

The sequential inner loops live in :mod:`fedrec._kernels`; everything random
(shuffle order, negative sampling) is drawn here so results are reproducible
and backend-independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .catalog import CatalogItem, Kind, RatingVector

INIT_SCALE = 0.05  # initial factors i.i.d. uniform in [-INIT_SCALE, INIT_SCALE]

# UserFactors: the private user-side vector p is a plain float64 array of
# length k. It stays on the client; only item deltas are exportable.
UserFactors = np.ndarray

CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced non-finite factors (learning rate likely too large)."""


class UnknownItemError(KeyError):
    """An item id is not part of the model."""


@dataclass
class FactorModel:
    k: int
    item_ids: list[int]
    Q: np.ndarray  # (len(item_ids), k) float64, row i <-> item_ids[i]
    round: int = 0

    def __post_init__(self):
        self.Q = np.ascontiguousarray(self.Q, dtype=np.float64)
        if self.Q.shape != (len(self.item_ids), self.k):
            raise ValueError(
                f"Q shape {self.Q.shape} does not match ({len(self.item_ids)}, {self.k})"
            )
        if not np.isfinite(self.Q).all():
            raise ValueError("factor matrix contains non-finite entries")
        self._row_of = {item_id: row for row, item_id in enumerate(self.item_ids)}
        if len(self._row_of) != len(self.item_ids):
            raise ValueError("item_ids contains duplicates")

    def row_of(self, item_id: int) -> int:
        try:
            return self._row_of[item_id]
        except KeyError:
            raise UnknownItemError(f"unknown item_id {item_id}") from None

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._row_of

    def copy(self) -> "FactorModel":
        return FactorModel(k=self.k, item_ids=list(self.item_ids), Q=self.Q.copy(), round=self.round)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.05
    regularization: float = 0.01
    epochs: int = 10
    rng_seed: int = 0
    negative_samples_per_positive: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.negative_samples_per_positive < 1:
            raise ValueError("negative_samples_per_positive must be >= 1")


@dataclass
class LocalDelta:
    """Per-item factor deltas plus the locally retained user-factor snapshot.

    Only ``item_deltas`` may leave the client; ``user_snapshot`` is private.
    """

    item_deltas: dict[int, np.ndarray] = field(default_factory=dict)
    user_snapshot: UserFactors | None = None


def init_model(catalog_size: int, k: int, seed: int, item_ids: list[int] | None = None) -> FactorModel:
    """Seeded uniform init in [-0.05, 0.05]; round 0.

    ``item_ids`` defaults to 0..catalog_size-1 and must match catalog_size
    when given.
    """
    if catalog_size < 1:
        raise ValueError("catalog_size must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    if item_ids is None:
        item_ids = list(range(catalog_size))
    elif len(item_ids) != catalog_size:
        raise ValueError("item_ids length must equal catalog_size")
    rng = np.random.default_rng(seed)
    Q = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(catalog_size, k))
    return FactorModel(k=k, item_ids=list(item_ids), Q=Q, round=0)


def predict(p: UserFactors, model: FactorModel, item_id: int) -> float:
    """Predicted score: dot product of user and item factors."""
    return float(np.dot(p, model.Q[model.row_of(item_id)]))


def sigmoid(x: float) -> float:
    # Saturates cleanly instead of overflowing for large |x|.
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x)) if x < 709 else 1.0
    return math.exp(x) / (1.0 + math.exp(x)) if x > -709 else 0.0


def svd_gradients(p, q, r, reg):
    """Analytic ascent gradients of -e^2/2 - reg/2*(|p|^2+|q|^2), e = r - p.q."""
    e = r - float(np.dot(p, q))
    return e * q - reg * p, e * p - reg * q


def bpr_gradients(p, q_i, q_j, reg):
    """Analytic ascent gradients of ln sigmoid(p.(q_i-q_j)) minus the L2 terms."""
    xhat = float(np.dot(p, q_i - q_j))
    g = sigmoid(-xhat)
    return g * (q_i - q_j) - reg * p, g * p - reg * q_i, -g * p - reg * q_j


def _check_finite(p: np.ndarray, model: FactorModel, touched_rows: np.ndarray, step: int, algo: str):
    if step >= 0:
        raise DivergenceError(
            f"{algo} training diverged at step {step}: non-finite error term "
            f"(learning rate may be too large)"
        )
    if not np.isfinite(p).all() or not np.isfinite(model.Q[touched_rows]).all():
        raise DivergenceError(f"{algo} training produced non-finite factors")


def svd_sgd_epoch(
    p: UserFactors,
    model: FactorModel,
    ratings: RatingVector,
    cfg: TrainingConfig,
    rng: np.random.Generator | None = None,
) -> tuple[UserFactors, LocalDelta]:
    """One explicit-feedback pass over the rated items in seeded-shuffled order.

    Mutates ``model.Q`` in place (train on a private copy).  Returns the
    updated user factors and the per-item deltas of this pass.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    items = sorted(ratings.ratings)
    for item_id in items:
        model.row_of(item_id)  # raises UnknownItemError early

    order = rng.permutation(len(items))
    rows = np.array([model.row_of(items[i]) for i in order], dtype=np.int64)
    targets = np.array([float(ratings.ratings[items[i]]) for i in order], dtype=np.float64)

    p_new = np.array(p, dtype=np.float64).copy()
    if p_new.shape != (model.k,):
        raise ValueError(f"user factors must have shape ({model.k},)")
    q_before = model.Q[rows].copy()
    scratch = np.empty(model.k, dtype=np.float64)

    bad = _kernels.svd_steps(model.Q, p_new, rows, targets, cfg.learning_rate, cfg.regularization, scratch)
    _check_finite(p_new, model, rows, bad, "svd_sgd")

    deltas: dict[int, np.ndarray] = {}
    for pos, idx in enumerate(order):
        deltas[items[idx]] = model.Q[rows[pos]] - q_before[pos]
    return p_new, LocalDelta(item_deltas=deltas, user_snapshot=p_new.copy())


def bpr_epoch(
    p: UserFactors,
    model: FactorModel,
    positives: set[int],
    cfg: TrainingConfig,
    rng: np.random.Generator | None = None,
) -> tuple[UserFactors, LocalDelta]:
    """One pairwise-ranking pass: each positive is contrasted with
    ``cfg.negative_samples_per_positive`` uniformly sampled non-positives.

    Mutates ``model.Q`` in place.  Raises ValueError when no negatives exist.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    pos_items = sorted(positives)
    for item_id in pos_items:
        model.row_of(item_id)
    neg_items = sorted(set(model.item_ids) - set(pos_items))
    if pos_items and not neg_items:
        raise ValueError("cannot run pairwise training: every item is a positive")

    order = rng.permutation(len(pos_items))
    pos_rows = []
    neg_rows = []
    for idx in order:
        row_i = model.row_of(pos_items[idx])
        for _ in range(cfg.negative_samples_per_positive):
            j = neg_items[int(rng.integers(len(neg_items)))]
            pos_rows.append(row_i)
            neg_rows.append(model.row_of(j))
    pos_rows = np.array(pos_rows, dtype=np.int64)
    neg_rows = np.array(neg_rows, dtype=np.int64)

    p_new = np.array(p, dtype=np.float64).copy()
    if p_new.shape != (model.k,):
        raise ValueError(f"user factors must have shape ({model.k},)")
    touched = np.unique(np.concatenate([pos_rows, neg_rows])) if len(pos_rows) else np.array([], dtype=np.int64)
    q_before = model.Q[touched].copy()
    scratch = np.empty(model.k, dtype=np.float64)

    bad = _kernels.bpr_steps(model.Q, p_new, pos_rows, neg_rows, cfg.learning_rate, cfg.regularization, scratch)
    _check_finite(p_new, model, touched, bad, "bpr")

    deltas = {}
    for pos, row in enumerate(touched):
        deltas[model.item_ids[row]] = model.Q[row] - q_before[pos]
    return p_new, LocalDelta(item_deltas=deltas, user_snapshot=p_new.copy())


def train_local(
    p: UserFactors,
    model: FactorModel,
    cfg: TrainingConfig,
    *,
    ratings: RatingVector | None = None,
    positives: set[int] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[UserFactors, LocalDelta]:
    """Run ``cfg.epochs`` local passes and return the round's accumulated delta.

    Exactly one of ``ratings`` (explicit variant) / ``positives`` (implicit
    variant) must be given.  The delta is final-minus-initial over every item
    touched in any epoch.
    """
    if (ratings is None) == (positives is None):
        raise ValueError("pass exactly one of ratings= or positives=")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    q_start = model.Q.copy()
    touched: set[int] = set()
    for _ in range(cfg.epochs):
        if ratings is not None:
            p, epoch_delta = svd_sgd_epoch(p, model, ratings, cfg, rng=rng)
        else:
            p, epoch_delta = bpr_epoch(p, model, positives, cfg, rng=rng)
        touched.update(epoch_delta.item_deltas)

    deltas = {item: model.Q[model.row_of(item)] - q_start[model.row_of(item)] for item in sorted(touched)}
    return p, LocalDelta(item_deltas=deltas, user_snapshot=np.array(p, dtype=np.float64).copy())


def rank_items(
    p: UserFactors,
    model: FactorModel,
    exclude: set[int],
    series_only: bool,
    catalog: list[CatalogItem],
) -> list[tuple[int, float]]:
    """All non-excluded items by score descending, ties by ascending item_id."""
    kind_of = {item.item_id: item.kind for item in catalog}
    scores = model.Q @ np.asarray(p, dtype=np.float64)
    ranked = []
    for row, item_id in enumerate(model.item_ids):
        if item_id in exclude:
            continue
        if series_only and kind_of.get(item_id) is not Kind.SERIES:
            continue
        ranked.append((item_id, float(scores[row])))
    ranked.sort(key=lambda pair: (-pair[1], pair[0]))
    return ranked


def model_to_snapshot(model: FactorModel) -> dict:
    """Wire/file form of the global model: {round, k, item_ids, Q} with Q row-major."""
    return {
        "round": model.round,
        "k": model.k,
        "item_ids": list(model.item_ids),
        "Q": model.Q.tolist(),
    }


def model_from_snapshot(snapshot: dict) -> FactorModel:
    return FactorModel(
        k=int(snapshot["k"]),
        item_ids=[int(i) for i in snapshot["item_ids"]],
        Q=np.array(snapshot["Q"], dtype=np.float64),
        round=int(snapshot["round"]),
    )


def save_model(model: FactorModel, path: str | Path) -> None:
    payload = {"version": CHECKPOINT_VERSION, **model_to_snapshot(model)}
    Path(path).write_text(json.dumps(payload))


def load_model(path: str | Path) -> FactorModel:
    payload = json.loads(Path(path).read_text())
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    return model_from_snapshot(payload)
