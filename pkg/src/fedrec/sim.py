"""Desk-scale end-to-end simulation: synthetic world, scripted clickers,
an in-process aggregator, and real client nodes running the full pipeline.

The world is low-rank by construction: true item factors cluster by
franchise (sequel-style titles sharing trigram-similar names and genres), so
a user who rates one franchise entry highly tends to rate its siblings
highly too.  That reproduces the dynamic the diversity re-ranker is meant to
counter: the raw list fills up with near-duplicates, the re-ranked list
spreads out.

Viewing histories are written as real export CSVs so every round exercises
catalog ingest, rating derivation, training, DP, the wire protocol, list
building, and telemetry end to end.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .catalog import CatalogItem, Kind, derive_ratings, parse_history_file
from .client import ClientConfig, ClientNode, LocalTransport
from .factors import DivergenceError, FactorModel, TrainingConfig, sigmoid, train_local
from .metrics import build_report, genre_distribution, write_genre_distribution
from .privacy import DpConfig
from .protocol import Aggregator, Variant
from .rerank import EmbeddingTable, MmrConfig

_GENRES = (
    "Drama", "Comedy", "Thriller", "Sci-Fi", "Documentary",
    "Action", "Romance", "Horror", "Fantasy", "Crime",
)
_TITLE_HEADS = (
    "Midnight", "Silent", "Crimson", "Golden", "Hidden", "Broken", "Electric",
    "Savage", "Lonely", "Frozen", "Burning", "Velvet", "Iron", "Hollow",
    "Paper", "Neon", "Distant", "Royal", "Quiet", "Feral",
)
_TITLE_TAILS = (
    "Harbor", "Empire", "Detective", "Kingdom", "Protocol", "Academy",
    "Dynasty", "Frontier", "Paradox", "Legacy", "Syndicate", "Horizon",
    "Covenant", "Carnival", "Outpost", "Meridian", "Ledger", "Vignette",
)
_SEQUEL_SUFFIXES = ("", " II", " III", " IV", " V", " VI")

_HISTORY_START = date(2025, 1, 6)


# Pairwise training bootstraps slowly from cold-start user factors, so the
# implicit variant defaults to a stronger local schedule than the explicit one.
_VARIANT_TRAINING = {
    Variant.SVD: TrainingConfig(),
    Variant.BPR: TrainingConfig(learning_rate=0.1, epochs=20, negative_samples_per_positive=4),
}


@dataclass
class SimConfig:
    clients: int = 20
    rounds: int = 30
    catalog_size: int = 200
    true_k: int = 8
    k: int = 8
    variant: Variant = Variant.SVD
    click_temperature: float = 0.5
    seed: int = 0
    training: TrainingConfig | None = None  # None -> per-variant default
    dp: DpConfig = field(default_factory=DpConfig)
    mmr: MmrConfig = field(default_factory=MmrConfig)
    observed_fraction: float = 0.7  # share of eligible items a client actually watches
    holdout_fraction: float = 0.2  # share of watched items held out of the history
    franchise_spread: float = 0.35  # within-franchise factor noise, relative to the shared base
    workers: int = 1

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        if self.training is None:
            self.training = _VARIANT_TRAINING[self.variant]
        if self.clients < 1:
            raise ValueError("clients must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.catalog_size < 10:
            raise ValueError("catalog_size must be >= 10")
        if self.true_k < 1 or self.k < 1:
            raise ValueError("latent dimensions must be >= 1")
        if self.click_temperature <= 0:
            raise ValueError("click_temperature must be > 0")
        if not 0.0 < self.observed_fraction <= 1.0:
            raise ValueError("observed_fraction must be in (0, 1]")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class World:
    catalog: list[CatalogItem]
    catalog_path: Path
    participant_ids: list[str]
    history_paths: dict[str, Path]
    true_ratings: np.ndarray  # (clients, catalog_size) ints in 1..5
    train_items: dict[str, list[int]]
    holdout_items: dict[str, list[int]]


def true_ratings_from_factors(P: np.ndarray, Q: np.ndarray, gain: float = 1.4) -> np.ndarray:
    """Ground-truth star matrix: P @ Q.T scaled into [1, 5] and rounded.

    Scores are standardized and mapped to 3 + gain * z before clamping; the
    gain spreads mass across the whole star range (plain min-max would pile
    almost everything on 3 and make the 4-vs-3 boundary pure quantization
    noise).  The map is monotone, so preference order survives scaling.
    """
    scores = P @ Q.T
    std = float(scores.std())
    if std == 0.0:
        scaled = np.full_like(scores, 3.0)
    else:
        scaled = 3.0 + gain * (scores - scores.mean()) / std
    return np.clip(np.rint(scaled), 1, 5).astype(np.int64)


def _synthetic_catalog(size: int, rng: np.random.Generator) -> tuple[list[CatalogItem], np.ndarray]:
    """Franchise-clustered catalog; returns items and each item's franchise index."""
    items: list[CatalogItem] = []
    franchise_of = np.empty(size, dtype=np.int64)
    used_names: set[str] = set()
    franchise = 0
    while len(items) < size:
        name = f"{rng.choice(_TITLE_HEADS)} {rng.choice(_TITLE_TAILS)}"
        if name in used_names:
            continue
        used_names.add(name)
        primary = _GENRES[int(rng.integers(len(_GENRES)))]
        genres = (primary,) if rng.random() < 0.6 else (primary, _GENRES[int(rng.integers(len(_GENRES)))])
        entries = int(rng.integers(1, len(_SEQUEL_SUFFIXES) + 1))
        for suffix in _SEQUEL_SUFFIXES[:entries]:
            if len(items) >= size:
                break
            item_id = len(items)
            items.append(
                CatalogItem(
                    item_id=item_id,
                    title=f"{name}{suffix}",
                    genres=tuple(dict.fromkeys(genres)),
                    kind=Kind.SERIES,
                    image_url="",
                )
            )
            franchise_of[item_id] = franchise
        franchise += 1
    return items, franchise_of


def _write_catalog(items: list[CatalogItem], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "title", "genres", "kind", "image_url"])
        for item in items:
            writer.writerow([item.item_id, item.title, "|".join(item.genres), item.kind.value, item.image_url])


def _history_rows(title: str, stars: int) -> list[tuple[str, date]]:
    """Episode rows whose watch density derives back to the given star rating."""
    d0 = _HISTORY_START
    if stars >= 5:
        offsets = (0, 2, 4)  # 3 episodes inside one week
    elif stars == 4:
        offsets = (0, 3)  # a 2-episode week
    elif stars == 3:
        offsets = (0, 10)  # repeat watching, never 2 in a week
    else:
        offsets = (0,)  # a single episode
    return [
        (f"{title}: Season 1: Episode {n + 1}", d0 + timedelta(days=off))
        for n, off in enumerate(offsets)
    ]


def generate_world(cfg: SimConfig, out_dir: str | Path) -> World:
    """Materialize the synthetic world on disk: catalog CSV plus one viewing
    history CSV per client; holdout pairs never reach the history files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0,)))

    catalog, franchise_of = _synthetic_catalog(cfg.catalog_size, rng)
    catalog_path = out / "catalog.csv"
    _write_catalog(catalog, catalog_path)

    n_franchises = int(franchise_of.max()) + 1
    base = rng.normal(0.0, 1.0, size=(n_franchises, cfg.true_k))
    Q_true = base[franchise_of] + cfg.franchise_spread * rng.normal(0.0, 1.0, size=(cfg.catalog_size, cfg.true_k))
    P_true = rng.normal(0.0, 1.0, size=(cfg.clients, cfg.true_k))
    ratings = true_ratings_from_factors(P_true, Q_true)

    participant_ids = [f"client-{i:02d}" for i in range(cfg.clients)]
    history_paths: dict[str, Path] = {}
    train_items: dict[str, list[int]] = {}
    holdout_items: dict[str, list[int]] = {}
    titles = {item.item_id: item.title for item in catalog}

    for idx, pid in enumerate(participant_ids):
        eligible = [int(i) for i in np.flatnonzero(ratings[idx] >= 2)]
        n_observed = max(2, int(round(cfg.observed_fraction * len(eligible))))
        observed = sorted(int(i) for i in rng.choice(eligible, size=min(n_observed, len(eligible)), replace=False))
        perm = rng.permutation(len(observed))
        n_holdout = int(round(cfg.holdout_fraction * len(observed)))
        holdout = sorted(observed[i] for i in perm[:n_holdout])
        train = sorted(observed[i] for i in perm[n_holdout:])
        train_items[pid] = train
        holdout_items[pid] = holdout

        path = out / f"history_{pid}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["Title", "Date"])
            for item in train:
                for raw_title, day in _history_rows(titles[item], int(ratings[idx, item])):
                    writer.writerow([raw_title, day.strftime("%m/%d/%Y")])
        history_paths[pid] = path

    return World(
        catalog=catalog,
        catalog_path=catalog_path,
        participant_ids=participant_ids,
        history_paths=history_paths,
        true_ratings=ratings,
        train_items=train_items,
        holdout_items=holdout_items,
    )


def simulate_click(
    items: list[int],
    true_ratings_row: np.ndarray,
    temperature: float,
    rng: np.random.Generator | int,
) -> list[tuple[int, int]]:
    """Scripted clicker: each shown item is clicked independently with
    probability logistic((r - 3) / temperature).  Returns (position, item_id)
    pairs, positions 1-based."""
    if not items:
        raise ValueError("cannot click on an empty list")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    clicks = []
    for pos, item in enumerate(items, start=1):
        r = float(true_ratings_row[item])
        prob = sigmoid((r - 3.0) / temperature)
        if rng.random() < prob:
            clicks.append((pos, item))
    return clicks


class _StepClock:
    """Deterministic per-client wall clock; advances one second per call."""

    def __init__(self, start: datetime):
        self._now = start

    def __call__(self) -> datetime:
        self._now += timedelta(seconds=1)
        return self._now


def _client_seeds(master_seed: int, idx: int) -> tuple[int, int]:
    state = np.random.SeedSequence(entropy=master_seed, spawn_key=(idx + 1,)).generate_state(2)
    return int(state[0]), int(state[1])


def _evaluate(
    model: FactorModel,
    cfg: SimConfig,
    world: World,
    nodes: list[ClientNode],
    derived: dict[str, object],
) -> dict:
    """Held-out RMSE (and pairwise AUC) with fresh per-client factors trained
    on a pristine copy of the given global model."""
    sq_errors: list[float] = []
    aucs: list[float] = []
    for idx, pid in enumerate(world.participant_ids):
        holdout = world.holdout_items[pid]
        if not holdout:
            continue
        node = nodes[idx]
        local = model.copy()
        ratings = derived[pid]
        p = np.zeros(model.k, dtype=np.float64)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=node.config.training.rng_seed, spawn_key=(model.round, 999))
        )
        try:
            if cfg.variant is Variant.SVD:
                if ratings.ratings:
                    p, _ = train_local(p, local, node.config.training, ratings=ratings, rng=rng)
            else:
                positives = {i for i, r in ratings.ratings.items() if r >= 4} | node.past_clicked_items()
                if positives and len(positives) < len(local.item_ids):
                    p, _ = train_local(p, local, node.config.training, positives=positives, rng=rng)
        except DivergenceError:
            # Fitting user factors on this model produces non-finite
            # predictions, so its held-out error really is unbounded.
            sq_errors.extend(math.inf for _ in holdout)
            continue

        scores = {item: float(p @ local.Q[local.row_of(item)]) for item in holdout}
        truth = {item: int(world.true_ratings[idx, item]) for item in holdout}
        sq_errors.extend((scores[i] - truth[i]) ** 2 for i in holdout)

        pos = [i for i in holdout if truth[i] >= 4]
        neg = [i for i in holdout if truth[i] <= 3]
        if pos and neg:
            wins = 0.0
            for i in pos:
                for j in neg:
                    if scores[i] > scores[j]:
                        wins += 1.0
                    elif scores[i] == scores[j]:
                        wins += 0.5
            aucs.append(wins / (len(pos) * len(neg)))

    rmse = math.sqrt(sum(sq_errors) / len(sq_errors)) if sq_errors else None
    auc = sum(aucs) / len(aucs) if aucs else None
    return {"rmse": rmse, "auc": auc}


@dataclass
class SimResult:
    report: dict
    trace: list[dict]
    world: World
    out_dir: Path
    report_path: Path
    trace_path: Path
    genre_path: Path


def run_simulation(cfg: SimConfig, out_dir: str | Path) -> SimResult:
    """Run R federated rounds of the full client pipeline for one variant.

    Writes report.json, trace.csv and genre_distribution.csv under out_dir.
    The trace holds one row per model round (round 0 = pre-training model).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(cfg, out / "world")
    n_items = len(world.catalog)

    aggregator = Aggregator(
        catalog_size=n_items,
        k=cfg.k,
        seed=cfg.seed,
        dp=cfg.dp if cfg.dp.aggregator_side else None,
        log_dir=out / "telemetry",
    )
    emb = EmbeddingTable.from_catalog(world.catalog)

    nodes: list[ClientNode] = []
    derived: dict[str, object] = {}
    for idx, pid in enumerate(world.participant_ids):
        train_seed, dp_seed = _client_seeds(cfg.seed, idx)
        config = ClientConfig(
            participant_id=pid,
            variant=cfg.variant,
            store_path=out / "clients" / pid,
            catalog_path=world.catalog_path,
            history_path=world.history_paths[pid],
            training=replace(cfg.training, rng_seed=train_seed),
            dp=replace(cfg.dp, rng_seed=dp_seed),
            mmr=cfg.mmr,
        )
        clock = _StepClock(datetime(2025, 2, 1, tzinfo=timezone.utc) + timedelta(hours=idx))
        nodes.append(ClientNode(config, transport=LocalTransport(aggregator), clock=clock))
        events, _ = parse_history_file(world.history_paths[pid])
        derived[pid] = derive_ratings(events, world.catalog, owner=pid)

    def client_round(idx: int, round_idx: int) -> None:
        node = nodes[idx]
        report = node.run_round()
        session = report["session"]
        row = world.true_ratings[idx]
        for label, ids in (("A", report["list_a"]), ("B", report["list_b"])):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=cfg.seed, spawn_key=(idx + 1, round_idx, 101 if label == "A" else 102))
            )
            for pos, item in simulate_click(ids, row, cfg.click_temperature, rng):
                node.record_click(session, item, label, pos)
        node.close_session(session)

    trace: list[dict] = []
    model0 = aggregator.model(cfg.variant)
    trace.append({"round": 0, **_evaluate(model0, cfg, world, nodes, derived)})

    for round_idx in range(cfg.rounds):
        try:
            if cfg.workers > 1:
                with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                    list(pool.map(lambda i: client_round(i, round_idx), range(cfg.clients)))
            else:
                for i in range(cfg.clients):
                    client_round(i, round_idx)
            if aggregator.pending_updates(cfg.variant) > 0:
                aggregator.aggregate_round(cfg.variant)
        except DivergenceError as exc:
            raise DivergenceError(f"simulation diverged during round {round_idx + 1}: {exc}") from exc
        model = aggregator.model(cfg.variant)
        trace.append({"round": model.round, **_evaluate(model, cfg, world, nodes, derived)})

    # canonical session order: metric sums must not depend on worker count
    sessions = sorted(
        aggregator.telemetry.sessions(cfg.variant), key=lambda r: (r.participant_id, r.timestamp)
    )
    report = build_report(sessions, emb)

    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2))
    trace_path = out / "trace.csv"
    with trace_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "rmse", "auc"])
        for row in trace:
            writer.writerow([
                row["round"],
                "" if row["rmse"] is None else f"{row['rmse']:.6f}",
                "" if row["auc"] is None else f"{row['auc']:.6f}",
            ])
    genre_path = out / "genre_distribution.csv"
    write_genre_distribution(genre_distribution(sessions, world.catalog), genre_path)

    return SimResult(
        report=report,
        trace=trace,
        world=world,
        out_dir=out,
        report_path=report_path,
        trace_path=trace_path,
        genre_path=genre_path,
    )
