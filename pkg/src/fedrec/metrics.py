"""Accuracy and diversity metrics over the telemetry log.

All click-based metrics are computed per (variant, list) after deduplicating
clicks per (session, item, list): a click models intent, not frequency.
Zero-click sessions count toward CTR and P@5 denominators, contribute 0 to
MRR, and are skipped by nDCG (whose ideal ranking is undefined without
clicks).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .catalog import CatalogItem
from .protocol import SessionRecord, Variant
from .rerank import EmbeddingTable

LIST_LABELS = ("A", "B")


@dataclass(frozen=True)
class ListSession:
    """One session projected onto a single list: the 5 shown items and the
    deduplicated clicked positions (1-based)."""

    items: tuple[int, ...]
    clicked_positions: frozenset[int]

    @property
    def clicked_items(self) -> frozenset[int]:
        return frozenset(self.items[pos - 1] for pos in self.clicked_positions)


def project(sessions: Iterable[SessionRecord], source_list: str) -> list[ListSession]:
    """Per-list view of raw session records with per-item click dedup."""
    if source_list not in LIST_LABELS:
        raise ValueError(f"source_list must be one of {LIST_LABELS}")
    views = []
    for rec in sessions:
        items = tuple(rec.list_a if source_list == "A" else rec.list_b)
        positions = {c.position for c in rec.clicks if c.source_list == source_list}
        views.append(ListSession(items=items, clicked_positions=frozenset(positions)))
    return views


def _require_sessions(sessions: Sequence[ListSession]) -> None:
    if not sessions:
        raise ValueError("metric is undefined over zero sessions")


def ctr(sessions: Sequence[ListSession]) -> float:
    """Total (deduplicated) clicks divided by total shown slots."""
    _require_sessions(sessions)
    clicks = sum(len(s.clicked_positions) for s in sessions)
    return clicks / (5 * len(sessions))


def precision_at_5(sessions: Sequence[ListSession]) -> float:
    """Mean per-session fraction of the 5 shown items that were clicked."""
    _require_sessions(sessions)
    return sum(len(s.clicked_items) / 5 for s in sessions) / len(sessions)


def ndcg_at_5(sessions: Sequence[ListSession]) -> float:
    """Mean binary-gain nDCG over sessions with at least one click."""
    _require_sessions(sessions)
    scores = []
    for s in sessions:
        if not s.clicked_positions:
            continue
        dcg = sum(1.0 / math.log2(pos + 1) for pos in s.clicked_positions)
        ideal = sum(1.0 / math.log2(i + 1) for i in range(1, len(s.clicked_positions) + 1))
        scores.append(dcg / ideal)
    if not scores:
        raise ValueError("ndcg_at_5 is undefined: no session has any click")
    return sum(scores) / len(scores)


def mrr(sessions: Sequence[ListSession]) -> float:
    """Mean reciprocal rank of the highest clicked position; 0 when unclicked."""
    _require_sessions(sessions)
    total = 0.0
    for s in sessions:
        if s.clicked_positions:
            total += 1.0 / min(s.clicked_positions)
    return total / len(sessions)


def ild(items: Sequence[int], emb: EmbeddingTable) -> float:
    """Intra-list diversity: mean pairwise (1 - cosine); 0 for a single item."""
    if not items:
        raise ValueError("ild is undefined for an empty list")
    vectors = [emb.vector(item) for item in items]
    n = len(vectors)
    if n == 1:
        return 0.0
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += 1.0 - float(min(1.0, max(-1.0, vectors[i] @ vectors[j])))
    return (2.0 / (n * (n - 1))) * total


def mean_ild(sessions: Sequence[ListSession], emb: EmbeddingTable) -> float:
    _require_sessions(sessions)
    return sum(ild(s.items, emb) for s in sessions) / len(sessions)


def coverage_ratio(sessions: Sequence[ListSession]) -> float:
    """Unique items clicked divided by unique items shown, across sessions."""
    _require_sessions(sessions)
    shown: set[int] = set()
    clicked: set[int] = set()
    for s in sessions:
        shown.update(s.items)
        clicked.update(s.clicked_items)
    return len(clicked) / len(shown)


def unique_shown(sessions: Sequence[ListSession]) -> set[int]:
    out: set[int] = set()
    for s in sessions:
        out.update(s.items)
    return out


def unique_clicked(sessions: Sequence[ListSession]) -> set[int]:
    out: set[int] = set()
    for s in sessions:
        out.update(s.clicked_items)
    return out


def genre_distribution(
    sessions: Iterable[SessionRecord], catalog: list[CatalogItem]
) -> dict[tuple[str, str, str], int]:
    """Counts of every (shown item, genre) pair keyed by (variant, list, genre).

    Multi-genre items count once per genre; items missing from the catalog
    count under 'Unknown'.
    """
    genres_of = {item.item_id: item.genres for item in catalog}
    counts: dict[tuple[str, str, str], int] = {}
    for rec in sessions:
        for label, items in (("A", rec.list_a), ("B", rec.list_b)):
            for item in items:
                for genre in genres_of.get(item, ("Unknown",)):
                    key = (rec.variant.value, label, genre)
                    counts[key] = counts.get(key, 0) + 1
    return counts


def write_genre_distribution(
    counts: dict[tuple[str, str, str], int], path: str | Path
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "list", "genre", "count"])
        for (variant, label, genre), count in sorted(counts.items()):
            writer.writerow([variant, label, genre, count])


def build_report(sessions: Sequence[SessionRecord], emb: EmbeddingTable) -> dict:
    """Full metric report keyed by variant then list label.

    nDCG is null for a (variant, list) cell whose sessions have no clicks.
    """
    report: dict = {}
    for variant in Variant:
        variant_sessions = [s for s in sessions if s.variant is variant]
        if not variant_sessions:
            continue
        cell: dict = {}
        for label in LIST_LABELS:
            views = project(variant_sessions, label)
            try:
                ndcg = ndcg_at_5(views)
            except ValueError:
                ndcg = None
            cell[label] = {
                "ctr": ctr(views),
                "p_at_5": precision_at_5(views),
                "ndcg_at_5": ndcg,
                "mrr": mrr(views),
                "ild": mean_ild(views, emb),
                "coverage_ratio": coverage_ratio(views),
                "sessions": len(views),
                "unique_recommended": len(unique_shown(views)),
                "unique_clicked": len(unique_clicked(views)),
            }
        report[variant.value] = cell
    return report
