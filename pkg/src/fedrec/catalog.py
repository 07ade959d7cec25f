"""Catalog loading, viewing-history parsing, and private star-rating derivation.

The catalog is static (CSV or JSON).  A participant's viewing-history export
is a two-column CSV (``Title,Date``); episode rows carry a
``<series>: Season x: <episode>`` shaped title.  Ratings are derived locally
from watch density and never leave this process: :class:`RatingVector` has no
wire serializer by design.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterable

MOVIE_DEFAULT_RATING = 1
WINDOW_DAYS = 7  # sliding window length, both endpoints inclusive

_CSV_COLUMNS = ("item_id", "title", "genres", "kind", "image_url")
_DATE_FORMATS = ("%m/%d/%Y", "%d-%m-%Y")
_EPISODE_MARKER = re.compile(r"\b(season|episode)\b", re.IGNORECASE)


class CatalogError(ValueError):
    """Malformed catalog data (duplicate ids, unknown kind, bad schema)."""


class HistoryError(ValueError):
    """Viewing-history stream could not be read at all."""


class Kind(str, Enum):
    SERIES = "series"
    MOVIE = "movie"

    @classmethod
    def parse(cls, value: str) -> "Kind":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise CatalogError(f"unknown kind {value!r}") from None


@dataclass(frozen=True)
class CatalogItem:
    item_id: int
    title: str
    genres: tuple[str, ...]
    kind: Kind
    image_url: str = ""


@dataclass(frozen=True)
class ViewingEvent:
    raw_title: str
    watch_date: date


@dataclass
class RatingVector:
    """Per-participant derived star ratings.  Private: never serialized to
    wire messages (no encoder is registered for it in the protocol layer)."""

    owner: str
    ratings: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for item_id, stars in self.ratings.items():
            if not isinstance(stars, int) or not 1 <= stars <= 5:
                raise ValueError(f"rating for item {item_id} must be an int in [1,5], got {stars!r}")


def _clean_genres(genres: Iterable[str]) -> tuple[str, ...]:
    cleaned = tuple(g.strip() for g in genres if g.strip())
    return cleaned if cleaned else ("Unknown",)


def _build_item(item_id, title, genres, kind, image_url) -> CatalogItem:
    item_id = int(item_id)
    if item_id < 0:
        raise CatalogError(f"item_id must be >= 0, got {item_id}")
    return CatalogItem(
        item_id=item_id,
        title=str(title),
        genres=_clean_genres(genres),
        kind=Kind.parse(str(kind)),
        image_url=str(image_url or ""),
    )


def load_catalog(source: BinaryIO | bytes, format: str = "csv") -> list[CatalogItem]:
    """Load the catalog from a byte stream in 'csv' or 'json' format.

    Returns items ordered by item_id.  Duplicate ids and unknown kind values
    are hard errors.
    """
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    fmt = format.lower()
    if fmt == "csv":
        items = _load_catalog_csv(source)
    elif fmt == "json":
        items = _load_catalog_json(source)
    else:
        raise CatalogError(f"unknown catalog format {format!r}")

    seen: set[int] = set()
    for item in items:
        if item.item_id in seen:
            raise CatalogError(f"duplicate item_id {item.item_id}")
        seen.add(item.item_id)
    items.sort(key=lambda it: it.item_id)
    return items


def _load_catalog_csv(stream: BinaryIO) -> list[CatalogItem]:
    text = io.TextIOWrapper(stream, encoding="utf-8", newline="")
    reader = csv.DictReader(text)
    if reader.fieldnames is None:
        raise CatalogError("catalog CSV is empty (missing header)")
    missing = [c for c in _CSV_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise CatalogError(f"catalog CSV missing columns: {', '.join(missing)}")
    items = []
    for row in reader:
        items.append(
            _build_item(
                row["item_id"],
                row["title"],
                (row["genres"] or "").split("|"),
                row["kind"],
                row["image_url"],
            )
        )
    return items


def _load_catalog_json(stream: BinaryIO) -> list[CatalogItem]:
    try:
        data = json.load(stream)
    except json.JSONDecodeError as exc:
        raise CatalogError(f"catalog JSON is malformed: {exc}") from exc
    if not isinstance(data, list):
        raise CatalogError("catalog JSON must be an array of items")
    items = []
    for entry in data:
        genres = entry.get("genres", [])
        if isinstance(genres, str):
            genres = genres.split("|")
        items.append(
            _build_item(
                entry["item_id"], entry["title"], genres, entry["kind"], entry.get("image_url", "")
            )
        )
    return items


def load_catalog_file(path: str | Path) -> list[CatalogItem]:
    """Load a catalog file, inferring the format from the suffix."""
    path = Path(path)
    fmt = "json" if path.suffix.lower() == ".json" else "csv"
    with path.open("rb") as fh:
        return load_catalog(fh, fmt)


def _parse_watch_date(text: str) -> date:
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(text.strip(), fmt).date()
        except ValueError:
            continue
    raise ValueError(f"unparseable date {text!r}")


def parse_history(source: BinaryIO | bytes) -> tuple[list[ViewingEvent], int]:
    """Parse a viewing-history export (``Title,Date`` CSV with a header row).

    Malformed rows are skipped and counted; returns (events, failure_count).
    An unreadable stream (e.g. undecodable bytes) raises :class:`HistoryError`.
    """
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    try:
        text = source.read().decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise HistoryError(f"history stream is not valid UTF-8: {exc}") from exc

    events: list[ViewingEvent] = []
    failures = 0
    reader = csv.reader(io.StringIO(text, newline=""))
    for i, row in enumerate(reader):
        if i == 0:
            continue  # header
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 2:
            failures += 1
            continue
        title, date_text = row
        try:
            watch_date = _parse_watch_date(date_text)
        except ValueError:
            failures += 1
            continue
        events.append(ViewingEvent(raw_title=title, watch_date=watch_date))
    return events, failures


def parse_history_file(path: str | Path) -> tuple[list[ViewingEvent], int]:
    with Path(path).open("rb") as fh:
        return parse_history(fh)


def split_series_title(raw_title: str) -> tuple[str, bool]:
    """Strip an episode suffix: split on the first ': ' when the remainder
    mentions Season/Episode.  Returns (lookup title, is_episode)."""
    head, sep, tail = raw_title.partition(": ")
    if sep and _EPISODE_MARKER.search(tail):
        return head, True
    return raw_title, False


def resolve_title(raw_title: str, catalog: list[CatalogItem]) -> tuple[int, bool] | None:
    """Map an export row title to a catalog item id.

    Exact case-insensitive match after episode-suffix stripping; None when
    the title is not in the catalog.
    """
    index = {item.title.casefold(): item.item_id for item in catalog}
    name, is_episode = split_series_title(raw_title)
    item_id = index.get(name.casefold())
    if item_id is None:
        return None
    return item_id, is_episode


def max_events_in_window(dates: list[date], window_days: int = WINDOW_DAYS) -> int:
    """Largest number of events inside any window of `window_days` calendar
    days (both endpoints inclusive, so dates up to window_days-1 apart)."""
    if not dates:
        return 0
    ordered = sorted(dates)
    best = 1
    lo = 0
    for hi in range(len(ordered)):
        while (ordered[hi] - ordered[lo]).days > window_days - 1:
            lo += 1
        best = max(best, hi - lo + 1)
    return best


def _series_rating(dates: list[date]) -> int:
    peak = max_events_in_window(dates)
    if peak >= 3:
        return 5
    if peak == 2:
        return 4
    if len(dates) >= 2:
        return 3
    return 2


def derive_ratings(
    events: list[ViewingEvent], catalog: list[CatalogItem], owner: str = "local"
) -> RatingVector:
    """Derive the private star-rating vector from resolved viewing events.

    Series ratings follow watch density: 3+ episodes inside one 7-day window
    rate 5, a 2-episode week rates 4, repeat watching without a dense week
    rates 3, a single episode rates 2.  Movies always rate
    ``MOVIE_DEFAULT_RATING``.  Unresolved titles are ignored.
    """
    by_id = {item.item_id: item for item in catalog}
    index = {item.title.casefold(): item.item_id for item in catalog}

    watch_dates: dict[int, list[date]] = {}
    for event in events:
        name, _ = split_series_title(event.raw_title)
        item_id = index.get(name.casefold())
        if item_id is None:
            continue
        watch_dates.setdefault(item_id, []).append(event.watch_date)

    ratings: dict[int, int] = {}
    for item_id, dates in watch_dates.items():
        if by_id[item_id].kind is Kind.MOVIE:
            ratings[item_id] = MOVIE_DEFAULT_RATING
        else:
            ratings[item_id] = _series_rating(dates)
    return RatingVector(owner=owner, ratings=ratings)
