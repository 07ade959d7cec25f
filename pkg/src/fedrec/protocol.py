"""Wire messages and the aggregator's round lifecycle.

Clients fetch the per-variant global model, submit clipped-and-noised item
deltas, and upload study telemetry.  Wire messages are plain JSON objects
whose field names are fixed by the schemas below; private client data
(ratings, viewing history, user factors) has no wire encoding at all, which
is what the privacy-boundary tests assert.

An update is accepted only for the current round; older rounds are
acknowledged as stale and discarded.  ``aggregate_round`` folds the buffered
updates into the model (per-item mean over the clients that touched the
item), optionally re-noises the means, clears the buffer, and bumps the
round counter.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
import numpy as np

from .factors import FactorModel, init_model, model_to_snapshot
from .privacy import DpConfig, clip_and_noise_vectors


class Variant(str, Enum):
    SVD = "svd"
    BPR = "bpr"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ProtocolError("unknown_variant", f"unknown variant {value!r}") from None


class ProtocolError(Exception):
    """Protocol-level failure with a stable error code."""

    def __init__(self, code: str, message: str | None = None):
        super().__init__(message or code)
        self.code = code


# Field names of every message that may cross the wire. The schema doubles as
# the privacy boundary: anything not listed here has no wire encoding.
WIRE_FIELDS: dict[str, tuple[str, ...]] = {
    "model_snapshot": ("round", "k", "item_ids", "Q"),
    "update_message": ("participant_id", "variant", "base_round", "item_deltas", "dp"),
    "dp_posture": ("clip_norm", "noise_sigma"),
    "session_record": ("participant_id", "variant", "timestamp", "list_a", "list_b", "clicks"),
    "click_event": ("item_id", "source_list", "position", "click_time"),
    "ack": ("status", "reason", "duplicate"),
}


@dataclass(frozen=True)
class DpPosture:
    clip_norm: float
    noise_sigma: float


@dataclass(frozen=True)
class ClickEvent:
    item_id: int
    source_list: str  # "A" or "B"
    position: int  # 1-based within the list
    click_time: str  # ISO-8601


@dataclass
class UpdateMessage:
    participant_id: str
    variant: Variant
    base_round: int
    item_deltas: dict[int, np.ndarray]
    dp: DpPosture


@dataclass
class SessionRecord:
    participant_id: str
    variant: Variant
    timestamp: str  # ISO-8601; (participant_id, timestamp) is the idempotency key
    list_a: list[int]
    list_b: list[int]
    clicks: list[ClickEvent] = field(default_factory=list)


@dataclass(frozen=True)
class Ack:
    status: str  # accepted | stale | invalid | rejected
    reason: str | None = None
    duplicate: bool = False


_ENCODERS = {}


def _encodes(cls):
    def register(fn):
        _ENCODERS[cls] = fn
        return fn

    return register


def encode_wire(obj) -> dict:
    """JSON-ready dict for a registered wire message type.

    Raises TypeError for anything else -- private types such as rating
    vectors and viewing events are deliberately not encodable.
    """
    encoder = _ENCODERS.get(type(obj))
    if encoder is None:
        raise TypeError(f"{type(obj).__name__} has no wire encoding")
    return encoder(obj)


@_encodes(UpdateMessage)
def _encode_update(msg: UpdateMessage) -> dict:
    return {
        "participant_id": msg.participant_id,
        "variant": msg.variant.value,
        "base_round": msg.base_round,
        "item_deltas": {str(item): np.asarray(vec, dtype=np.float64).tolist() for item, vec in msg.item_deltas.items()},
        "dp": {"clip_norm": msg.dp.clip_norm, "noise_sigma": msg.dp.noise_sigma},
    }


@_encodes(SessionRecord)
def _encode_session(rec: SessionRecord) -> dict:
    return {
        "participant_id": rec.participant_id,
        "variant": rec.variant.value,
        "timestamp": rec.timestamp,
        "list_a": list(rec.list_a),
        "list_b": list(rec.list_b),
        "clicks": [
            {
                "item_id": c.item_id,
                "source_list": c.source_list,
                "position": c.position,
                "click_time": c.click_time,
            }
            for c in rec.clicks
        ],
    }


@_encodes(Ack)
def _encode_ack(ack: Ack) -> dict:
    return {"status": ack.status, "reason": ack.reason, "duplicate": ack.duplicate}


def update_from_wire(data: dict) -> UpdateMessage:
    dp = data.get("dp") or {}
    return UpdateMessage(
        participant_id=str(data["participant_id"]),
        variant=Variant.parse(data["variant"]),
        base_round=int(data["base_round"]),
        item_deltas={int(item): np.asarray(vec, dtype=np.float64) for item, vec in data["item_deltas"].items()},
        dp=DpPosture(clip_norm=float(dp.get("clip_norm", 0.0)), noise_sigma=float(dp.get("noise_sigma", 0.0))),
    )


def session_from_wire(data: dict) -> SessionRecord:
    return SessionRecord(
        participant_id=str(data["participant_id"]),
        variant=Variant.parse(data["variant"]),
        timestamp=str(data["timestamp"]),
        list_a=[int(i) for i in data["list_a"]],
        list_b=[int(i) for i in data["list_b"]],
        clicks=[
            ClickEvent(
                item_id=int(c["item_id"]),
                source_list=str(c["source_list"]),
                position=int(c["position"]),
                click_time=str(c["click_time"]),
            )
            for c in data.get("clicks", [])
        ],
    )


def validate_session(rec: SessionRecord) -> str | None:
    """Reason string when the record violates its invariants, else None."""
    for label, items in (("list_a", rec.list_a), ("list_b", rec.list_b)):
        if len(items) != 5:
            return f"{label} must contain exactly 5 item_ids, got {len(items)}"
        if len(set(items)) != len(items):
            return f"{label} contains duplicate item_ids"
    lists = {"A": rec.list_a, "B": rec.list_b}
    for click in rec.clicks:
        if click.source_list not in lists:
            return f"click has unknown source_list {click.source_list!r}"
        if not 1 <= click.position <= 5:
            return f"click position {click.position} out of range 1..5"
        if lists[click.source_list][click.position - 1] != click.item_id:
            return (
                f"click names item {click.item_id} at position {click.position} "
                f"of list {click.source_list}, which shows a different item"
            )
    return None


class TelemetryLog:
    """Append-only session store, optionally durable as per-variant NDJSON files.

    Idempotent on the (participant_id, timestamp) key; existing log files are
    replayed on startup so restarts keep deduplicating.
    """

    def __init__(self, log_dir: str | Path | None = None):
        self._dir = Path(log_dir) if log_dir is not None else None
        self._records: dict[Variant, list[SessionRecord]] = {v: [] for v in Variant}
        self._seen: set[tuple[str, str]] = set()
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            for variant in Variant:
                path = self._path(variant)
                if path.exists():
                    for rec in read_telemetry(path):
                        self._records[variant].append(rec)
                        self._seen.add((rec.participant_id, rec.timestamp))

    def _path(self, variant: Variant) -> Path:
        return self._dir / f"telemetry_{variant.value}.ndjson"

    def append(self, rec: SessionRecord) -> bool:
        """Store the record; False when the idempotency key was already seen."""
        key = (rec.participant_id, rec.timestamp)
        if key in self._seen:
            return False
        self._seen.add(key)
        self._records[rec.variant].append(rec)
        if self._dir is not None:
            with self._path(rec.variant).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(encode_wire(rec)) + "\n")
        return True

    def sessions(self, variant: Variant | None = None) -> list[SessionRecord]:
        if variant is not None:
            return list(self._records[variant])
        return [rec for v in Variant for rec in self._records[v]]


def read_telemetry(path: str | Path) -> list[SessionRecord]:
    """Parse a newline-delimited JSON telemetry log."""
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(session_from_wire(json.loads(line)))
    return records


class Aggregator:
    """Holds the per-variant global models and merges buffered client updates.

    serve_model and submit_update may be called concurrently; aggregate_round
    takes the same lock exclusively while it rewrites the model.
    """

    def __init__(
        self,
        catalog_size: int,
        k: int,
        seed: int,
        item_ids: list[int] | None = None,
        dp: DpConfig | None = None,
        log_dir: str | Path | None = None,
    ):
        self._models: dict[Variant, FactorModel] = {
            variant: init_model(catalog_size, k, seed, item_ids=item_ids) for variant in Variant
        }
        self._buffers: dict[Variant, list[UpdateMessage]] = {variant: [] for variant in Variant}
        self._lock = threading.RLock()
        self._dp = dp
        self._dp_rng = np.random.default_rng(dp.rng_seed) if dp is not None else None
        self.telemetry = TelemetryLog(log_dir)

    def model(self, variant: Variant) -> FactorModel:
        with self._lock:
            return self._models[Variant.parse(variant)]

    def serve_model(self, variant: Variant | str) -> dict:
        """Current global model snapshot: {round, k, item_ids, Q}."""
        with self._lock:
            return model_to_snapshot(self._models[Variant.parse(variant)])

    def submit_update(self, msg: UpdateMessage) -> Ack:
        with self._lock:
            model = self._models[msg.variant]
            if msg.base_round < model.round:
                return Ack(status="stale", reason=f"base_round {msg.base_round} < current round {model.round}")
            if msg.base_round > model.round:
                return Ack(status="invalid", reason=f"base_round {msg.base_round} is ahead of current round {model.round}")
            for item_id, vec in msg.item_deltas.items():
                if item_id not in model:
                    return Ack(status="invalid", reason=f"unknown item_id {item_id}")
                if np.asarray(vec).shape != (model.k,):
                    return Ack(status="invalid", reason=f"dimension mismatch for item {item_id}: expected length {model.k}")
                if not np.isfinite(np.asarray(vec, dtype=np.float64)).all():
                    return Ack(status="invalid", reason=f"non-finite delta for item {item_id}")
            self._buffers[msg.variant].append(msg)
            return Ack(status="accepted")

    def pending_updates(self, variant: Variant | str) -> int:
        with self._lock:
            return len(self._buffers[Variant.parse(variant)])

    def aggregate_round(self, variant: Variant | str) -> int:
        """Fold buffered updates into the global model; returns the new round.

        Per item, the applied update is the mean over the clients that sent a
        delta for that item (contributors only; dividing by all clients would
        arbitrarily shrink updates for sparsely rated items).
        """
        variant = Variant.parse(variant)
        with self._lock:
            buffer = self._buffers[variant]
            if not buffer:
                raise ProtocolError("nothing_to_aggregate", "nothing to aggregate: no buffered updates")
            model = self._models[variant]

            # Sorting by participant id makes accumulation order independent
            # of arrival order (concurrent submitters, thread pools).
            sums: dict[int, np.ndarray] = {}
            counts: dict[int, int] = {}
            for msg in sorted(buffer, key=lambda m: m.participant_id):
                for item_id in sorted(msg.item_deltas):
                    vec = np.asarray(msg.item_deltas[item_id], dtype=np.float64)
                    if item_id in sums:
                        sums[item_id] = sums[item_id] + vec
                        counts[item_id] += 1
                    else:
                        sums[item_id] = vec.copy()
                        counts[item_id] = 1

            means = {item_id: sums[item_id] / counts[item_id] for item_id in sums}
            if self._dp is not None and self._dp.aggregator_side:
                means = clip_and_noise_vectors(means, self._dp, self._dp_rng)

            for item_id in sorted(means):
                row = model.row_of(item_id)
                model.Q[row] = model.Q[row] + means[item_id]
            buffer.clear()
            model.round += 1
            return model.round

    def submit_telemetry(self, rec: SessionRecord) -> Ack:
        reason = validate_session(rec)
        if reason is not None:
            return Ack(status="rejected", reason=reason)
        with self._lock:
            stored = self.telemetry.append(rec)
        return Ack(status="accepted", duplicate=not stored)
