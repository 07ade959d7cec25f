"""Participant-side pipeline and the loopback API the study page talks to.

One round: derive private ratings from the viewing history, fetch the global
model, fine-tune locally (explicit or pairwise variant), privatize and submit
the item deltas, then build the two recommendation lists -- List A is the raw
relevance top-5, List B the diversity re-ranked top-5 from the top-50 pool.
Clicks are recorded against the open session and shipped to the aggregator as
one telemetry record when the session closes.

Everything under ``store_path`` is private to the participant; wire traffic
carries only item deltas, list item ids, and click positions.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable

import numpy as np
import requests

from .catalog import CatalogItem, derive_ratings, load_catalog_file, parse_history_file
from .factors import FactorModel, model_from_snapshot, rank_items, train_local, TrainingConfig
from .privacy import DpConfig, clip_and_noise
from .protocol import (
    Ack,
    Aggregator,
    ClickEvent,
    DpPosture,
    SessionRecord,
    UpdateMessage,
    Variant,
    encode_wire,
)
from .rerank import DEFAULT_POOL_SIZE, EmbeddingTable, MmrConfig, embeddings_for, mmr_rerank

LIST_SIZE = 5
BPR_POSITIVE_THRESHOLD = 4  # derived rating >= 4 counts as an implicit positive


class TransportError(RuntimeError):
    """Server unreachable; the operation may be retried."""


class LocalTransport:
    """In-process transport straight onto an Aggregator (simulation, tests)."""

    def __init__(self, aggregator: Aggregator):
        self._aggregator = aggregator

    def fetch_model(self, variant: Variant) -> dict:
        return self._aggregator.serve_model(variant)

    def submit_update(self, msg: UpdateMessage) -> Ack:
        return self._aggregator.submit_update(msg)

    def submit_telemetry(self, rec: SessionRecord) -> Ack:
        return self._aggregator.submit_telemetry(rec)


class HttpTransport:
    """JSON-over-HTTP transport for a remote aggregator."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _ack(self, payload: dict) -> Ack:
        return Ack(
            status=str(payload.get("status", "invalid")),
            reason=payload.get("reason"),
            duplicate=bool(payload.get("duplicate", False)),
        )

    def fetch_model(self, variant: Variant) -> dict:
        try:
            resp = requests.get(
                f"{self.base_url}/v1/model", params={"variant": variant.value}, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"aggregator unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"model fetch failed: HTTP {resp.status_code} {resp.text}")
        return resp.json()

    def _post(self, path: str, payload: dict) -> Ack:
        try:
            resp = requests.post(f"{self.base_url}{path}", json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"aggregator unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"{path} failed: HTTP {resp.status_code} {resp.text}")
        return self._ack(resp.json())

    def submit_update(self, msg: UpdateMessage) -> Ack:
        return self._post("/v1/update", encode_wire(msg))

    def submit_telemetry(self, rec: SessionRecord) -> Ack:
        return self._post("/v1/telemetry", encode_wire(rec))


@dataclass
class ClientConfig:
    """Per-participant state: identity, variant, private store, server, configs."""

    participant_id: str
    variant: Variant
    store_path: Path
    catalog_path: Path
    history_path: Path
    server: str | None = None
    embeddings_path: Path | None = None
    training: TrainingConfig = field(default_factory=TrainingConfig)
    dp: DpConfig = field(default_factory=DpConfig)
    mmr: MmrConfig = field(default_factory=MmrConfig)

    def __post_init__(self):
        if not self.participant_id:
            raise ValueError("participant_id must be non-empty")
        self.variant = Variant.parse(self.variant)
        self.store_path = Path(self.store_path)
        self.catalog_path = Path(self.catalog_path)
        self.history_path = Path(self.history_path)
        if self.embeddings_path is not None:
            self.embeddings_path = Path(self.embeddings_path)

    @classmethod
    def from_file(cls, path: str | Path) -> "ClientConfig":
        path = Path(path)
        data = json.loads(path.read_text())
        base = path.parent

        def resolve(p):
            return (base / p) if p is not None and not Path(p).is_absolute() else (Path(p) if p else None)

        return cls(
            participant_id=data["participant_id"],
            variant=Variant.parse(data["variant"]),
            store_path=resolve(data["store_path"]),
            catalog_path=resolve(data["catalog_path"]),
            history_path=resolve(data["history_path"]),
            server=data.get("server"),
            embeddings_path=resolve(data.get("embeddings_path")),
            training=TrainingConfig(**data.get("training", {})),
            dp=DpConfig(**data.get("dp", {})),
            mmr=MmrConfig(**data.get("mmr", {})),
        )


@dataclass
class DisplayEntry:
    item_id: int
    title: str
    image_url: str
    position: int  # 1-based


@dataclass
class Session:
    participant_id: str
    variant: Variant
    timestamp: str
    list_a: list[DisplayEntry]
    list_b: list[DisplayEntry]
    clicks: list[ClickEvent] = field(default_factory=list)
    closed: bool = False
    retry_pending: bool = False
    ack: Ack | None = None

    def record(self) -> SessionRecord:
        return SessionRecord(
            participant_id=self.participant_id,
            variant=self.variant,
            timestamp=self.timestamp,
            list_a=[e.item_id for e in self.list_a],
            list_b=[e.item_id for e in self.list_b],
            clicks=list(self.clicks),
        )


def _default_clock() -> datetime:
    return datetime.now(timezone.utc)


class ClientNode:
    """Drives the participant pipeline against a transport.

    Concurrency: one pipeline run at a time; session mutation (clicks, close)
    is serialized by an internal lock so the loopback UI server can call in
    from its handler threads.
    """

    def __init__(self, config: ClientConfig, transport=None, clock: Callable[[], datetime] | None = None):
        self.config = config
        if transport is None:
            if config.server is None:
                raise ValueError("either a transport or config.server is required")
            transport = HttpTransport(config.server)
        self.transport = transport
        self._clock = clock or _default_clock
        self._lock = threading.Lock()
        self.current_session: Session | None = None
        self._catalog: list[CatalogItem] | None = None
        self._embeddings: EmbeddingTable | None = None
        self.config.store_path.mkdir(parents=True, exist_ok=True)
        self._sessions_dir.mkdir(parents=True, exist_ok=True)

    @property
    def _sessions_dir(self) -> Path:
        return self.config.store_path / "sessions"

    def catalog(self) -> list[CatalogItem]:
        if self._catalog is None:
            self._catalog = load_catalog_file(self.config.catalog_path)
        return self._catalog

    def embeddings(self) -> EmbeddingTable:
        if self._embeddings is None:
            self._embeddings = embeddings_for(self.catalog(), self.config.embeddings_path)
        return self._embeddings

    # -- private store ------------------------------------------------------

    def _session_path(self, session: Session) -> Path:
        safe = re.sub(r"[^0-9A-Za-z]+", "-", session.timestamp)
        return self._sessions_dir / f"session_{safe}.json"

    def _persist_session(self, session: Session) -> None:
        payload = {
            "record": encode_wire(session.record()),
            "display": {
                "list_a": [vars(e) for e in session.list_a],
                "list_b": [vars(e) for e in session.list_b],
            },
            "closed": session.closed,
            "retry_pending": session.retry_pending,
            "ack": encode_wire(session.ack) if session.ack is not None else None,
        }
        self._session_path(session).write_text(json.dumps(payload))

    def past_clicked_items(self) -> set[int]:
        clicked: set[int] = set()
        for path in sorted(self._sessions_dir.glob("session_*.json")):
            data = json.loads(path.read_text())
            for click in data.get("record", {}).get("clicks", []):
                clicked.add(int(click["item_id"]))
        return clicked

    # -- pipeline -----------------------------------------------------------

    def _train_and_submit(self, model: FactorModel, ratings, positives) -> tuple[np.ndarray, Ack | None, int]:
        """Train on a copy of the fetched model; returns (p, ack, trained item count)."""
        cfg = self.config.training
        p = np.zeros(model.k, dtype=np.float64)

        trainable = bool(ratings.ratings) if self.config.variant is Variant.SVD else bool(positives)
        if not trainable:
            return p, None, 0

        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.rng_seed, spawn_key=(model.round,)))
        if self.config.variant is Variant.SVD:
            p, delta = train_local(p, model, cfg, ratings=ratings, rng=rng)
        else:
            p, delta = train_local(p, model, cfg, positives=positives, rng=rng)

        dp_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=self.config.dp.rng_seed, spawn_key=(model.round,))
        )
        private = clip_and_noise(delta, self.config.dp, dp_rng)
        msg = UpdateMessage(
            participant_id=self.config.participant_id,
            variant=self.config.variant,
            base_round=model.round,
            item_deltas=private.item_deltas,
            dp=DpPosture(clip_norm=self.config.dp.clip_norm, noise_sigma=self.config.dp.noise_sigma),
        )
        return p, self.transport.submit_update(msg), len(delta.item_deltas)

    def run_round(self) -> dict:
        """Execute one full participant round; opens and returns a new session.

        Report keys: round, trained_items, update_status, parse_failures,
        list_a, list_b, session.
        """
        catalog = self.catalog()
        events, parse_failures = parse_history_file(self.config.history_path)
        ratings = derive_ratings(events, catalog, owner=self.config.participant_id)
        positives = {i for i, r in ratings.ratings.items() if r >= BPR_POSITIVE_THRESHOLD}
        positives |= self.past_clicked_items()
        positives = {i for i in positives if i in {c.item_id for c in catalog}}

        model = model_from_snapshot(self.transport.fetch_model(self.config.variant))
        p, ack, trained = self._train_and_submit(model, ratings, positives)
        if ack is not None and ack.status == "stale":
            # Someone aggregated while we trained: refetch and retrain once.
            model = model_from_snapshot(self.transport.fetch_model(self.config.variant))
            p, ack, trained = self._train_and_submit(model, ratings, positives)

        exclude = set(ratings.ratings)
        ranked = rank_items(p, model, exclude, series_only=True, catalog=catalog)
        pool = ranked[:DEFAULT_POOL_SIZE]
        list_a_ids = [item_id for item_id, _ in ranked[:LIST_SIZE]]
        list_b_ids = mmr_rerank(pool, self.embeddings(), self.config.mmr)[:LIST_SIZE]

        by_id = {item.item_id: item for item in catalog}

        def entries(ids):
            return [
                DisplayEntry(
                    item_id=i, title=by_id[i].title, image_url=by_id[i].image_url, position=pos + 1
                )
                for pos, i in enumerate(ids)
            ]

        with self._lock:
            session = Session(
                participant_id=self.config.participant_id,
                variant=self.config.variant,
                timestamp=self._clock().isoformat(),
                list_a=entries(list_a_ids),
                list_b=entries(list_b_ids),
            )
            self.current_session = session
            self._persist_session(session)

        return {
            "participant_id": self.config.participant_id,
            "variant": self.config.variant.value,
            "round": model.round,
            "trained_items": trained,
            "update_status": ack.status if ack is not None else None,
            "parse_failures": parse_failures,
            "list_a": list_a_ids,
            "list_b": list_b_ids,
            "session": session,
        }

    # -- session interaction --------------------------------------------------

    def record_click(
        self,
        session: Session,
        item_id: int,
        source_list: str,
        position: int,
        click_time: str | None = None,
    ) -> bool:
        """Append a click to the open session; True when newly recorded,
        False for a duplicate (same item on the same list)."""
        with self._lock:
            if session.closed:
                raise ValueError("session is closed")
            lists = {"A": session.list_a, "B": session.list_b}
            if source_list not in lists:
                raise ValueError(f"unknown source_list {source_list!r}")
            entries = lists[source_list]
            if not 1 <= position <= len(entries):
                raise ValueError(f"position {position} out of range for list {source_list}")
            if entries[position - 1].item_id != item_id:
                raise ValueError(
                    f"item {item_id} is not at position {position} of list {source_list}"
                )
            if any(c.item_id == item_id and c.source_list == source_list for c in session.clicks):
                return False
            session.clicks.append(
                ClickEvent(
                    item_id=item_id,
                    source_list=source_list,
                    position=position,
                    click_time=click_time or self._clock().isoformat(),
                )
            )
            self._persist_session(session)
            return True

    def close_session(self, session: Session) -> Ack | None:
        """Submit the session's telemetry; the local copy is always retained.

        On transport failure the session is kept with a retry flag and None is
        returned.  Closing an already-closed session is a no-op.
        """
        with self._lock:
            if session.closed:
                return session.ack
            record = session.record()
            try:
                ack = self.transport.submit_telemetry(record)
            except TransportError:
                session.retry_pending = True
                self._persist_session(session)
                return None
            session.ack = ack
            session.closed = True
            session.retry_pending = ack.status != "accepted"
            self._persist_session(session)
            return ack


# -- loopback API for the study page -----------------------------------------


def _session_payload(session: Session) -> dict:
    def entries(items):
        return [
            {"item_id": e.item_id, "title": e.title, "image_url": e.image_url, "position": e.position}
            for e in items
        ]

    return {
        "participant_id": session.participant_id,
        "variant": session.variant.value,
        "timestamp": session.timestamp,
        "closed": session.closed,
        "clicks": len(session.clicks),
        "list_a": entries(session.list_a),
        "list_b": entries(session.list_b),
    }


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}

_PLAIN_INDEX = """<!doctype html>
<html><head><title>study client</title></head>
<body><h1>Study client is running</h1>
<p>No UI bundle is configured. The loopback API is available at
<code>GET /session/current</code>, <code>POST /session/click</code>,
<code>POST /session/close</code>.</p></body></html>
"""


def _make_ui_handler(node: ClientNode, ui_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _reply(self, code: int, payload: dict):
            body = json.dumps(payload).encode("utf-8")
            self._raw(code, body, "application/json")

        def _raw(self, code: int, body: bytes, ctype: str):
            self.send_response(code)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/session/current":
                session = node.current_session
                if session is None:
                    self._reply(404, {"error": "no_session"})
                else:
                    self._reply(200, _session_payload(session))
                return
            self._serve_static()

        def _serve_static(self):
            path = self.path.split("?", 1)[0]
            if path == "/":
                path = "/index.html"
            if ui_dir is None:
                if path == "/index.html":
                    self._raw(200, _PLAIN_INDEX.encode("utf-8"), "text/html; charset=utf-8")
                else:
                    self._reply(404, {"error": "not_found"})
                return
            target = (ui_dir / path.lstrip("/")).resolve()
            if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
                self._reply(404, {"error": "not_found"})
                return
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self._raw(200, target.read_bytes(), ctype)

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                data = json.loads(self.rfile.read(length).decode("utf-8")) if length else {}
            except (json.JSONDecodeError, UnicodeDecodeError):
                self._reply(400, {"status": "rejected", "reason": "malformed JSON"})
                return
            session = node.current_session
            if session is None:
                self._reply(404, {"error": "no_session"})
                return
            if self.path == "/session/click":
                try:
                    added = node.record_click(
                        session,
                        item_id=int(data["item_id"]),
                        source_list=str(data["source_list"]),
                        position=int(data["position"]),
                        click_time=data.get("click_time"),
                    )
                except (KeyError, TypeError) as exc:
                    self._reply(400, {"status": "rejected", "reason": f"bad click payload: {exc}"})
                except ValueError as exc:
                    self._reply(400, {"status": "rejected", "reason": str(exc)})
                else:
                    self._reply(200, {"status": "accepted", "duplicate": not added})
            elif self.path == "/session/close":
                ack = node.close_session(session)
                self._reply(
                    200,
                    {
                        "status": "closed",
                        "submitted": ack is not None and ack.status == "accepted",
                        "retry_pending": session.retry_pending,
                        "clicks": len(session.clicks),
                    },
                )
            else:
                self._reply(404, {"error": "unknown_endpoint"})

    return Handler


class StudyUiServer:
    """Loopback-only HTTP server exposing the session API (and, optionally,
    a static UI bundle) to the participant's browser."""

    def __init__(self, node: ClientNode, port: int = 0, ui_dir: str | Path | None = None):
        ui_path = Path(ui_dir) if ui_dir is not None else None
        self._httpd = ThreadingHTTPServer(("127.0.0.1", port), _make_ui_handler(node, ui_path))
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "StudyUiServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="study-ui", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def __enter__(self) -> "StudyUiServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
