"""Federated TV-series recommender with DP-noised updates and MMR re-ranking."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .catalog import (
    CatalogItem,
    Kind,
    RatingVector,
    ViewingEvent,
    derive_ratings,
    load_catalog,
    parse_history,
    resolve_title,
)
from .client import ClientConfig, ClientNode, HttpTransport, LocalTransport, StudyUiServer
from .factors import (
    FactorModel,
    LocalDelta,
    TrainingConfig,
    UserFactors,
    bpr_epoch,
    init_model,
    predict,
    rank_items,
    svd_sgd_epoch,
    train_local,
)
from .metrics import build_report
from .privacy import DpConfig, clip_and_noise
from .protocol import Aggregator, SessionRecord, UpdateMessage, Variant
from .rerank import EmbeddingTable, MmrConfig, cosine_sim, embed_fallback, mmr_rerank
from .server import AggregatorServer
from .sim import SimConfig, generate_world, run_simulation, simulate_click

__version__ = "0.1.0"

__all__ = [
    "Aggregator",
    "AggregatorServer",
    "CatalogItem",
    "ClientConfig",
    "ClientNode",
    "DpConfig",
    "EmbeddingTable",
    "FactorModel",
    "HttpTransport",
    "KERNEL_BACKEND",
    "Kind",
    "LocalDelta",
    "LocalTransport",
    "MmrConfig",
    "RatingVector",
    "SessionRecord",
    "SimConfig",
    "StudyUiServer",
    "TrainingConfig",
    "UpdateMessage",
    "UserFactors",
    "Variant",
    "ViewingEvent",
    "bpr_epoch",
    "build_report",
    "clip_and_noise",
    "cosine_sim",
    "derive_ratings",
    "embed_fallback",
    "generate_world",
    "init_model",
    "load_catalog",
    "mmr_rerank",
    "parse_history",
    "predict",
    "rank_items",
    "resolve_title",
    "run_simulation",
    "simulate_click",
    "svd_sgd_epoch",
    "train_local",
]
