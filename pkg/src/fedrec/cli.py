"""Command-line entry points.

    fedrec simulate    run the desk-scale federated simulation
    fedrec metrics     compute the metric report from telemetry logs
    fedrec aggregator  serve the global models over HTTP
    fedrec client      run one participant round (optionally serving the study UI)
    fedrec embed       materialize fallback title embeddings for a catalog
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .catalog import load_catalog_file
from .client import ClientConfig, ClientNode, StudyUiServer, TransportError
from .metrics import build_report, genre_distribution, write_genre_distribution
from .privacy import DpConfig
from .protocol import Aggregator, Variant, read_telemetry
from .rerank import EmbeddingTable, FALLBACK_DIM, MmrConfig, embeddings_for
from .server import AggregatorServer
from .sim import SimConfig, run_simulation


def _add_simulate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("simulate", help="run a seeded federated simulation")
    p.add_argument("--clients", type=int, default=20)
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="svd")
    p.add_argument("--latent-dim", type=int, default=8, help="model latent dimension k")
    p.add_argument("--true-latent-dim", type=int, default=8, help="rank of the synthetic preference matrix")
    p.add_argument("--catalog-size", type=int, default=200)
    p.add_argument("--mmr-lambda", type=float, default=0.3)
    p.add_argument("--dp-sigma", type=float, default=0.0)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--temperature", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=None, help="local epochs (default: per-variant)")
    p.add_argument("--learning-rate", type=float, default=None, help="local learning rate (default: per-variant)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")


def _cmd_simulate(args: argparse.Namespace) -> int:
    training = None
    if args.epochs is not None or args.learning_rate is not None:
        from dataclasses import replace

        from .sim import _VARIANT_TRAINING

        training = _VARIANT_TRAINING[Variant.parse(args.variant)]
        if args.epochs is not None:
            training = replace(training, epochs=args.epochs)
        if args.learning_rate is not None:
            training = replace(training, learning_rate=args.learning_rate)
    cfg = SimConfig(
        clients=args.clients,
        rounds=args.rounds,
        catalog_size=args.catalog_size,
        true_k=args.true_latent_dim,
        k=args.latent_dim,
        variant=Variant.parse(args.variant),
        click_temperature=args.temperature,
        seed=args.seed,
        training=training,
        dp=DpConfig(clip_norm=args.clip_norm, noise_sigma=args.dp_sigma, rng_seed=args.seed),
        mmr=MmrConfig(lambda_param=args.mmr_lambda),
        workers=args.workers,
    )
    result = run_simulation(cfg, args.out)
    first, last = result.trace[0], result.trace[-1]
    print(f"simulation complete: {args.rounds} rounds, {args.clients} clients, variant={args.variant}")
    if first["rmse"] is not None and last["rmse"] is not None:
        print(f"held-out RMSE: {first['rmse']:.4f} -> {last['rmse']:.4f}")
    if last["auc"] is not None:
        print(f"held-out pairwise AUC: {last['auc']:.4f}")
    print(f"report: {result.report_path}")
    print(f"trace: {result.trace_path}")
    print(f"genre distribution: {result.genre_path}")
    return 0


def _add_metrics(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("metrics", help="compute the metric report from telemetry logs")
    p.add_argument("--log", action="append", required=True, help="telemetry NDJSON file (repeatable)")
    p.add_argument("--catalog", required=True)
    p.add_argument("--embeddings", default=None, help="embedding JSON file (fallback embeddings when omitted)")
    p.add_argument("--out", default=None, help="directory for report.json and genre_distribution.csv")


def _cmd_metrics(args: argparse.Namespace) -> int:
    catalog = load_catalog_file(args.catalog)
    emb = embeddings_for(catalog, args.embeddings)
    sessions = []
    for log in args.log:
        sessions.extend(read_telemetry(log))
    report = build_report(sessions, emb)
    print(json.dumps(report, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2))
        write_genre_distribution(genre_distribution(sessions, catalog), out / "genre_distribution.csv")
        print(f"wrote {out / 'report.json'} and {out / 'genre_distribution.csv'}", file=sys.stderr)
    return 0


def _add_aggregator(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("aggregator", help="serve the global models over HTTP")
    p.add_argument("--catalog", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--log-dir", default="telemetry")
    p.add_argument("--agg-dp-sigma", type=float, default=0.0, help="aggregator-side noise multiplier (0 = off)")
    p.add_argument("--agg-clip-norm", type=float, default=1.0)


def _cmd_aggregator(args: argparse.Namespace) -> int:
    catalog = load_catalog_file(args.catalog)
    dp = None
    if args.agg_dp_sigma > 0:
        dp = DpConfig(
            clip_norm=args.agg_clip_norm, noise_sigma=args.agg_dp_sigma,
            rng_seed=args.seed, aggregator_side=True,
        )
    aggregator = Aggregator(
        catalog_size=len(catalog),
        k=args.k,
        seed=args.seed,
        item_ids=[item.item_id for item in catalog],
        dp=dp,
        log_dir=args.log_dir,
    )
    server = AggregatorServer(aggregator, host=args.host, port=args.port)
    print(f"aggregator listening on {server.address} (catalog of {len(catalog)}, k={args.k})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down")
    return 0


def _add_client(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("client", help="run one participant round")
    p.add_argument("--config", required=True, help="participant config JSON")
    p.add_argument("--serve-ui", action="store_true", help="serve the study page after the round")
    p.add_argument("--ui-port", type=int, default=8080)
    p.add_argument("--ui-dir", default=None, help="directory with the built study UI")


def _cmd_client(args: argparse.Namespace) -> int:
    config = ClientConfig.from_file(args.config)
    node = ClientNode(config)
    try:
        report = node.run_round()
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("the aggregator is unreachable; retry once it is up", file=sys.stderr)
        return 1
    print(f"round {report['round']}: trained {report['trained_items']} items, "
          f"update={report['update_status'] or 'skipped'}")
    print(f"list A: {report['list_a']}")
    print(f"list B: {report['list_b']}")
    if args.serve_ui:
        server = StudyUiServer(node, port=args.ui_port, ui_dir=args.ui_dir)
        print(f"study page at {server.address} (Ctrl-C to stop)")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            print("stopping UI server")
    return 0


def _add_embed(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("embed", help="write fallback title embeddings for a catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=FALLBACK_DIM)


def _cmd_embed(args: argparse.Namespace) -> int:
    catalog = load_catalog_file(args.catalog)
    EmbeddingTable.from_catalog(catalog, dim=args.dim).save(args.out)
    print(f"wrote {len(catalog)} embeddings (dim={args.dim}) to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fedrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_metrics(sub)
    _add_aggregator(sub)
    _add_client(sub)
    _add_embed(sub)
    args = parser.parse_args(argv)
    commands = {
        "simulate": _cmd_simulate,
        "metrics": _cmd_metrics,
        "aggregator": _cmd_aggregator,
        "client": _cmd_client,
        "embed": _cmd_embed,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
