"""Command line front end.

Every data-producing subcommand is a thin wrapper over `radvqa.pipeline`;
`serve` hosts the HTTP service. Exit codes: 0 on success, 2 for configuration
or usage problems, 3 when a stage fails. Failures also print one JSON line to
stderr with the shape {"error": ..., "stage": ..., "detail": ...} so wrappers
can parse outcomes without scraping text.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .configio import ConfigError, RunConfig, load_config
from .corpus import load_manifest
from .mixer import index_pathologies, load_taxonomy, stats_report
from .pipeline import (
    PipelineError,
    run_ablate,
    run_pipeline,
    stage_evaluate,
    stage_ingest,
    stage_mix,
    stage_qagen,
    stage_saliency,
    stage_scaling,
    stage_train1,
    stage_train2,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _error_line(kind: str, stage: Optional[str], detail: str) -> None:
    print(json.dumps({"error": kind, "stage": stage, "detail": detail}),
          file=sys.stderr)


def _progress(stage: str) -> None:
    print(f"[radvqa] running {stage}", file=sys.stderr)


def _load(args) -> RunConfig:
    return load_config(args.config)


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the run TOML")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radvqa",
        description="Dataset curation, toy VLM training, evaluation, and "
                    "attention inspection for radiology visual QA.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read a raw corpus into a manifest and splits")
    _add_config(p)

    p = sub.add_parser("qagen", help="generate QA pairs from a caption corpus")
    _add_config(p)

    p = sub.add_parser("mix", help="anneal generated QA into the base corpus")
    _add_config(p)

    p = sub.add_parser("stats", help="print corpus statistics as JSON")
    _add_config(p)
    p.add_argument("--dataset", help="manifest to report on "
                                     "(default: <out_dir>/ingest/manifest.jsonl)")

    p = sub.add_parser("train-stage1", help="full-model finetune from the base checkpoint")
    _add_config(p)
    p.add_argument("--train-data", help="override the training manifest")
    p.add_argument("--eval-data", help="override the eval manifest")

    p = sub.add_parser("train-stage2", help="low-rank adapter finetune")
    _add_config(p)
    p.add_argument("--from", dest="from_checkpoint",
                   help="starting checkpoint (default: stage-1 output)")
    p.add_argument("--train-data", help="override the training manifest")
    p.add_argument("--eval-data", help="override the eval manifest")

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    _add_config(p)
    p.add_argument("--checkpoint", help="checkpoint to score "
                                        "(default: stage-2 output)")
    p.add_argument("--dataset", help="manifest to score on "
                                     "(default: <out_dir>/mix/test.jsonl)")

    p = sub.add_parser("ablate", help="compare training arms on shared datasets")
    _add_config(p)

    p = sub.add_parser("scaling-fit", help="fit the loss curve to measured points")
    _add_config(p)
    p.add_argument("--points", help="override the points csv")

    p = sub.add_parser("saliency-export", help="export an attention map for one record")
    _add_config(p)
    p.add_argument("--checkpoint", help="checkpoint to inspect "
                                        "(default: stage-2 output)")
    p.add_argument("--dataset", help="manifest holding the record "
                                     "(default: <out_dir>/mix/test.jsonl)")

    p = sub.add_parser("pipeline", help="run every stage in order")
    _add_config(p)

    p = sub.add_parser("serve", help="host the inspection HTTP service")
    p.add_argument("--config", help="optional run TOML for [serve] defaults")
    p.add_argument("--checkpoint", help="checkpoint to serve for inference")
    p.add_argument("--port", type=int, help="listen port (default 8000)")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--data-dir", help="where cases and verdicts are stored")

    return parser


def _cmd_stats(cfg: RunConfig, args) -> int:
    path = Path(args.dataset) if args.dataset \
        else Path(cfg.run.out_dir) / "ingest" / "manifest.jsonl"
    if not path.exists():
        raise PipelineError("stats", f"manifest not found at {path}")
    manifest = load_manifest(path)
    index = None
    if cfg.data.taxonomy:
        index = index_pathologies(manifest, load_taxonomy(cfg.data.taxonomy))
    report = stats_report(manifest, index=index,
                          top_k=cfg.mix.top_k_pathologies)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .service import create_app

    cfg = load_config(args.config) if args.config else None
    port = args.port if args.port is not None else \
        (cfg.serve.port if cfg else 8000)
    data_dir = args.data_dir or (cfg.serve.data_dir if cfg else "service-data")
    checkpoint = args.checkpoint or (cfg.serve.checkpoint if cfg else "")
    if checkpoint and not Path(checkpoint).exists():
        raise PipelineError("serve", f"checkpoint not found at {checkpoint}")
    app = create_app(data_dir, checkpoint_path=checkpoint or None)

    import uvicorn
    print(f"[radvqa] serving on http://{args.host}:{port} "
          f"(data dir {data_dir})", file=sys.stderr)
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help; pass both through
        return int(e.code or 0)

    try:
        if args.command == "serve":
            return _cmd_serve(args)

        cfg = _load(args)
        if args.command == "ingest":
            stage_ingest(cfg)
        elif args.command == "qagen":
            stage_qagen(cfg)
        elif args.command == "mix":
            stage_mix(cfg)
        elif args.command == "stats":
            return _cmd_stats(cfg, args)
        elif args.command == "train-stage1":
            stage_train1(cfg, train_data=args.train_data,
                         eval_data=args.eval_data)
        elif args.command == "train-stage2":
            stage_train2(cfg, from_checkpoint=args.from_checkpoint,
                         train_data=args.train_data, eval_data=args.eval_data)
        elif args.command == "evaluate":
            stage_evaluate(cfg, checkpoint=args.checkpoint,
                           dataset=args.dataset)
        elif args.command == "ablate":
            run_ablate(cfg)
        elif args.command == "scaling-fit":
            stage_scaling(cfg, points=args.points)
        elif args.command == "saliency-export":
            stage_saliency(cfg, checkpoint=args.checkpoint,
                           dataset=args.dataset)
        elif args.command == "pipeline":
            run_pipeline(cfg, progress=_progress)
        else:    # unreachable with required=True
            parser.error(f"unknown command {args.command!r}")
    except ConfigError as e:
        _error_line("config", None, str(e))
        return EXIT_CONFIG
    except PipelineError as e:
        _error_line("stage", e.stage, str(e))
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
