"""Command-line entry point: ``coughkit <subcommand> [flags]``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import FIELD_TYPES, PipelineConfig, convert, load_config
from .errors import ConfigError, DataError, FormatError, StageError, WavError
from .manifest import read_manifest, write_manifest
from .pipeline import (SWEEP_COLUMNS, Context, read_metrics, run_pipeline, run_stage, sweep)
from .report import report
from .synth import SynthSpec, write_corpus

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 2, 3, 4
STAGE_COMMANDS = ("prepare", "detect", "segment", "featurize", "augment", "train", "eval")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file; flags override it")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, default=None, metavar=FIELD_TYPES[f.name].__name__.upper(),
                       type=lambda text, key=f.name: convert(key, text))


def _config(args) -> PipelineConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(PipelineConfig)}
    return load_config(args.config, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coughkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGE_COMMANDS:
        _add_config_flags(sub.add_parser(name, help=f"run the {name} stage on a manifest"))
    _add_config_flags(sub.add_parser("run", help="run all enabled stages end to end"))

    sw = sub.add_parser("sweep", help="rerun the pipeline for each value of one parameter")
    _add_config_flags(sw)
    sw.add_argument("--dimension", required=True, choices=sorted(SWEEP_COLUMNS))
    sw.add_argument("--values", required=True, help="comma-separated values")

    sy = sub.add_parser("synth", help="generate the synthetic burst-train corpus")
    defaults = SynthSpec()
    for f in fields(SynthSpec):
        if f.name == "sources":
            continue
        sy.add_argument("--" + f.name.replace("_", "-"), dest=f.name,
                        type=type(getattr(defaults, f.name)), default=getattr(defaults, f.name))
    sy.add_argument("--out-dir", required=True)

    rp = sub.add_parser("report", help="histogram tables and summary for a manifest")
    rp.add_argument("--manifest", required=True)
    rp.add_argument("--detections", help="manifest carrying detection_prob for every scored row")
    rp.add_argument("--metrics", help="metrics CSV (metric,value)")
    rp.add_argument("--out-dir", required=True)
    return parser


def _stage(name, args):
    cfg = _config(args)
    if not cfg.manifest:
        raise ConfigError("--manifest is required")
    cfg.validate()
    rows = read_manifest(cfg.manifest)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out_dir)
    rows = run_stage(name, rows, ctx)
    path = out_dir / "manifests" / f"{name}.csv"
    write_manifest(path, rows)
    if ctx.detections:
        write_manifest(out_dir / "manifests" / "detection_scores.csv", ctx.detections)
    print(f"{name}: {len(rows)} rows -> {path}")
    if name == "eval" and ctx.metrics is not None:
        for k, v in ctx.metrics.rows():
            print(f"{k},{v}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in STAGE_COMMANDS:
            _stage(args.command, args)
        elif args.command == "run":
            res = run_pipeline(_config(args))
            print("rows per stage: " + ", ".join(f"{k}={v}" for k, v in res.stage_counts.items()))
            if res.metrics is not None:
                print(f"devel unweighted_accuracy,{res.metrics.unweighted_accuracy!r}")
            if res.test_metrics is not None:
                print(f"test unweighted_accuracy,{res.test_metrics.unweighted_accuracy!r}")
        elif args.command == "sweep":
            cfg = _config(args)
            key = {"split_ratio": "split_fraction"}.get(args.dimension, args.dimension)
            values = [convert(key, v) for v in args.values.split(",") if v.strip()]
            out_csv = Path(cfg.out_dir) / f"sweep_{args.dimension}.csv"
            table = sweep(cfg.validate(), args.dimension, values, out_csv)
            for rec in table:
                print(",".join(rec.values()))
            print(f"-> {out_csv}")
        elif args.command == "synth":
            spec = SynthSpec(**{f.name: getattr(args, f.name) for f in fields(SynthSpec) if f.name != "sources"})
            print(write_corpus(spec, args.out_dir))
        elif args.command == "report":
            rows = read_manifest(args.manifest)
            det = read_manifest(args.detections) if args.detections else None
            metrics = read_metrics(args.metrics) if args.metrics else None
            for p in report(rows, args.out_dir, metrics, det):
                print(p)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        data = isinstance(e.cause, (DataError, WavError, FormatError, FileNotFoundError))
        return EXIT_DATA if data else EXIT_STAGE
    except (DataError, WavError, FormatError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
