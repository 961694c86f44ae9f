"""Command line entry point: ``tpmembed <command> --config run.json``.

Exit codes: 0 success, 2 configuration error, 3 stage (or validation) failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import STAGES, ConfigError, StageError, load_config, load_model, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _common(p):
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, default=1, help="threads for embedding and evaluation")
    p.add_argument("--seed", type=int, help="override every seed in the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpmembed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("fit", "learn the density estimator"),
                        ("genqueries", "generate the query set (or the patch set)"),
                        ("embed", "embed train/valid/test with a stored model"),
                        ("eval", "accuracy curve from stored embeddings")):
        _common(sub.add_parser(name, help=help_))
    run = sub.add_parser("run", help="run the pipeline end to end")
    _common(run)
    run.add_argument("--stage", action="append", choices=STAGES,
                     help="run only this stage (repeatable)")
    val = sub.add_parser("validate", help="check a config and/or a model file")
    val.add_argument("--config")
    val.add_argument("--model", help="model file (.spn or .mt)")
    val.add_argument("--out")
    return parser


def _validate(args) -> int:
    model_path = Path(args.model) if args.model else None
    if args.config:
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"config ok ({cfg.config_hash()[:12]})")
        if model_path is None:
            out = Path(args.out) if args.out else cfg.resolve(cfg.output)
            candidate = out / f"model.{cfg.model_kind}"
            model_path = candidate if candidate.exists() else None
    if model_path is None:
        if not args.config:
            print("nothing to validate: pass --config and/or --model", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        model = load_model(model_path)
    except (OSError, ValueError) as exc:
        print(f"{model_path}: invalid model\n{exc}", file=sys.stderr)
        return EXIT_STAGE
    print(f"{model_path}: ok {model!r}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return _validate(args)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        stages = tuple(s for s in STAGES if s in args.stage) if args.stage else STAGES
    else:
        stages = (args.command,)
    try:
        result = run_experiment(cfg, args.out, args.workers, stages)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    for path in result["artifacts"]:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
