"""Command-line harness: generate, mine, train, evaluate, explain, ablate.

Exit codes: 0 success, 2 configuration or input error, 3 missing artifact,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys

from . import pipeline
from .config import load_config
from .correction import AUDIT_HEADER
from .errors import ConfigError, DataFormatError, MissingArtifactError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--seed", type=int, help="seed for splitting, generation and training")
    p.add_argument("--out", default="runs", help="output root for stage directories (default: runs)")
    p.add_argument("--strict", action="store_true", help="treat unknown codes in inputs as errors")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--wo-C", dest="wo_C", action="store_true", help="co-occurrence instead of causal relations")
    p.add_argument("--wo-F", dest="wo_F", action="store_true", help="free medication embeddings, no molecules")
    p.add_argument("--wo-BC", dest="wo_BC", action="store_true", help="skip bias correction at evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="medcausal", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    sub.add_parser("mine", parents=[common], help="causal graphs, effects and strata on the training split")
    sub.add_parser("train", parents=[common], help="train the recommender")
    ev = sub.add_parser("evaluate", parents=[common], help="bootstrap evaluation on the test split")
    ev.add_argument("--checkpoint", help="explicit checkpoint path")
    ex = sub.add_parser("explain", parents=[common], help="per-medication correction audit of one patient")
    ex.add_argument("--patient", required=True)
    ex.add_argument("--checkpoint")
    sub.add_parser("ablate", parents=[common], help="run every ablation variant")
    sub.add_parser("run", parents=[common], help="generate, mine, train and evaluate in one go")
    return parser


def config_from_args(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    for flag in ("wo_C", "wo_F", "wo_BC"):
        if getattr(args, flag):
            overrides[flag] = True
    return load_config(args.config, overrides)


def _dispatch(args) -> int:
    cfg = config_from_args(args)
    out, strict = args.out, args.strict
    if args.command == "generate":
        print(pipeline.run_generate(cfg, out))
    elif args.command == "mine":
        target = pipeline.run_mine(cfg, out, strict)
        print(target)
        print((target / "summary.json").read_text().strip())
    elif args.command == "train":
        print(pipeline.run_train(cfg, out, strict))
    elif args.command == "evaluate":
        target = pipeline.run_evaluate(cfg, out, strict, args.checkpoint)
        print(target)
        print((target / "report.csv").read_text().strip())
    elif args.command == "explain":
        rows = pipeline.explain(cfg, out, args.patient, strict, args.checkpoint)
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(AUDIT_HEADER)
        w.writerows(rows)
    elif args.command == "ablate":
        target = pipeline.run_ablation(cfg, out, strict)
        print(target)
        print(target.read_text().strip())
    elif args.command == "run":
        target = pipeline.run_all(cfg, out, strict)
        print(target)
        print((target / "report.csv").read_text().strip())
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
