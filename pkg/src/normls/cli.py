"""Command line: ``normls train | eval | embed``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import RunConfig, config_from_strings, load_config
from .errors import ConfigError, DataFormatError, NormlsError

log = logging.getLogger("normls")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _override_flags(p: argparse.ArgumentParser):
    p.add_argument("--loss", choices=("ce", "lsce", "nlsce"))
    p.add_argument("--padding", choices=("zero", "partial"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--momentum", type=float)
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--patience", type=int, dest="convergence_patience")
    p.add_argument("--data", choices=("synthetic", "cifar10"), dest="dataset",
                   help="training data source")
    p.add_argument("--dataset-path", dest="dataset_path")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


_OVERRIDE_KEYS = ("loss", "padding", "epsilon", "seed", "epochs", "batch_size", "learning_rate",
                  "momentum", "val_fraction", "convergence_patience", "dataset", "dataset_path",
                  "output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="normls", description="Train, evaluate and embed the residual classifier.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tr = sub.add_parser("train", help="train the residual classifier and write run artifacts")
    tr.add_argument("--config", type=Path)
    _override_flags(tr)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--dataset", dest="dataset_spec", default="val",
                    help="train, val, all, cifar10-test, or a saved dataset file (default: val)")
    ev.add_argument("--config", type=Path, help="run config (default: config.echo next to the checkpoint)")
    ev.add_argument("--report", type=Path, help="also write the report to this JSON file")
    _override_flags(ev)

    em = sub.add_parser("embed", help="t-SNE of penultimate features")
    em.add_argument("--checkpoint", type=Path, required=True)
    em.add_argument("--dataset", dest="dataset_spec", default="val")
    em.add_argument("--config", type=Path)
    em.add_argument("--perplexity", type=float)
    em.add_argument("--subsample", type=int, default=0)
    _override_flags(em)
    return parser


def _collect_overrides(args) -> dict:
    values = {k: getattr(args, k) for k in _OVERRIDE_KEYS if getattr(args, k, None) is not None}
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        pairs[key.strip()] = raw.strip()
    values.update(config_from_strings(pairs))
    return values


def _resolve_config(args, fallback: Path | None = None) -> RunConfig:
    overrides = _collect_overrides(args)
    path = args.config or fallback
    if path is not None and path.is_file():
        return load_config(path, **overrides)
    if args.config is not None:
        raise ConfigError(f"config file {args.config} not found")
    return RunConfig(**overrides)


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    run = harness.train(cfg)
    print(json.dumps({k: run.metrics[k] for k in ("accuracy", "precision", "recall", "f1", "ece", "loss")}))
    print(f"artifacts written to {run.output_dir}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args, args.checkpoint.parent / "config.echo")
    dataset = harness.resolve_dataset(args.dataset_spec, cfg)
    report = harness.evaluate(args.checkpoint, dataset, cfg)
    text = json.dumps(report, indent=2) + "\n"
    if args.report:
        args.report.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _cmd_embed(args) -> int:
    cfg = _resolve_config(args, args.checkpoint.parent / "config.echo")
    if args.output_dir is None:
        cfg = cfg.replace(output_dir=str(args.checkpoint.parent))
    dataset = harness.resolve_dataset(args.dataset_spec, cfg)
    run = harness.embed(args.checkpoint, dataset, cfg, cfg.output_dir,
                        perplexity=args.perplexity, subsample=args.subsample)
    print(f"embedded {run.Y.shape[0]} points (final KL {run.kl_trace[-1]:.4f}) into {cfg.output_dir}")
    return 0


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "embed": _cmd_embed}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"normls: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"normls: error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, NormlsError, OSError) as exc:
        print(f"normls: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
