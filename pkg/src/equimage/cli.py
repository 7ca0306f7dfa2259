"""Command-line entry point.

Subcommands: simulate, train, evaluate, preview-transforms, report,
validate. Exit codes: 0 success, 2 configuration error, 3 numeric failure
during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import images
from .config import ConfigError, ExperimentConfig, load_config
from .dataset import simulate_dataset
from .evalrun import evaluate, report
from .preview import preview_transforms
from .train import NumericError, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = str(args.out)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    source = Path(cfg.dataset.source_dir)
    notes = []
    if not source.is_dir():
        notes.append(f"note: dataset.source_dir {source} does not exist yet")
    print(f"OK: {args.config} is a valid {cfg.task} experiment")
    for note in notes:
        print(note)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    manifest = simulate_dataset(cfg)
    n_train = len(manifest.split("train"))
    n_test = len(manifest.split("test"))
    print(f"simulated {len(manifest.tiles)} tiles ({n_train} train / {n_test} test) "
          f"under {manifest.root}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    result = train(cfg)
    print(f"trained {result.epochs_run} epochs; "
          f"checkpoints: {result.final_checkpoint}, {result.best_checkpoint}; "
          f"log: {result.log_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    checkpoint = args.checkpoint or (Path(cfg.output_dir) / "final.ckpt")
    csv_path = evaluate(cfg, checkpoint)
    print(f"metrics written to {csv_path}")
    return EXIT_OK


def cmd_preview(args) -> int:
    img = images.load_image(args.image)
    out = args.out or Path("previews")
    out_path = Path(out) / "transforms.png"
    preview_transforms(img, out_path, seed=args.seed or 0, alpha=args.alpha)
    print(f"preview grid written to {out_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out or "report") / "report.csv"
    path = report(args.runs, out)
    print(f"report written to {path} and {path.with_suffix('.md')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="equimage",
        description="Simulate measurements, train unsupervised reconstruction "
                    "networks and evaluate them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")

    p = sub.add_parser("validate", help="check an experiment config")
    add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="apply the forward physics to a source corpus")
    add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="run the configured training loop")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics and reconstructions on the test split")
    add_common(p)
    p.add_argument("--checkpoint", default=None, help="checkpoint path "
                   "(default: <output_dir>/final.ckpt)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("preview-transforms", help="write a grid of sampled warps")
    add_common(p, config=False)
    p.add_argument("--image", required=True, help="input PNG/TIFF image")
    p.add_argument("--alpha", type=float, default=1.0, help="transform range fraction")
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("report", help="aggregate metrics CSVs from several runs")
    p.add_argument("runs", nargs="+", help="run directories containing metrics.csv")
    p.add_argument("--out", default=None, help="report output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
