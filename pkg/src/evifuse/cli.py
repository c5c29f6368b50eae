"""Command-line experiment driver.

Subcommands: mask, impute, train, eval, stability, sweep, report,
export-imputed. Exit codes: 0 on success, 2 for configuration or
validation problems, 3 for numerical failures at runtime.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from evifuse import experiments
from evifuse.dataset import MissingnessSpec, generate_missing_mask, load_dataset
from evifuse.fusion import FusionConflictError
from evifuse.imputer import CholeskyEscalationError, sample_completions
from evifuse.predictor import evaluate, stability_experiment
from evifuse.trainer import (
    MODES,
    CheckpointError,
    NonFiniteLossError,
    TrainConfig,
    load_model,
    save_model,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=None,
                        help="seed override (defaults to 0 or the config file)")
    parent.add_argument("--config", type=Path, default=None,
                        help="training config JSON (schema 1)")
    parent.add_argument("--threads", type=int, default=1,
                        help="worker processes for sweep cells")
    return parent


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evifuse",
        description="incomplete multi-view classification experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _common_flags()

    p = sub.add_parser("mask", parents=[parent], help="generate a missingness mask")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("impute", parents=[parent],
                       help="write sampled completions of a dataset")
    _add_impute_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", parents=[parent], help="train a model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mask", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--metrics", type=Path, default=None, help="training metrics JSON")
    p.add_argument("--mode", default=None, choices=MODES,
                   help="objective/imputation variant (overrides the config)")

    p = sub.add_parser("eval", parents=[parent], help="evaluate a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mask", type=Path, default=None)
    p.add_argument("--ns", type=int, default=None, help="test-time samplings")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("stability", parents=[parent],
                       help="repeat prediction under fresh completion draws")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mask", type=Path, default=None)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--ns", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sweep", parents=[parent],
                       help="missing-rate sweep over seeds and modes")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--etas", default="0,0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--modes", default="uimc")
    p.add_argument("--train-fraction", type=float,
                   default=experiments.DEFAULT_TRAIN_FRACTION)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", parents=[parent], help="summarize sweep results")
    p.add_argument("--results", type=Path, required=True, help="results.csv from sweep")
    p.add_argument("--out", type=Path, default=None, help="tidy CSV path")

    p = sub.add_parser("export-imputed", parents=[parent],
                       help="per-sampling concatenated-feature CSVs")
    _add_impute_flags(p)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _add_impute_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mask", type=Path, default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ns", type=int, default=30)
    p.add_argument("--jitter", type=float, default=1e-3)
    p.add_argument("--diag-cov", action="store_true")


def _load_data(data_path: Path, mask_path: Path | None):
    data = load_dataset(data_path)
    if mask_path is not None:
        mask = np.loadtxt(mask_path, delimiter=",", ndmin=2)
        if not np.all(np.isin(mask, (0.0, 1.0))):
            raise ValueError(f"mask file {mask_path} must contain only 0/1")
        data = data.with_mask(mask.astype(bool))
    return data


def _load_config(args) -> TrainConfig:
    if args.config is not None:
        cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _cmd_mask(args) -> int:
    data = load_dataset(args.data)
    mask = generate_missing_mask(
        data.n_samples, data.n_views,
        MissingnessSpec(args.eta, seed=args.seed if args.seed is not None else 0),
    )
    np.savetxt(args.out, mask.astype(int), fmt="%d", delimiter=",")
    print(f"wrote {args.out}: {(~mask).sum()} missing of {mask.size} slots")
    return EXIT_OK


def _completions_from_args(args):
    data = _load_data(args.data, args.mask)
    seed = args.seed if args.seed is not None else 0
    completions = sample_completions(
        data, k=args.k, n_samplings=args.ns, jitter=args.jitter, seed=seed,
        diag_cov=args.diag_cov,
    )
    return data, completions


def _cmd_impute(args) -> int:
    _, completions = _completions_from_args(args)
    experiments.write_completion_directory(completions, args.out)
    print(f"wrote {completions.n_samplings} samplings to {args.out}")
    return EXIT_OK


def _cmd_export_imputed(args) -> int:
    data, completions = _completions_from_args(args)
    paths = experiments.export_imputed(data, completions, args.out)
    print(f"wrote {len(paths)} concatenated CSVs to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    data = _load_data(args.data, args.mask)
    cfg = _load_config(args)
    if args.mode is not None:
        cfg = replace(cfg, mode=args.mode)
    started = time.perf_counter()
    model = train(data, cfg)
    save_model(model, args.out)
    wall = time.perf_counter() - started
    print(f"trained {cfg.mode} for {model.epochs_run} epochs in {wall:.1f}s -> {args.out}")
    if args.metrics is not None:
        payload = {
            "config": cfg.to_dict(),
            "epochs_run": model.epochs_run,
            "loss_history": model.loss_history,
            "wall_time": wall,
        }
        Path(args.metrics).write_text(json.dumps(payload, indent=1))
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    data = _load_data(args.data, args.mask)
    metrics = evaluate(model, data, n_samplings=args.ns,
                       seed=args.seed if args.seed is not None else 0)
    Path(args.out).write_text(json.dumps(metrics, indent=1))
    print(f"accuracy {metrics['accuracy']:.4f} on {metrics['n_test']} samples -> {args.out}")
    return EXIT_OK


def _cmd_stability(args) -> int:
    model = load_model(args.model)
    data = _load_data(args.data, args.mask)
    result = stability_experiment(
        model, data, n_repeats=args.repeats, n_samplings=args.ns,
        seed=args.seed if args.seed is not None else 0,
    )
    Path(args.out).write_text(json.dumps(result, indent=1))
    print(f"consistent fraction {result['consistent_fraction']:.4f} -> {args.out}")
    return EXIT_OK


def _parse_list(text: str, cast):
    return [cast(tok) for tok in text.split(",") if tok.strip() != ""]


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    etas = _parse_list(args.etas, float)
    seeds = _parse_list(args.seeds, int)
    modes = _parse_list(args.modes, str)
    rows = experiments.sweep(
        args.data, etas, seeds, modes, cfg, args.out,
        train_fraction=args.train_fraction, workers=args.threads,
    )
    summary = experiments.summarize(rows)
    print(f"{summary['cells_ok']} cells ok, {summary['cells_failed']} failed -> {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = experiments.read_results_csv(args.results)
    text, summary = experiments.report(rows)
    print(text)
    if args.out is not None:
        experiments.write_tidy_csv(summary, args.out)
    return EXIT_OK


_COMMANDS = {
    "mask": _cmd_mask,
    "impute": _cmd_impute,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "stability": _cmd_stability,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
    "export-imputed": _cmd_export_imputed,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, CheckpointError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FusionConflictError, NonFiniteLossError, CholeskyEscalationError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
