"""Command-line interface.

Exit codes: 0 success, 1 validation error (bad inputs/config/shapes),
2 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .covariance import EegTrial
from .dataio import load_checkpoint, load_dataset, read_trial_file, save_checkpoint, \
    save_dataset
from .evaluation import SplitSpec, evaluate_pipeline, loso_protocol, percent, \
    ratio_sweep, split, write_eval_report, write_loso_report, write_sweep_report
from .exceptions import ValidationError
from .labels import TOKEN_ORDER, TokenLabel
from .pipeline import PipelineConfig, predict_token, train_pipeline
from .synthetic import SynthSpec, generate_synthetic


def _load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    return PipelineConfig.from_dict(data)


def _parse_ratios(text: str) -> tuple[float, ...]:
    try:
        ratios = tuple(float(r) for r in text.split(","))
    except ValueError:
        raise ValidationError(f"could not parse ratios {text!r}") from None
    return ratios


def _apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed,
                         gbt=replace(config.gbt, seed=args.seed))
    if getattr(args, "bottleneck", None) is not None:
        config = replace(config, dae=replace(config.dae, bottleneck=args.bottleneck))
    if getattr(args, "rounds", None) is not None:
        config = replace(config, gbt=replace(config.gbt, rounds=args.rounds))
    if getattr(args, "epochs", None) is not None:
        config = replace(
            config,
            cnn=replace(config.cnn, epochs=args.epochs),
            tcnn=replace(config.tcnn, epochs=args.epochs),
            dae=replace(config.dae, epochs=args.epochs),
        )
    return config


def cmd_synth(args) -> int:
    spec_data = json.loads(Path(args.spec).read_text())
    spec = SynthSpec.from_dict(spec_data)
    trials = generate_synthetic(spec)
    save_dataset(trials, args.out)
    print(f"wrote {len(trials)} trials to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    trials = load_dataset(args.data)
    ratios = _parse_ratios(args.split)
    train, dev, test = split(trials, SplitSpec(ratios=ratios, seed=config.seed))
    model, summary = train_pipeline(train, config, dev)
    save_checkpoint(model, args.out)
    print(f"checkpoint written to {args.out}")
    for task, acc in summary["phase1_dev_accuracy"].items():
        print(f"phase1 dev accuracy {task}: {percent(acc)}%")
    if "phase2_dev_accuracy" in summary:
        print(f"phase2 dev accuracy: {percent(summary['phase2_dev_accuracy'])}%")
    print(f"splits: train={len(train)} dev={len(dev)} test={len(test)}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    trials = load_dataset(args.data)
    report = evaluate_pipeline(model, trials)
    write_eval_report(report, args.report)
    print(f"phase1 mean accuracy: {percent(report.phase1_mean_accuracy)}%")
    print(f"phase2 accuracy: {percent(report.token_summary.accuracy)}%")
    print(f"report written to {args.report}")
    return 0


def cmd_loso(args) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    trials = load_dataset(args.data)
    result = loso_protocol(trials, config, seed=config.seed)
    write_loso_report(result, args.report)
    for fold in result.folds:
        print(f"subject {fold.subject}: phase2 accuracy {percent(fold.phase2_accuracy)}%")
    print(f"mean {percent(result.mean_phase2_accuracy)}% "
          f"std {percent(result.std_phase2_accuracy)}%")
    return 0


def cmd_sweep(args) -> int:
    config = _apply_overrides(_load_config(args.config), args)
    trials = load_dataset(args.data)
    ratios = _parse_ratios(args.ratios)
    points = ratio_sweep(trials, ratios, config, seed=config.seed)
    write_sweep_report(points, args.report)
    for p in points:
        print(f"train {p.train_fraction:.2f}: phase1 {percent(p.phase1_mean_accuracy)}% "
              f"phase2 {percent(p.phase2_accuracy)}%")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.ckpt)
    data = read_trial_file(args.trial, model.channels)
    trial = EegTrial("cli", TokenLabel.IY, data)  # token placeholder, unused
    token, dist, phon = predict_token(trial, model)
    out = {
        "token": token.value,
        "distribution": {t.value: float(p) for t, p in zip(TOKEN_ORDER, dist)},
        "phonological": {c.value: float(p) for c, p in zip(model.categories, phon)},
    }
    json.dump(out, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phonodec",
        description="Hierarchical imagined-speech decoding from EEG covariance",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--spec", required=True, help="JSON generator spec")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="two-phase training")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="JSON pipeline config")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int)
    p.add_argument("--bottleneck", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics and confusion matrices")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="report output directory")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("loso", help="leave-one-subject-out protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--bottleneck", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(fn=cmd_loso)

    p = sub.add_parser("sweep", help="accuracy vs train-fraction table")
    p.add_argument("--data", required=True)
    p.add_argument("--ratios", required=True, help="e.g. 0.8,0.6,0.4")
    p.add_argument("--config")
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--bottleneck", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("predict", help="single-trial prediction as JSON")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--trial", required=True, help="raw float32 C x T sample file")
    p.set_defaults(fn=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # numeric/runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
