"""Command-line entry points: synth, train, eval, predict.

Every command resolves its configuration (flags over optional config-file
values), serializes the resolved form into its output directory, and
derives all randomness from the single --seed flag through named
sub-streams. Exit codes: 0 success, 1 usage/configuration, 2 data/format,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .errors import (
    ConfigError,
    DegenerateDataError,
    FormatError,
    MissingAlignmentError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .featureio import SynthConfig, load_manifest, read_features, synth_generate
from .losses import LossFlags
from .model import (
    PoolingConfig,
    load_checkpoint,
    predict_video,
    save_checkpoint,
)
from .report import (
    _check_features_exist,
    aggregate_reports,
    evaluate_checkpoint,
    render_scatter_png,
    render_training_curves_png,
    report_to_dict,
    write_scatter_csv,
)
from .training import TrainConfig, load_features_map, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_dump(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _load_config_file(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: config file must hold a JSON object")
    return doc


def _resolve(args, file_values, keys):
    """Flag values win; config-file values fill anything left at None."""
    resolved = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is None and key in file_values:
            resolved[key] = file_values[key]
        else:
            resolved[key] = flag
    return resolved


def _parse_loss_flags(text):
    chosen = [part.strip() for part in text.split(",") if part.strip()]
    allowed = {"rel", "lin", "err"}
    bad = [c for c in chosen if c not in allowed]
    if bad:
        raise ConfigError(f"unknown loss component(s) {bad}; choose from {sorted(allowed)}")
    if not chosen:
        raise ConfigError("at least one loss component is required")
    return LossFlags(rel="rel" in chosen, lin="lin" in chosen, err="err" in chosen)


def _parse_latent_ranges(text):
    if text is None:
        return None
    ranges = []
    for part in text.split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise ConfigError(f"latent range {part!r} must look like lo:hi")
        try:
            ranges.append((float(lo), float(hi)))
        except ValueError as exc:
            raise ConfigError(f"latent range {part!r} is not numeric") from exc
    return tuple(ranges)


def _parse_float_list(text):
    if text is None:
        return None
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


# -- synth -----------------------------------------------------------------


def cmd_synth(args):
    out_dir = args.out
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not args.force:
        raise ConfigError(
            f"output directory {out_dir!r} is not empty; pass --force to overwrite"
        )
    config = SynthConfig(
        n_datasets=args.datasets,
        videos_per_dataset=args.videos,
        frame_count_range=(args.frames[0], args.frames[1]),
        feature_dim=args.dim,
        scales=_parse_float_list(args.scales),
        offsets=_parse_float_list(args.offsets),
        latent_ranges=_parse_latent_ranges(args.latent_ranges),
        nonlinearity=args.nonlinearity,
        noise_sigma=args.noise,
        feature_jitter=args.jitter,
        identical_observers=args.identical_observers,
    )
    config.resolved()
    synth_generate(config, out_dir, args.seed)
    _json_dump(
        os.path.join(out_dir, "config.json"),
        {"command": "synth", "seed": args.seed, **dataclasses.asdict(config)},
    )
    print(os.path.join(out_dir, "manifest.json"))
    return EXIT_OK


# -- train -----------------------------------------------------------------


def cmd_train(args):
    file_values = _load_config_file(args.config)
    keys = ("epochs", "lr", "batch", "tau", "gamma", "loss", "alignment",
            "runs", "reduced_dim", "hidden_dim")
    resolved = _resolve(args, file_values, keys)
    defaults = {
        "epochs": 40, "lr": 1e-4, "batch": 32, "tau": 12, "gamma": 0.5,
        "loss": "rel,lin,err", "alignment": "dataset_specific", "runs": 10,
        "reduced_dim": 128, "hidden_dim": 32,
    }
    for key, value in defaults.items():
        if resolved[key] is None:
            resolved[key] = value
    datasets = load_manifest(args.manifest)
    _check_features_exist(datasets)
    features = load_features_map(datasets)
    os.makedirs(args.out, exist_ok=True)
    _json_dump(
        os.path.join(args.out, "config.json"),
        {
            "command": "train",
            "manifest": os.path.abspath(args.manifest),
            "seed": args.seed,
            **resolved,
        },
    )
    for run in range(resolved["runs"]):
        run_dir = os.path.join(args.out, f"run{run}")
        os.makedirs(run_dir, exist_ok=True)
        config = TrainConfig(
            learning_rate=resolved["lr"],
            epochs=resolved["epochs"],
            batch_size=resolved["batch"],
            pooling=PoolingConfig(tau=resolved["tau"], gamma=resolved["gamma"]),
            seed=args.seed + run,
            loss_flags=_parse_loss_flags(resolved["loss"]),
            alignment_mode=resolved["alignment"],
            reduced_dim=resolved["reduced_dim"],
            hidden_dim=resolved["hidden_dim"],
        )
        fresh = [dataclasses.replace(spec, split=None) for spec in datasets]
        result = train(fresh, config, features=features)
        log_path = os.path.join(run_dir, "log.ndjson")
        with open(log_path, "w", encoding="utf-8") as fh:
            for entry in result.log:
                fh.write(json.dumps(entry) + "\n")
            fh.write(
                json.dumps(
                    {
                        "summary": True,
                        "best_epoch": result.best_epoch,
                        "best_weighted_val_srocc": result.best_weighted_val_srocc,
                    }
                )
                + "\n"
            )
        save_checkpoint(
            os.path.join(run_dir, "checkpoint.json"),
            result.params,
            result.pooling,
            alignment_mode=result.alignment_mode,
            splits=result.splits,
        )
        render_training_curves_png(os.path.join(run_dir, "curves.png"), result.log)
        print(run_dir)
    return EXIT_OK


# -- eval ------------------------------------------------------------------


def _checkpoint_paths(args):
    if args.checkpoint:
        return [args.checkpoint]
    run_dirs = sorted(
        d for d in os.listdir(args.run_dir)
        if d.startswith("run") and os.path.isdir(os.path.join(args.run_dir, d))
    )
    paths = [
        os.path.join(args.run_dir, d, "checkpoint.json")
        for d in run_dirs
        if os.path.exists(os.path.join(args.run_dir, d, "checkpoint.json"))
    ]
    if not paths:
        raise ValidationError(f"no run*/checkpoint.json under {args.run_dir!r}")
    return paths


def cmd_eval(args):
    datasets = load_manifest(args.manifest)
    _check_features_exist(datasets)
    features = load_features_map(datasets)
    paths = _checkpoint_paths(args)
    os.makedirs(args.out, exist_ok=True)
    _json_dump(
        os.path.join(args.out, "config.json"),
        {
            "command": "eval",
            "manifest": os.path.abspath(args.manifest),
            "split": args.split,
            "checkpoints": [os.path.abspath(p) for p in paths],
        },
    )
    reports = []
    for run_index, path in enumerate(paths):
        bundle = load_checkpoint(path)
        report, scatter = evaluate_checkpoint(
            bundle, datasets, features, split=args.split, run_index=run_index
        )
        reports.append(report)
        prefix = f"run{run_index}_" if len(paths) > 1 else ""
        _json_dump(
            os.path.join(args.out, f"{prefix}report.json"),
            report_to_dict(report, args.split),
        )
        for name, rows in sorted(scatter.items()):
            write_scatter_csv(
                os.path.join(args.out, f"{prefix}scatter_{name}.csv"), rows
            )
            render_scatter_png(
                os.path.join(args.out, f"{prefix}scatter_{name}.png"),
                rows,
                name,
                report.per_dataset[name],
            )
    if len(reports) > 1:
        _json_dump(os.path.join(args.out, "aggregate.json"), aggregate_reports(reports))
    print(args.out)
    return EXIT_OK


# -- predict ---------------------------------------------------------------


def cmd_predict(args):
    bundle = load_checkpoint(args.checkpoint)
    seq = read_features(args.features)
    triple = predict_video(
        seq, bundle.params, bundle.pooling, dataset_id=args.dataset
    )
    payload = {"video_id": seq.video_id, "q_r": triple.q_r, "q_p": triple.q_p}
    if triple.q_s is not None:
        payload["q_s"] = triple.q_s
    print(json.dumps(payload))
    return EXIT_OK


# -- wiring ----------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="vqalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--datasets", type=int, default=2)
    p_synth.add_argument("--videos", type=int, default=200)
    p_synth.add_argument("--frames", type=int, nargs=2, default=[30, 30],
                         metavar=("LO", "HI"))
    p_synth.add_argument("--dim", type=int, default=64)
    p_synth.add_argument("--scales", help="comma-separated a_d per dataset")
    p_synth.add_argument("--offsets", help="comma-separated b_d per dataset")
    p_synth.add_argument("--latent-ranges", dest="latent_ranges",
                         help="per dataset lo:hi pairs, comma-separated")
    p_synth.add_argument("--nonlinearity", type=float, default=0.0)
    p_synth.add_argument("--noise", type=float, default=0.0)
    p_synth.add_argument("--jitter", type=float, default=0.1)
    p_synth.add_argument("--identical-observers", action="store_true",
                         dest="identical_observers")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--force", action="store_true")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train on a manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--config", help="JSON file with default flag values")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--tau", type=int)
    p_train.add_argument("--gamma", type=float)
    p_train.add_argument("--loss", help="comma subset of rel,lin,err")
    p_train.add_argument("--alignment",
                         choices=["dataset_specific", "linear_rescale"])
    p_train.add_argument("--runs", type=int)
    p_train.add_argument("--reduced-dim", dest="reduced_dim", type=int)
    p_train.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints")
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--run-dir", dest="run_dir")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--split", choices=["train", "val", "test"], default="test")
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="score one feature file")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--features", required=True)
    p_pred.add_argument("--dataset")
    p_pred.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ValidationError, MissingAlignmentError, ShapeError,
            DegenerateDataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
