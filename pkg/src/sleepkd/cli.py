"""Command-line interface.

Subcommands: synth-data, train, distill, evaluate, compare, cdsa,
dump-features. Experiment settings come from an INI config file
([experiment] and [loss] sections) with command-line flags winning over
file values; unknown keys are errors. Every run writes a
``*.config_resolved.ini`` capturing the effective configuration.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime or
numerics error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

from . import data as dat
from . import metrics, model, spectral, synth, training
from .errors import ConfigError, DataError, NumericsError, SleepKDError

_INT_KEYS = {
    "scheme", "seed", "epochs", "feature_epochs", "teacher_epochs",
    "batch_size", "t_epochs", "rate_hz", "base_filters", "kernel_size",
    "patience", "split_seed",
}
_FLOAT_KEYS = {"lr"}
_STR_KEYS = {
    "method", "data_dir", "checkpoint_dir", "log_dir",
    "teacher_checkpoint", "init_checkpoint", "run_name",
}
_LOSS_FLOAT_KEYS = {"beta", "temperature"}
_LOSS_STR_KEYS = {"weight_scheme", "kd_direction"}


def _parse_ratios(text: str):
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"split_ratios must be three integers, got {text!r}") from None
    return parts


def _parse_layers(text: str):
    if text.strip().lower() == "all":
        return None
    try:
        return [int(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"at_layers must be 'all' or comma-separated ints, got {text!r}") from None


def load_config_file(path) -> training.ExperimentConfig:
    """Parse the INI experiment config; unknown sections/keys are errors."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    unknown_sections = set(parser.sections()) - {"experiment", "loss"}
    if unknown_sections:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown_sections)}")
    cfg = training.ExperimentConfig()
    if parser.has_section("experiment"):
        for key, val in parser.items("experiment"):
            if key in _INT_KEYS:
                try:
                    setattr(cfg, key, int(val))
                except ValueError:
                    raise ConfigError(f"{path}: {key} must be an integer, got {val!r}") from None
            elif key in _FLOAT_KEYS:
                try:
                    setattr(cfg, key, float(val))
                except ValueError:
                    raise ConfigError(f"{path}: {key} must be a number, got {val!r}") from None
            elif key in _STR_KEYS:
                setattr(cfg, key, val)
            elif key == "split_ratios":
                cfg.split_ratios = _parse_ratios(val)
            else:
                raise ConfigError(f"{path}: unknown key {key!r} in [experiment]")
    if parser.has_section("loss"):
        loss = cfg.loss
        for key, val in parser.items("loss"):
            if key in _LOSS_FLOAT_KEYS:
                try:
                    setattr(loss, key, float(val))
                except ValueError:
                    raise ConfigError(f"{path}: {key} must be a number, got {val!r}") from None
            elif key in _LOSS_STR_KEYS:
                setattr(loss, key, val)
            elif key == "at_layers":
                loss.at_layers = _parse_layers(val)
            else:
                raise ConfigError(f"{path}: unknown key {key!r} in [loss]")
    return cfg


def write_config_resolved(cfg: training.ExperimentConfig, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    lines = ["[experiment]"]
    for key in sorted(_INT_KEYS | _FLOAT_KEYS | _STR_KEYS | {"split_ratios"}):
        val = getattr(cfg, key)
        if val is None:
            continue
        if key == "split_ratios":
            val = ",".join(str(v) for v in val)
        lines.append(f"{key} = {val}")
    lines.append("")
    lines.append("[loss]")
    for key in sorted(_LOSS_FLOAT_KEYS | _LOSS_STR_KEYS):
        lines.append(f"{key} = {getattr(cfg.loss, key)}")
    layers = cfg.loss.at_layers
    lines.append(f"at_layers = {'all' if layers is None else ','.join(map(str, layers))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _effective_config(args) -> training.ExperimentConfig:
    cfg = load_config_file(args.config) if args.config else training.ExperimentConfig()
    if getattr(args, "method", None):
        cfg.method = args.method
    if getattr(args, "classes", None):
        cfg.scheme = args.classes
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "data", None):
        cfg.data_dir = args.data
    if getattr(args, "out", None):
        cfg.checkpoint_dir = os.path.join(args.out, "checkpoints")
        cfg.log_dir = os.path.join(args.out, "logs")
    if getattr(args, "teacher_ckpt", None):
        cfg.teacher_checkpoint = args.teacher_ckpt
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    if getattr(args, "lr", None) is not None:
        cfg.lr = args.lr
    return cfg


def _resolve_and_record(cfg: training.ExperimentConfig, tag: str):
    cfg.validate()
    name = cfg.run_name if cfg.run_name else tag
    write_config_resolved(cfg, os.path.join(cfg.log_dir, f"{name}.config_resolved.ini"))


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    if args.subjects < 1:
        raise ConfigError(f"--subjects must be >= 1, got {args.subjects}")
    minutes = args.hours * 60.0
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.subjects):
        seed = args.seed + i
        teacher, student, hyp = synth.synth_subject(seed, minutes)
        dat.export_subject(
            os.path.join(args.out, f"subject-{seed:04d}"), teacher, student, hyp
        )
    with open(os.path.join(args.out, "manifest.txt"), "w") as fh:
        fh.write(f"generator_version={synth.GENERATOR_VERSION}\n")
        fh.write(f"subjects={args.subjects}\n")
        fh.write(f"hours={args.hours}\n")
        fh.write(f"seed={args.seed}\n")
        fh.write(f"rate_hz={synth.RATE_HZ}\n")
        fh.write(f"epoch_s={synth.EPOCH_S}\n")
    print(f"wrote {args.subjects} subjects to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    tag = cfg.run_name if cfg.run_name else f"{cfg.method}-seed{cfg.seed}"
    cfg.run_name = tag  # one name for checkpoint, logs, report, predictions
    _resolve_and_record(cfg, tag)
    bundle = training.load_bundle(cfg)
    if cfg.method == "teacher-base":
        net, log, ckpt = training.train_teacher(cfg, bundle)
        signal = "teacher"
    else:
        net, log, ckpt = training.train_student(cfg, bundle)
        signal = "student"
    rep = training.evaluate(
        net, bundle.test, bundle.stage_map, signal,
        dump_path=os.path.join(cfg.log_dir, f"{tag}.predictions.csv"),
    )
    with open(os.path.join(cfg.log_dir, f"{tag}.report.json"), "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2)
    print(f"best eval weighted-F1 {log.best['eval_wf1']:.4f} (epoch {log.best['epoch']})")
    print(f"test weighted-F1 {rep.weighted_f1:.4f}  checkpoint {ckpt}")
    return 0


def cmd_distill(args) -> int:
    cfg = _effective_config(args)
    if cfg.method not in ("FB+WCE", "FB+RB+WCE"):
        cfg.method = "FB+WCE"
    if not cfg.teacher_checkpoint:
        raise ConfigError("distill requires --teacher-ckpt (or teacher_checkpoint in config)")
    tag = cfg.run_name if cfg.run_name else f"features-seed{cfg.seed}"
    cfg.run_name = tag
    _resolve_and_record(cfg, tag)
    bundle = training.load_bundle(cfg)
    teacher = model.load_checkpoint(cfg.teacher_checkpoint)
    net, log = training.distill_features(cfg, bundle, teacher)
    log.save(cfg.log_dir)
    print(
        f"feature distillation done: best eval loss "
        f"{log.best['feature_eval_loss']:.6f} (epoch {log.best['feature_epoch']})"
    )
    print(f"checkpoint {log.best['feature_checkpoint']}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _effective_config(args)
    tag = f"evaluate-{os.path.basename(args.ckpt)}"
    _resolve_and_record(cfg, tag)
    bundle = training.load_bundle(cfg)
    split = {"train": bundle.train, "eval": bundle.eval_, "test": bundle.test}[args.split]
    rep = training.evaluate(
        args.ckpt, split, bundle.stage_map, args.modality,
        dump_path=os.path.join(cfg.log_dir, f"{tag}.predictions.csv"),
    )
    print(metrics.format_tables({args.modality: rep}, bundle.stage_map.class_names))
    with open(os.path.join(cfg.log_dir, f"{tag}.report.json"), "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2)
    return 0


def cmd_compare(args) -> int:
    cfg = _effective_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    methods = args.methods.split(",") if args.methods else None
    _resolve_and_record(cfg, f"compare-seed{cfg.seed}")
    results, reports, tables = training.run_comparison(cfg, seeds, methods=methods)
    print(tables)
    return 0


def cmd_cdsa(args) -> int:
    signal = dat._read_signal_csv(args.input)
    freqs, matrix = spectral.cdsa_matrix(signal, args.rate, args.window)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("# rows=epochs, cols=log10 power per frequency bin\n")
        fh.write("# freq_hz: " + ",".join(repr(float(f)) for f in freqs) + "\n")
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote {matrix.shape[0]} epochs x {matrix.shape[1]} bins to {args.out}")
    return 0


def cmd_dump_features(args) -> int:
    cfg = _effective_config(args)
    _resolve_and_record(cfg, "dump-features")
    bundle = training.load_bundle(cfg)
    split = {"train": bundle.train, "eval": bundle.eval_, "test": bundle.test}[args.split]
    if not split:
        raise DataError(f"split {args.split!r} holds no sequences")
    if not 0 <= args.sequence < len(split):
        raise ConfigError(
            f"--sequence {args.sequence} outside [0, {len(split)}) for split {args.split!r}"
        )
    teacher = model.load_checkpoint(args.teacher_ckpt)
    base = model.load_checkpoint(args.base_ckpt)
    distilled = model.load_checkpoint(args.distilled_ckpt)
    summary = training.dump_bottleneck(
        teacher, base, distilled, split[args.sequence], args.out
    )
    print(
        "mean cosine vs teacher: base "
        f"{summary['base_vs_teacher_mean_cosine']:.4f}, distilled "
        f"{summary['distilled_vs_teacher_mean_cosine']:.4f}"
    )
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sleepkd",
        description="Cross-modal knowledge distillation for 1-D sleep staging.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic paired-modality dataset")
    s.add_argument("--subjects", type=int, required=True)
    s.add_argument("--hours", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    def common(sp, with_method=True):
        sp.add_argument("--config", help="INI config file ([experiment]/[loss])")
        if with_method:
            sp.add_argument("--method", choices=training.METHODS)
        sp.add_argument("--classes", type=int, choices=(3, 4, 5))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data", help="dataset directory of subject-* folders")
        sp.add_argument("--out", help="output root (checkpoints/ and logs/)")
        sp.add_argument("--teacher-ckpt", dest="teacher_ckpt")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)

    s = sub.add_parser("train", help="train one method end to end")
    common(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("distill", help="run only the feature-alignment stage")
    common(s)
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    common(s, with_method=False)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", choices=("train", "eval", "test"), default="test")
    s.add_argument("--modality", choices=("teacher", "student"), default="student")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", help="teacher + all methods over several seeds")
    common(s, with_method=False)
    s.add_argument("--seeds", default="1,2,3", help="comma-separated training seeds")
    s.add_argument("--methods", help="comma-separated subset of student methods")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("cdsa", help="epoch-by-frequency log-power matrix from a signal CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--rate", type=float, default=200.0)
    s.add_argument("--window", type=float, default=30.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cdsa)

    s = sub.add_parser("dump-features", help="export bottleneck features for three checkpoints")
    common(s, with_method=False)
    s.add_argument("--base-ckpt", dest="base_ckpt", required=True)
    s.add_argument("--distilled-ckpt", dest="distilled_ckpt", required=True)
    s.add_argument("--split", choices=("train", "eval", "test"), default="test")
    s.add_argument("--sequence", type=int, default=0)
    s.set_defaults(func=cmd_dump_features)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: data: {e}", file=sys.stderr)
        return 3
    except (NumericsError, SleepKDError) as e:
        print(f"error: runtime: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error: data: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
