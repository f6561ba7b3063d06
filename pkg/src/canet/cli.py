"""Command-line entry point: synth-data, train, eval, gradcheck, compare.

Configuration comes from a JSON file with flag overrides (flags win).
Unknown config keys and out-of-range values are rejected before any
computation, and every run writes its fully resolved config next to its
outputs so results can be reproduced from the echo alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .attention import GATE_MODES, AttentionConfig
from .data import (
    generate_synthetic_dataset,
    load_image_directory,
    read_dataset_archive,
    stratified_split,
    write_dataset_archive,
)
from .model import (
    ModelSpec,
    build_xception_lite,
    freeze_layers,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    TrainConfig,
    compare_models,
    evaluate_model,
    run_repeated,
    train_model,
)
from .verification import LAYER_TOLERANCE, MODEL_TOLERANCE, run_gradient_check_suite

__all__ = ["CliConfig", "ConfigError", "parse_config", "dispatch", "main"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class CliConfig:
    seed: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    freeze_fraction: float = 0.7
    runs: int = 1
    heads: int = 16
    reduction: int = 8
    gate_mode: str = "pooled"
    widths: list[int] = None
    hidden_units: int = 1024
    input_size: int = 32
    test_fraction: float = 0.2
    n_per_class: int = 250
    attention_enabled: bool = True
    dataset_path: str | None = None
    output_dir: str = "out"

    def __post_init__(self):
        if self.widths is None:
            self.widths = [32, 64, 128]

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, beta1=self.beta1, beta2=self.beta2,
            eps_adam=self.eps_adam, seed=self.seed,
            freeze_fraction=self.freeze_fraction, runs=self.runs,
        )

    def attention_config(self) -> AttentionConfig | None:
        if not self.attention_enabled:
            return None
        return AttentionConfig(channels=self.widths[-1], heads=self.heads,
                               reduction=self.reduction, gate_mode=self.gate_mode)


_INT_KEYS = {"seed", "batch_size", "max_epochs", "runs", "heads", "reduction",
             "hidden_units", "input_size", "n_per_class"}
_FLOAT_KEYS = {"learning_rate", "beta1", "beta2", "eps_adam", "freeze_fraction",
               "test_fraction"}


def _validate(cfg: CliConfig) -> CliConfig:
    def bad(key, why):
        raise ConfigError(f"invalid value for {key!r}: {why}")

    if cfg.learning_rate < 0:
        bad("learning_rate", f"must be >= 0, got {cfg.learning_rate}")
    if cfg.batch_size < 1:
        bad("batch_size", f"must be >= 1, got {cfg.batch_size}")
    if cfg.max_epochs < 1:
        bad("max_epochs", f"must be >= 1, got {cfg.max_epochs}")
    for key in ("beta1", "beta2"):
        value = getattr(cfg, key)
        if not 0.0 < value < 1.0:
            bad(key, f"must be in (0, 1), got {value}")
    if cfg.eps_adam <= 0:
        bad("eps_adam", f"must be > 0, got {cfg.eps_adam}")
    if not 0.0 <= cfg.freeze_fraction <= 1.0:
        bad("freeze_fraction", f"must be in [0, 1], got {cfg.freeze_fraction}")
    if cfg.runs < 1:
        bad("runs", f"must be >= 1, got {cfg.runs}")
    if cfg.heads < 1:
        bad("heads", f"must be >= 1, got {cfg.heads}")
    if cfg.reduction < 1:
        bad("reduction", f"must be >= 1, got {cfg.reduction}")
    if cfg.gate_mode not in GATE_MODES:
        bad("gate_mode", f"must be one of {GATE_MODES}, got {cfg.gate_mode!r}")
    if (not isinstance(cfg.widths, list) or not cfg.widths
            or any(not isinstance(w, int) or w < 1 for w in cfg.widths)):
        bad("widths", f"must be a non-empty list of positive integers, got {cfg.widths}")
    if cfg.hidden_units < 1:
        bad("hidden_units", f"must be >= 1, got {cfg.hidden_units}")
    if cfg.input_size < 8:
        bad("input_size", f"must be >= 8, got {cfg.input_size}")
    if not 0.0 < cfg.test_fraction < 1.0:
        bad("test_fraction", f"must be in (0, 1), got {cfg.test_fraction}")
    if cfg.n_per_class < 1:
        bad("n_per_class", f"must be >= 1, got {cfg.n_per_class}")
    return cfg


def parse_config(path: str | None, overrides: dict | None = None) -> CliConfig:
    """Resolve defaults <- config file <- flag overrides, fail-closed."""
    known = {f.name for f in fields(CliConfig)}
    values: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError(f"config root must be a JSON object, got {type(raw).__name__}")
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key: {key!r}")
            values[key] = value
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key: {key!r}")
        if value is not None:
            values[key] = value
    for key in list(values):
        if key in _INT_KEYS and isinstance(values[key], bool):
            raise ConfigError(f"invalid value for {key!r}: expected integer")
        if key in _INT_KEYS and not isinstance(values[key], int):
            raise ConfigError(f"invalid value for {key!r}: expected integer, "
                              f"got {values[key]!r}")
        if key in _FLOAT_KEYS:
            if not isinstance(values[key], (int, float)) or isinstance(values[key], bool):
                raise ConfigError(f"invalid value for {key!r}: expected number, "
                                  f"got {values[key]!r}")
            values[key] = float(values[key])
    try:
        cfg = CliConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc))
    return _validate(cfg)


def _echo_config(cfg: CliConfig, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "resolved_config.json").write_text(
        json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_dataset(cfg: CliConfig):
    if cfg.dataset_path is None:
        raise ConfigError("dataset_path is required for this command")
    path = Path(cfg.dataset_path)
    if not path.exists():
        raise ConfigError(f"dataset path does not exist: {path}")
    if path.is_dir():
        return load_image_directory(path, size=cfg.input_size)
    return read_dataset_archive(path)


def _build_model(cfg: CliConfig, num_classes: int, seed: int):
    return build_xception_lite(cfg.widths, cfg.attention_config(), num_classes,
                               seed, input_size=cfg.input_size,
                               hidden_units=cfg.hidden_units)


# ---------------------------------------------------------------------------
# commands

def cmd_synth_data(cfg: CliConfig) -> int:
    outdir = Path(cfg.output_dir)
    _echo_config(cfg, outdir)
    ds = generate_synthetic_dataset(cfg.n_per_class, cfg.input_size, cfg.seed)
    target = Path(cfg.dataset_path) if cfg.dataset_path else outdir / "synthetic.cads"
    write_dataset_archive(ds, target)
    print(f"wrote {len(ds)} images ({ds.images.shape[1]}x{ds.images.shape[2]}, "
          f"classes {ds.class_names}) to {target}")
    return 0


def cmd_train(cfg: CliConfig) -> int:
    outdir = Path(cfg.output_dir)
    _echo_config(cfg, outdir)
    ds = _load_dataset(cfg)
    if ds.images.shape[1] != cfg.input_size:
        raise ConfigError(
            f"dataset images are {ds.images.shape[1]}x{ds.images.shape[2]} but "
            f"input_size is {cfg.input_size}")
    split = stratified_split(ds.labels, cfg.test_fraction, cfg.seed)
    model, params = _build_model(cfg, len(ds.class_names), cfg.seed)
    freeze_layers(model, cfg.freeze_fraction)
    params, history = train_model(model, params, ds, split, cfg.train_config())
    report = evaluate_model(model, params, ds, split.test)

    save_checkpoint(params, {"model": model.to_dict()}, outdir / "checkpoint.canw")
    history.to_csv(outdir / "history.csv")
    (outdir / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_text())
    print(f"artifacts in {outdir}: checkpoint.canw, history.csv, metrics.json, "
          f"resolved_config.json")
    return 0


def cmd_eval(cfg: CliConfig, checkpoint: str) -> int:
    outdir = Path(cfg.output_dir)
    _echo_config(cfg, outdir)
    params, config = load_checkpoint(checkpoint)
    model = ModelSpec.from_dict(config["model"])
    ds = _load_dataset(cfg)
    if ds.images.shape[1] != model.input_size[0]:
        raise ConfigError(
            f"dataset images are {ds.images.shape[1]} wide but the checkpointed model "
            f"expects {model.input_size[0]}")
    if len(ds.class_names) != model.num_classes:
        raise ConfigError(
            f"dataset has {len(ds.class_names)} classes but the checkpointed model "
            f"has {model.num_classes}")
    report = evaluate_model(model, params, ds, np.arange(len(ds)))
    (outdir / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_text())
    return 0


def cmd_gradcheck(threshold: float, model_threshold: float) -> int:
    results = run_gradient_check_suite(threshold=threshold,
                                       model_threshold=model_threshold)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_err={r.max_error:.3e}  "
              f"threshold={r.threshold:.0e}  {status}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 1 if failed else 0


def cmd_compare(cfg: CliConfig) -> int:
    outdir = Path(cfg.output_dir)
    _echo_config(cfg, outdir)
    ds = _load_dataset(cfg)
    num_classes = len(ds.class_names)
    tcfg = cfg.train_config()

    def attention_builder(seed):
        return build_xception_lite(cfg.widths, cfg.attention_config() or AttentionConfig(
            channels=cfg.widths[-1], heads=cfg.heads, reduction=cfg.reduction,
            gate_mode=cfg.gate_mode), num_classes, seed,
            input_size=cfg.input_size, hidden_units=cfg.hidden_units)

    def baseline_builder(seed):
        return build_xception_lite(cfg.widths, None, num_classes, seed,
                                   input_size=cfg.input_size,
                                   hidden_units=cfg.hidden_units)

    named = []
    for name, builder in (("channel_attention", attention_builder),
                          ("no_attention_baseline", baseline_builder)):
        result = run_repeated(builder, ds, tcfg, cfg.test_fraction)
        print(f"== {name}")
        print(result.to_text())
        named.append((name, {**result.mean}))
    table = compare_models(named)
    (outdir / "comparison.csv").write_text(table.to_csv(), encoding="utf-8")
    (outdir / "comparison.json").write_text(table.to_json() + "\n", encoding="utf-8")
    text = table.to_text()
    (outdir / "comparison.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--freeze-fraction", dest="freeze_fraction", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--reduction", type=int)
    p.add_argument("--gate-mode", dest="gate_mode", choices=list(GATE_MODES))
    p.add_argument("--widths", type=lambda s: [int(v) for v in s.split(",")],
                   help="comma-separated block widths, e.g. 32,64,128")
    p.add_argument("--hidden-units", dest="hidden_units", type=int)
    p.add_argument("--input-size", dest="input_size", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--n-per-class", dest="n_per_class", type=int)
    p.add_argument("--no-attention", dest="attention_enabled", action="store_false",
                   default=None)
    p.add_argument("--dataset", dest="dataset_path")
    p.add_argument("--outdir", dest="output_dir")


_OVERRIDE_KEYS = ("seed", "learning_rate", "batch_size", "max_epochs",
                  "freeze_fraction", "runs", "heads", "reduction", "gate_mode",
                  "widths", "hidden_units", "input_size", "test_fraction",
                  "n_per_class", "attention_enabled", "dataset_path", "output_dir")


def _config_from_args(args) -> CliConfig:
    overrides = {key: getattr(args, key) for key in _OVERRIDE_KEYS
                 if getattr(args, key, None) is not None}
    return parse_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canet",
        description="channel-attention CNN: synthetic data, training, evaluation, "
                    "gradient checks and model comparison")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, description in (
            ("synth-data", "generate a synthetic dataset archive"),
            ("train", "train a model and write checkpoint/history/metrics"),
            ("compare", "train attention and no-attention models with shared seeds")):
        p = sub.add_parser(name, help=description)
        _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gradcheck", help="run the gradient-check suite")
    p.add_argument("--threshold", type=float, default=LAYER_TOLERANCE)
    p.add_argument("--model-threshold", dest="model_threshold", type=float,
                   default=MODEL_TOLERANCE)
    return parser


def dispatch(args) -> int:
    if args.command == "gradcheck":
        return cmd_gradcheck(args.threshold, args.model_threshold)
    cfg = _config_from_args(args)
    if args.command == "synth-data":
        return cmd_synth_data(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint)
    if args.command == "compare":
        return cmd_compare(cfg)
    raise ValueError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
