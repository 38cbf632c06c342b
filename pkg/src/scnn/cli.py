"""Command-line surface: train, eval, sweep, gradcheck, inspect-checkpoint.

Experiments are described by a single JSON config (network, shortcut
indicator, dataset, training hyperparameters, output directory); a few
flags override config fields.  All outputs are plain files: history.csv,
sweep.csv, gradcheck.txt, and a checkpoint directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from scnn import ops, presets
from scnn.autograd import grad_check
from scnn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from scnn.data import DataFormatError, Dataset, load_cifar10, load_mnist, make_synthetic
from scnn.network import (
    NetworkSpec,
    ShortcutIndicator,
    SpecError,
    spec_from_dict,
    validate_spec,
)
from scnn.optimize import TrainConfig, evaluate, train

DATA_DIR_ENV = "SCNN_DATA_DIR"
GRADCHECK_PARAM_CEILING = 5000

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN_BATCHES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_BATCH = "test_batch.bin"


class ConfigError(ValueError):
    """Raised when an experiment config fails to parse; names the field."""


@dataclass
class DatasetConfig:
    kind: str
    data_dir: str | None = None
    subtract_channel_means: bool = False
    # synthetic only
    variant: str = "separable"
    train_samples: int = 400
    test_samples: int = 200
    image_size: int = 8
    seed: int = 0


@dataclass
class ExperimentConfig:
    network: NetworkSpec
    si: ShortcutIndicator
    dataset: DatasetConfig
    train: TrainConfig
    out_dir: Path
    precision: str = "float64"
    eval_interval: int = 0


def _parse_dataset(d: dict) -> DatasetConfig:
    kind = d.get("kind")
    if kind not in ("mnist", "cifar10", "synthetic"):
        raise ConfigError(f"dataset.kind: expected mnist, cifar10 or synthetic, got {kind!r}")
    cfg = DatasetConfig(kind=kind)
    for key in (
        "data_dir", "subtract_channel_means", "variant",
        "train_samples", "test_samples", "image_size", "seed",
    ):
        if key in d:
            setattr(cfg, key, d[key])
    if cfg.kind == "synthetic" and cfg.variant not in ("separable", "multiscale"):
        raise ConfigError(f"dataset.variant: expected separable or multiscale, got {cfg.variant!r}")
    return cfg


def _parse_train(d: dict) -> TrainConfig:
    allowed = set(TrainConfig.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"train.{sorted(unknown)[0]}: unknown field")
    try:
        return TrainConfig(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"train: {e}") from e


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    for key in ("network", "si", "dataset", "train", "out_dir"):
        if key not in raw:
            raise ConfigError(f"{key}: missing required field")
    try:
        spec = spec_from_dict(raw["network"])
        si = ShortcutIndicator.from_string(str(raw["si"]))
        validate_spec(spec, si)
    except SpecError as e:
        raise ConfigError(str(e)) from e
    precision = raw.get("precision", "float64")
    if precision not in ("float32", "float64"):
        raise ConfigError(f"precision: expected float32 or float64, got {precision!r}")
    return ExperimentConfig(
        network=spec,
        si=si,
        dataset=_parse_dataset(raw["dataset"]),
        train=_parse_train(raw["train"]),
        out_dir=Path(raw["out_dir"]),
        precision=precision,
        eval_interval=int(raw.get("eval_interval", 0)),
    )


def _resolve_data_dir(cfg: ExperimentConfig) -> Path:
    candidate = cfg.dataset.data_dir or os.environ.get(DATA_DIR_ENV)
    if not candidate:
        raise ConfigError(
            "dataset.data_dir: not set (pass --data-dir or set $" + DATA_DIR_ENV + ")"
        )
    return Path(candidate)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, test) pair for the configured dataset."""
    ds = cfg.dataset
    if ds.kind == "synthetic":
        train_set = make_synthetic(ds.variant, ds.train_samples, ds.image_size, ds.seed)
        test_set = make_synthetic(ds.variant, ds.test_samples, ds.image_size, ds.seed + 1)
        return train_set, test_set
    data_dir = _resolve_data_dir(cfg)
    if ds.kind == "mnist":
        tr_img, tr_lbl = (data_dir / name for name in MNIST_FILES["train"])
        te_img, te_lbl = (data_dir / name for name in MNIST_FILES["test"])
        return load_mnist(tr_img, tr_lbl), load_mnist(te_img, te_lbl)
    base = data_dir / "cifar-10-batches-bin"
    if not base.is_dir():
        base = data_dir
    train_set = load_cifar10(
        [base / name for name in CIFAR_TRAIN_BATCHES],
        subtract_channel_means=ds.subtract_channel_means,
    )
    test_set = load_cifar10(
        [base / CIFAR_TEST_BATCH], subtract_channel_means=ds.subtract_channel_means
    )
    return train_set, test_set


def _format_accuracy(acc: float | None) -> str:
    return "" if acc is None else f"{100.0 * acc:.2f}"


def write_history_csv(path: Path, history) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "mean_loss", "test_accuracy"])
        for rec in history:
            writer.writerow(
                [rec.iteration, f"{rec.mean_loss:.6f}", _format_accuracy(rec.test_accuracy)]
            )


def run_train(config: ExperimentConfig) -> int:
    """Train per the config; write history.csv and a final checkpoint."""
    ops.set_default_dtype(config.precision)
    train_set, test_set = load_datasets(config)
    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoint"

    callbacks = []
    if config.train.snapshot_interval:
        def snapshot(it, params, _record):
            if it % config.train.snapshot_interval == 0:
                save_checkpoint(
                    params, config.network, config.si, ckpt_dir,
                    iteration=it, precision=config.precision,
                )
        callbacks.append(snapshot)

    params, history = train(
        config.network, config.si, train_set, config.train,
        eval_dataset=test_set, eval_interval=config.eval_interval,
        callbacks=tuple(callbacks),
    )
    save_checkpoint(
        params, config.network, config.si, ckpt_dir,
        iteration=config.train.max_iterations, precision=config.precision,
    )
    write_history_csv(out_dir / "history.csv", history)
    accuracy, _ = evaluate(config.network, config.si, params, test_set)
    print(
        f"trained SI={config.si} for {config.train.max_iterations} iterations: "
        f"final test accuracy {100.0 * accuracy:.2f}%"
    )
    return 0


def run_eval(config: ExperimentConfig, ckpt_dir=None) -> int:
    """Evaluate a stored checkpoint on the config's test split."""
    ops.set_default_dtype(config.precision)
    ckpt_dir = Path(ckpt_dir) if ckpt_dir else config.out_dir / "checkpoint"
    params, manifest = load_checkpoint(ckpt_dir, expected_spec=config.network, expected_si=config.si)
    _, test_set = load_datasets(config)
    accuracy, confusion = evaluate(config.network, config.si, params, test_set)
    print(f"checkpoint at iteration {manifest['iteration']}: test accuracy {100.0 * accuracy:.2f}%")
    per_class = confusion.diagonal() / np.maximum(confusion.sum(axis=1), 1)
    for cls, frac in enumerate(per_class):
        print(f"  class {cls}: {100.0 * frac:.2f}% of {confusion[cls].sum()}")
    return 0


def _sweep_one(args: tuple[ExperimentConfig, str]) -> tuple[str, float | None, str]:
    """Train and evaluate one shortcut style; returns (si, accuracy, error)."""
    config, si_str = args
    try:
        ops.set_default_dtype(config.precision)
        si = ShortcutIndicator.from_string(si_str)
        validate_spec(config.network, si)
        run_cfg = replace(
            config,
            si=si,
            out_dir=config.out_dir / f"si_{si_str}",
        )
        train_set, test_set = load_datasets(run_cfg)
        run_cfg.out_dir.mkdir(parents=True, exist_ok=True)
        params, history = train(
            run_cfg.network, run_cfg.si, train_set, run_cfg.train,
            eval_dataset=test_set, eval_interval=run_cfg.eval_interval,
        )
        save_checkpoint(
            params, run_cfg.network, run_cfg.si, run_cfg.out_dir / "checkpoint",
            iteration=run_cfg.train.max_iterations, precision=run_cfg.precision,
        )
        write_history_csv(run_cfg.out_dir / "history.csv", history)
        accuracy, _ = evaluate(run_cfg.network, run_cfg.si, params, test_set)
        return si_str, accuracy, ""
    except Exception as e:  # a failed style becomes an error row, sweep continues
        return si_str, None, f"{type(e).__name__}: {e}"


def run_sweep(config: ExperimentConfig, styles, jobs: int = 1) -> int:
    """Train one network per shortcut style with identical seed and
    hyperparameters; write sweep.csv sorted in canonical binary order."""
    n_bits = 2 * config.network.r - 1
    if styles == "all":
        si_strings = [str(si) for si in ShortcutIndicator.all_styles(config.network.r)]
    else:
        si_strings = list(styles)
        for s in si_strings:
            if len(s) != n_bits or any(ch not in "01" for ch in s):
                raise ConfigError(f"si: {s!r} is not a valid {n_bits}-bit indicator")
    si_strings = sorted(set(si_strings), key=lambda s: int(s, 2))

    config.out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(config, s) for s in si_strings]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]

    accuracies = {s: acc for s, acc, _ in results if acc is not None}
    best = max(accuracies.values()) if accuracies else None
    sweep_path = config.out_dir / "sweep.csv"
    with open(sweep_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["si", "accuracy", "best", "error"])
        for si_str, acc, err in results:
            flag = "*" if acc is not None and acc == best else ""
            writer.writerow([si_str, _format_accuracy(acc), flag, err])
    for si_str, acc, err in results:
        shown = f"{100.0 * acc:.2f}%" if acc is not None else f"error ({err})"
        marker = " <- best" if acc is not None and acc == best else ""
        print(f"SI={si_str}: {shown}{marker}")
    print(f"wrote {sweep_path}")
    return 0 if all(err == "" for _, _, err in results) else 1


def run_gradcheck(
    spec: NetworkSpec | None,
    si: str | None,
    seed: int,
    epsilon: float,
    threshold: float,
    out_dir: Path | None,
) -> int:
    """Finite-difference verification of the backward pass.

    Runs every shortcut style when none is given.  Exit status is
    nonzero iff any relative error exceeds the threshold.
    """
    from scnn.optimize import init_params

    spec = spec or presets.tiny_gradcheck_net()
    styles = (
        [ShortcutIndicator.from_string(si)] if si else list(ShortcutIndicator.all_styles(spec.r))
    )
    n_params = sum(arr.size for _, arr in init_params(spec, styles[0], seed=0).named_arrays())
    if n_params > GRADCHECK_PARAM_CEILING:
        raise ConfigError(
            f"network has {n_params} parameters; gradcheck perturbs each one and is "
            f"capped at {GRADCHECK_PARAM_CEILING} (use a smaller network)"
        )
    sections = []
    worst = 0.0
    for style in styles:
        report = grad_check(spec, style, seed=seed, epsilon=epsilon)
        worst = max(worst, report.max_rel_err)
        sections.append(f"SI={style}\n{report.as_text(threshold)}")
    text = "\n\n".join(sections) + "\n"
    print(text, end="")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "gradcheck.txt").write_text(text)
    return 0 if worst <= threshold else 1


def run_inspect(ckpt_dir) -> int:
    """Print the manifest and per-array statistics of a checkpoint."""
    params, manifest = load_checkpoint(ckpt_dir)
    print(f"format version: {manifest['format_version']}")
    print(f"created by:     {manifest['created_by']}")
    print(f"SI:             {manifest['si']}")
    print(f"iteration:      {manifest['iteration']}")
    print(f"precision:      {manifest['precision']}")
    net = manifest["network"]
    print(f"input shape:    {tuple(net['input_shape'])}, classes: {net['num_classes']}")
    print(f"{'array':<16} {'shape':<18} {'min':>11} {'max':>11} {'mean':>11}")
    for name, arr in params.named_arrays():
        print(
            f"{name:<16} {str(tuple(arr.shape)):<18} "
            f"{arr.min():>11.4e} {arr.max():>11.4e} {arr.mean():>11.4e}"
        )
    return 0


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if args.si is not None:
        try:
            si = ShortcutIndicator.from_string(args.si)
            validate_spec(config.network, si)
        except SpecError as e:
            raise ConfigError(f"si: {e}") from e
        config = replace(config, si=si)
    if args.out is not None:
        config = replace(config, out_dir=Path(args.out))
    train_cfg = config.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, rng_seed=args.seed)
    if args.deterministic:
        train_cfg = replace(train_cfg, deterministic=True)
    config = replace(config, train=train_cfg)
    if args.data_dir is not None:
        config.dataset.data_dir = args.data_dir
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scnn",
        description="Train and inspect shortcut convolutional neural networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="experiment JSON config")
        p.add_argument("--si", help="shortcut indicator bits, e.g. 01010")
        p.add_argument("--seed", type=int, help="override train.rng_seed")
        p.add_argument("--deterministic", action="store_true", help="force deterministic training")
        p.add_argument("--out", help="override the output directory")
        p.add_argument(
            "--data-dir",
            default=os.environ.get(DATA_DIR_ENV),
            help=f"dataset directory (falls back to ${DATA_DIR_ENV})",
        )

    p_train = sub.add_parser("train", help="train one network and write history + checkpoint")
    add_common(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint directory (default <out>/checkpoint)")

    p_sweep = sub.add_parser("sweep", help="train every shortcut style and tabulate accuracies")
    add_common(p_sweep)
    p_sweep.add_argument(
        "--styles", default="all",
        help='"all" or a comma-separated list of indicators (default all)',
    )
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel training processes")

    p_gc = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    add_common(p_gc, needs_config=False)
    p_gc.add_argument("--epsilon", type=float, default=1e-5, help="finite-difference step")
    p_gc.add_argument("--threshold", type=float, default=1e-5, help="max allowed relative error")

    p_ins = sub.add_parser("inspect-checkpoint", help="print a checkpoint's manifest and stats")
    p_ins.add_argument("--checkpoint", required=True, help="checkpoint directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "inspect-checkpoint":
            return run_inspect(args.checkpoint)
        if args.command == "gradcheck":
            spec = None
            if args.config:
                config = load_experiment_config(args.config)
                spec = config.network
            out_dir = Path(args.out) if args.out else None
            return run_gradcheck(
                spec, args.si, args.seed or 0, args.epsilon, args.threshold, out_dir
            )
        config = _apply_overrides(load_experiment_config(args.config), args)
        if args.command == "train":
            return run_train(config)
        if args.command == "eval":
            return run_eval(config, args.checkpoint)
        if args.command == "sweep":
            styles = "all" if args.styles == "all" else args.styles.split(",")
            return run_sweep(config, styles, jobs=args.jobs)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, SpecError, DataFormatError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
