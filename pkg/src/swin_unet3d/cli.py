"""Command-line interface: data generation, training, evaluation, prediction,
gradient checking, and parameter reporting.

Configuration comes from an optional flat ``key = value`` file (``#`` starts
a comment) plus command-line flags, with flags winning. Unknown keys are hard
errors and every effective value is echoed at startup. Exit codes: 0 success,
1 usage or configuration error, 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .checkpoint import CheckpointError, apply_state, load_checkpoint, save_checkpoint
from .data import (
    HORIZON_MINUTES,
    FormatError,
    TrafficMovie,
    denormalize,
    generate_synthetic,
    read_movie,
    slice_samples,
    write_movie,
)
from .model import ModelConfig, SwinUNet3D, count_parameters, module_subtotals
from .tensor import ConfigError, Tensor, no_grad
from .training import TrainConfig, evaluate, mse_loss, per_horizon_mse, train

__all__ = ["main", "console_main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # default argparse exits with 2; usage errors are 1 here
        raise UsageError(message)


def _parse_int_tuple(text: str, n: int, key: int) -> tuple:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != n:
        raise UsageError(f"{key}: expected {n} comma-separated integers, got {text!r}")
    return tuple(int(p) for p in parts)


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# key -> (section, converter); section "model" maps onto ModelConfig, "train"
# onto TrainConfig
_CONFIG_KEYS = {
    "in_frames": ("model", int),
    "in_channels": ("model", int),
    "out_frames": ("model", int),
    "out_channels": ("model", int),
    "static_channels": ("model", int),
    "embed_dim": ("model", int),
    "patch_size": ("model", lambda v: _parse_int_tuple(v, 3, "patch_size")),
    "window": ("model", lambda v: _parse_int_tuple(v, 3, "window")),
    "shift": ("model", lambda v: _parse_int_tuple(v, 3, "shift")),
    "encoder_depths": ("model", lambda v: _parse_int_tuple(v, 4, "encoder_depths")),
    "neck_depth": ("model", int),
    "decoder_depths": ("model", lambda v: _parse_int_tuple(v, 4, "decoder_depths")),
    "heads": ("model", int),
    "mlp_ratio": ("model", float),
    "mlp_gelu": ("model", _parse_bool),
    "merge_mode": ("model", str),
    "mix_features": ("model", _parse_bool),
    "shifted_first": ("model", _parse_bool),
    "qkv_bias": ("model", _parse_bool),
    "ln_eps": ("model", float),
    "lr_init": ("train", float),
    "lr_min": ("train", float),
    "plateau_factor": ("train", float),
    "plateau_patience": ("train", int),
    "plateau_min_delta": ("train", float),
    "batch_size": ("train", int),
    "max_epochs": ("train", int),
    "max_steps": ("train", int),
    "seed": ("train", int),
    "val_fraction": ("train", float),
    "normalize": ("train", _parse_bool),
    "augment": ("train", _parse_bool),
    "permute_channels": ("train", _parse_bool),
    "clip_norm": ("train", float),
}


def _read_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        section, convert = _CONFIG_KEYS[key]
        values[key] = (section, convert(value))
    return values


def _build_configs(args) -> tuple[ModelConfig, TrainConfig]:
    model_kwargs = {}
    train_kwargs = {}
    if getattr(args, "config", None):
        for key, (section, value) in _read_config_file(args.config).items():
            (model_kwargs if section == "model" else train_kwargs)[key] = value
    for key, (section, convert) in _CONFIG_KEYS.items():
        flag = getattr(args, f"opt_{key}", None)
        if flag is not None:
            (model_kwargs if section == "model" else train_kwargs)[key] = convert(flag)
    try:
        model_cfg = ModelConfig(**model_kwargs)
        train_cfg = TrainConfig(**train_kwargs)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    print("effective configuration:")
    for f in fields(model_cfg):
        print(f"  {f.name} = {getattr(model_cfg, f.name)}")
    for f in fields(train_cfg):
        print(f"  {f.name} = {getattr(train_cfg, f.name)}")
    return model_cfg, train_cfg


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    group = parser.add_argument_group("config overrides")
    for key in _CONFIG_KEYS:
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"opt_{key}", metavar="V")


def _load_samples(paths, what: str):
    samples = []
    for i, path in enumerate(paths):
        movie = read_movie(path)
        samples.extend(slice_samples(movie, movie_id=i))
    if not samples:
        raise ConfigError(f"no samples: {what} movies are shorter than 24 frames")
    return samples


def _cmd_generate_data(args) -> int:
    out = Path(args.out)
    if out.parent != Path("") and not out.parent.is_dir():
        raise UsageError(f"output directory {out.parent} does not exist")
    try:
        movie = generate_synthetic(args.height, args.width, args.frames, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_movie(out, movie)
    print(f"wrote {out} ({movie.frames}x{movie.height}x{movie.width}x8, seed {args.seed})")
    return EXIT_OK


def _cmd_train(args) -> int:
    model_cfg, train_cfg = _build_configs(args)
    samples = _load_samples(args.data, "training")
    model = SwinUNet3D(model_cfg, seed=train_cfg.seed)
    report = train(model, samples, train_cfg, log_path=args.log)
    for line in report["log_lines"]:
        print(line)
    print(f"best val_mse={report['best_val_mse']:.10g} at epoch {report['best_epoch']}")
    if args.out_checkpoint:
        save_checkpoint(args.out_checkpoint, report["best_state"])
        print(f"wrote checkpoint {args.out_checkpoint}")
    return EXIT_OK


def _restore_model(args, model_cfg: ModelConfig, train_cfg: TrainConfig) -> SwinUNet3D:
    model = SwinUNet3D(model_cfg, seed=train_cfg.seed)
    apply_state(model, load_checkpoint(args.checkpoint))
    return model


def _cmd_eval(args) -> int:
    model_cfg, train_cfg = _build_configs(args)
    samples = _load_samples(args.data, "evaluation")
    model = _restore_model(args, model_cfg, train_cfg)
    overall = evaluate(model, samples, normalized=train_cfg.normalize, batch_size=train_cfg.batch_size)
    horizons = per_horizon_mse(model, samples, normalized=train_cfg.normalize, batch_size=train_cfg.batch_size)
    print(f"overall_mse={overall:.10g}")
    for minutes, value in zip(HORIZON_MINUTES, horizons):
        print(f"horizon_{minutes}min_mse={value:.10g}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    model_cfg, train_cfg = _build_configs(args)
    samples = _load_samples(args.data, "prediction")
    model = _restore_model(args, model_cfg, train_cfg)
    frames = []
    scale = 255.0 if train_cfg.normalize else 1.0
    with no_grad():
        for lo in range(0, len(samples), train_cfg.batch_size):
            batch = samples[lo : lo + train_cfg.batch_size]
            x = np.stack([s.input for s in batch]) / np.float32(scale)
            pred = model(Tensor(x)).data * scale
            for clip in pred:  # (6, C, H, W) -> (6, H, W, C)
                frames.append(denormalize(clip.transpose(0, 2, 3, 1)))
    movie = TrafficMovie(np.concatenate(frames, axis=0))
    write_movie(args.out, movie)
    print(f"wrote {args.out} ({movie.frames} frames, 6 per sample x {len(samples)} samples)")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    tiny = ModelConfig(
        embed_dim=8,
        heads=2,
        encoder_depths=(1, 1, 1, 1),
        neck_depth=1,
        decoder_depths=(1, 1, 1, 1),
    )
    model = SwinUNet3D(tiny, seed=args.seed, dtype=np.float64)
    rng = np.random.default_rng(args.seed)
    x = Tensor(rng.standard_normal((1, tiny.in_frames, tiny.in_channels, 16, 16)))
    target = Tensor(rng.standard_normal((1, tiny.out_frames, tiny.out_channels, 16, 16)))

    def loss_fn():
        return mse_loss(model(x), target)

    err, worst = gc.check_parameter_gradients(loss_fn, model.parameters(), n_coords=12, seed=args.seed)
    print(f"max_rel_error={err:.3e} worst={worst}")
    if err >= 1e-3:
        print(f"gradcheck FAILED: parameter {worst} exceeds 1e-3")
        return EXIT_RUNTIME
    print("gradcheck passed")
    return EXIT_OK


def _cmd_param_count(args) -> int:
    model_cfg, _ = _build_configs(args)
    counts = count_parameters(model_cfg)
    for module, n in sorted(module_subtotals(counts).items()):
        print(f"{module}: {n}")
    print(f"total: {sum(counts.values())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="swinunet3d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic traffic movie")
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--frames", type=int, default=288)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_generate_data)

    p = sub.add_parser("train", help="train on movie files")
    p.add_argument("--data", nargs="+", required=True, help="movie file(s)")
    p.add_argument("--out-checkpoint")
    p.add_argument("--log", help="append per-epoch lines to this file")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="report overall and per-horizon MSE")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", nargs="+", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="write 6 predicted frames per sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of a tiny model")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("param-count", help="report per-module parameter counts")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_param_count)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime/numerical failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
