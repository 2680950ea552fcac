"""Command-line entry point: gen | train | inspect | ablate.

Runs are driven by a flat TOML config file validated against a schema
before any work happens. Every artifact lands inside the --out directory,
written atomically (temp file + rename). Exit codes: 0 success, 2 usage or
config error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dataio import Dataset, SyntheticSpec, generate_synthetic, read_vpf, write_vpf
from .errors import ConfigError, DivergenceError, RatemoeError
from .losses import LossWeights
from .model import Model, ModelConfig
from .tensor import no_grad
from .training import (
    TrainConfig,
    ablation_csv,
    load_checkpoint,
    run_ablation,
    train,
)

# key -> (type, default). ``None`` default means "optional, absent allowed".
_SCHEMA = {
    "data": (str, "synthetic"),
    "vpf_path": (str, None),
    "classes": (int, 8),
    "clips_per_class": (int, 32),
    "frames": (int, 32),
    "dim": (int, 64),
    "content_axes": (int, 4),
    "motion_frequencies": (list, [2, 5]),
    "noise_sigma": (float, 0.1),
    "rates": (list, [2, 4, 8, 16]),
    "heads": (int, 4),
    "aggregation": (str, "soft_merge"),
    "alpha": (float, 0.5),
    "tau": (float, 1.0),
    "delta": (float, 0.5),
    "metric_dim": (int, None),
    "normalize_scores": (bool, True),
    "interaction": (str, "bidirectional"),
    "threshold": (float, 0.5),
    "combination": (str, "global_attn"),
    "epochs": (int, 50),
    "batch_size": (int, 32),
    "learning_rate": (float, 1e-3),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "eps": (float, 1e-8),
    "weight_decay": (float, 0.0),
    "eval_fraction": (float, 0.25),
    "eval_every": (int, 1),
    "stop_at_accuracy": (float, None),
    "seed": (int, 0),
    "lambda_rank": (float, 0.1),
    "lambda_div": (float, 0.01),
    "lambda_gate": (float, 0.01),
    "rank_temperature": (float, 1.0),
}

_INT_LIST_KEYS = {"motion_frequencies", "rates"}


def load_config(path: str, seed_override=None) -> dict:
    """Parse and schema-check a flat TOML config; returns resolved values."""
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: not valid TOML: {e}") from e
    config = {}
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        want, _ = _SCHEMA[key]
        if isinstance(value, dict):
            raise ConfigError(f"{path}: {key!r} is a table; the config must be flat")
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, want) or (want is int and isinstance(value, bool)):
            raise ConfigError(
                f"{path}: key {key!r} must be {want.__name__}, got {type(value).__name__}"
            )
        if key in _INT_LIST_KEYS:
            if not value or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value
            ):
                raise ConfigError(f"{path}: {key!r} must be a non-empty list of integers")
        config[key] = value
    for key, (_, default) in _SCHEMA.items():
        if key not in config and default is not None:
            config[key] = default
    if seed_override is not None:
        config["seed"] = int(seed_override)
    if config["data"] not in ("synthetic", "vpf"):
        raise ConfigError(f"{path}: data must be 'synthetic' or 'vpf', got {config['data']!r}")
    if config["data"] == "vpf" and "vpf_path" not in config:
        raise ConfigError(f"{path}: data = 'vpf' requires vpf_path")
    if config["data"] == "synthetic" and "vpf_path" in config:
        raise ConfigError(f"{path}: exactly one data source: drop vpf_path or set data = 'vpf'")
    return config


def synthetic_spec(config: dict) -> SyntheticSpec:
    return SyntheticSpec(
        num_classes=config["classes"],
        clips_per_class=config["clips_per_class"],
        frames=config["frames"],
        dim=config["dim"],
        content_axis_count=config["content_axes"],
        motion_frequencies=tuple(config["motion_frequencies"]),
        noise_sigma=config["noise_sigma"],
        seed=config["seed"],
    )


def load_dataset(config: dict) -> Dataset:
    if config["data"] == "vpf":
        return read_vpf(config["vpf_path"])
    return generate_synthetic(synthetic_spec(config))


def model_config(config: dict, ds: Dataset) -> ModelConfig:
    return ModelConfig(
        rates=tuple(config["rates"]),
        dim=ds.dim,
        num_classes=ds.num_classes,
        heads=config["heads"],
        aggregation=config["aggregation"],
        alpha=config["alpha"],
        tau=config["tau"],
        delta=config["delta"],
        metric_dim=config.get("metric_dim"),
        normalize_scores=config["normalize_scores"],
        interaction=config["interaction"],
        threshold=config["threshold"],
        combination=config["combination"],
        seed=config["seed"],
    )


def train_config(config: dict) -> TrainConfig:
    return TrainConfig(
        epochs=config["epochs"],
        batch_size=config["batch_size"],
        learning_rate=config["learning_rate"],
        beta1=config["beta1"],
        beta2=config["beta2"],
        eps=config["eps"],
        weight_decay=config["weight_decay"],
        seed=config["seed"],
        eval_fraction=config["eval_fraction"],
        eval_every=config["eval_every"],
        stop_at_accuracy=config.get("stop_at_accuracy"),
    )


def loss_weights(config: dict) -> LossWeights:
    return LossWeights(
        lambda_rank=config["lambda_rank"],
        lambda_div=config["lambda_div"],
        lambda_gate=config["lambda_gate"],
        rank_temperature=config["rank_temperature"],
    )


def write_text_atomic(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_gen(args) -> int:
    config = load_config(args.config, args.seed)
    ds = load_dataset(config)
    os.makedirs(args.out, exist_ok=True)
    target = os.path.join(args.out, "dataset.vpf")
    write_vpf(ds, target)
    print(f"wrote {len(ds)} clips (C={ds.num_classes}, D={ds.dim}) to {target}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, args.seed)
    ds = load_dataset(config)
    model = Model(model_config(config, ds))
    os.makedirs(args.out, exist_ok=True)
    started = time.time()
    report = train(
        model,
        ds,
        train_config(config),
        weights=loss_weights(config),
        out_dir=args.out,
        config_echo=config,
    )
    report.wall_clock_seconds = time.time() - started
    write_text_atomic(os.path.join(args.out, "report.json"), report.to_json())
    # Wall clock lives in a sidecar so report.json stays replayable.
    write_text_atomic(
        os.path.join(args.out, "timing.json"),
        json.dumps({"wall_clock_seconds": report.wall_clock_seconds}) + "\n",
    )
    if report.usage is not None:
        write_text_atomic(os.path.join(args.out, "usage.csv"), report.usage.to_csv_text())
    print(
        f"final eval accuracy {report.final_eval_accuracy:.4f} "
        f"after {len(report.epochs)} epochs -> {args.out}"
    )
    return 0


def cmd_inspect(args) -> int:
    model, run_config = load_checkpoint(args.checkpoint)
    if not run_config:
        raise ConfigError(f"{args.checkpoint}: no embedded run config; cannot locate data")
    ds = load_dataset(run_config)
    if not 0 <= args.clip < len(ds):
        raise ConfigError(f"clip index {args.clip} out of range [0, {len(ds)})")
    clip = ds[args.clip]
    with no_grad():
        res = model.forward(clip.frames)
    payload = {
        "clip_id": clip.clip_id,
        "label": clip.label,
        "prediction": int(res.predictions()[0]),
        "logits": res.logits.data[0].tolist(),
        "readout_weights": res.w.data[0].tolist(),
        "gate_matrix": None if res.gate_matrix is None else res.gate_matrix.to_json_dict(0),
        "merge_traces": [t.to_json_dict(0) for t in res.traces],
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_text_atomic(os.path.join(args.out, "inspect.json"), text + "\n")
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config, args.seed)
    ds = load_dataset(config)
    rows = run_ablation(
        args.axis, ds, model_config(config, ds), train_config(config), loss_weights(config)
    )
    os.makedirs(args.out, exist_ok=True)
    target = os.path.join(args.out, f"ablation_{args.axis}.csv")
    write_text_atomic(target, ablation_csv(rows))
    print(f"wrote {len(rows)} variants to {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratemoe",
        description="Multi-rate mixture-of-experts sequence classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="flat TOML config file")
        p.add_argument("--out", required=config, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_gen = sub.add_parser("gen", help="generate the configured synthetic dataset")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train a model and write run artifacts")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_inspect = sub.add_parser("inspect", help="dump one clip's traces from a checkpoint")
    p_inspect.add_argument("--checkpoint", required=True, help="checkpoint .npz path")
    p_inspect.add_argument("--clip", type=int, required=True, help="clip index")
    p_inspect.add_argument("--out", default=None, help="optional output directory")
    p_inspect.set_defaults(func=cmd_inspect)

    p_ablate = sub.add_parser("ablate", help="run one ablation axis and write a CSV")
    common(p_ablate)
    p_ablate.add_argument(
        "--axis",
        required=True,
        help="aggregation | interaction | combination | expert_grid",
    )
    p_ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        if e.checkpoint_path:
            print(f"last good checkpoint: {e.checkpoint_path}", file=sys.stderr)
        return 3
    except (RatemoeError, FileNotFoundError, NotADirectoryError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
