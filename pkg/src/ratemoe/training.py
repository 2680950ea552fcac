"""Deterministic training harness, evaluation, and ablation runner.

All randomness (splits, shuffles, init) descends from the config seed via
labeled PRNG streams, and every step is single-threaded float64, so a rerun
with the same config reproduces parameters, logs, and reports bit for bit.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataio import Dataset
from .errors import ConfigError, ContractError, DivergenceError
from .losses import LossBreakdown, LossWeights, loss_total
from .model import Model, ModelConfig
from .params import ParamBank
from .rng import stream
from .tensor import no_grad

COHORTS = ("train", "test-correct", "test-wrong")

EXPERT_GRID = (
    (2,),
    (4,),
    (8,),
    (16,),
    (2, 4),
    (4, 8),
    (8, 16),
    (2, 8),
    (4, 16),
    (2, 16),
    (2, 4, 8),
    (4, 8, 16),
    (2, 4, 16),
    (2, 4, 8, 16),
)

ABLATION_AXES = {
    "aggregation": ("hard", "mean", "max", "soft_merge"),
    "interaction": ("none", "slow2fast", "fast2slow", "bidirectional"),
    "combination": ("avg_pool", "linear", "mlp", "local_attn", "global_attn"),
    "expert_grid": tuple("+".join(str(r) for r in rates) for rates in EXPERT_GRID),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    eval_fraction: float = 0.25
    eval_every: int = 1
    stop_at_accuracy: Optional[float] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ConfigError(f"eval_fraction must lie in [0, 1), got {self.eval_fraction}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")


class Adam:
    """Adaptive-moment optimizer with bias correction, iterated in name order."""

    def __init__(self, bank: ParamBank, cfg: TrainConfig):
        self.bank = bank
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(bank[name].data) for name in bank.names()}
        self.v = {name: np.zeros_like(bank[name].data) for name in bank.names()}

    def step(self):
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p in self.bank:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[p.name]
            v = self.v[p.name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            if c.weight_decay:
                update = update + c.weight_decay * p.data
            p.data = p.data - c.learning_rate * update


@dataclass
class ExpertUsage:
    """Per-class mean readout mass per expert, split into three cohorts."""

    num_classes: int
    n_experts: int
    cohorts: dict = field(default_factory=dict)  # name -> [C, N]
    counts: dict = field(default_factory=dict)  # name -> [C]

    def to_csv_text(self) -> str:
        header = "class," + ",".join(f"expert_{i}" for i in range(self.n_experts)) + ",cohort"
        lines = [header]
        for cohort in COHORTS:
            if cohort not in self.cohorts:
                continue
            matrix = self.cohorts[cohort]
            for c in range(self.num_classes):
                cells = ",".join(repr(float(x)) for x in matrix[c])
                lines.append(f"{c},{cells},{cohort}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "n_experts": self.n_experts,
            "cohorts": {k: v.tolist() for k, v in sorted(self.cohorts.items())},
            "counts": {k: v.tolist() for k, v in sorted(self.counts.items())},
        }


def usage_matrix(w_rows: np.ndarray, labels: np.ndarray, num_classes: int, n_experts: int):
    """Mean readout mass per class; classes with no clips get uniform rows."""
    matrix = np.full((num_classes, n_experts), 1.0 / n_experts)
    counts = np.zeros(num_classes, dtype=np.int64)
    for c in range(num_classes):
        mask = labels == c
        counts[c] = mask.sum()
        if counts[c]:
            matrix[c] = w_rows[mask].mean(axis=0)
    return matrix, counts


@dataclass
class RunReport:
    config_echo: dict
    initial_eval_accuracy: float
    epochs: list = field(default_factory=list)
    final_eval_accuracy: float = 0.0
    stopped_early: bool = False
    usage: Optional[ExpertUsage] = None
    wall_clock_seconds: float = 0.0  # kept out of the JSON: reports must be replayable

    def to_json_dict(self) -> dict:
        return {
            "config": self.config_echo,
            "initial_eval_accuracy": self.initial_eval_accuracy,
            "epochs": self.epochs,
            "final_eval_accuracy": self.final_eval_accuracy,
            "stopped_early": self.stopped_early,
            "usage": None if self.usage is None else self.usage.to_json_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def split_dataset(ds: Dataset, eval_fraction: float, seed: int) -> tuple:
    """Deterministic stratified split; returns (train_ds, eval_ds)."""
    by_class = {}
    for idx, clip in enumerate(ds.clips):
        by_class.setdefault(clip.label, []).append(idx)
    train_idx, eval_idx = [], []
    for label in sorted(by_class):
        indices = np.array(by_class[label])
        order = stream(seed, "split", label).permutation(len(indices))
        k = int(len(indices) * eval_fraction)
        eval_idx.extend(indices[order[:k]].tolist())
        train_idx.extend(indices[order[k:]].tolist())
    train_idx.sort()
    eval_idx.sort()
    make = lambda idxs: Dataset(
        clips=[ds.clips[i] for i in idxs], num_classes=ds.num_classes, dim=ds.dim
    )
    return make(train_idx), make(eval_idx)


def _batch_groups(ds: Dataset, indices) -> list:
    """Split an index batch into runs of equal T so stacking is legal."""
    groups = []
    for i in indices:
        t = ds.clips[i].frames.shape[0]
        if groups and groups[-1][0] == t:
            groups[-1][1].append(i)
        else:
            groups.append((t, [i]))
    return groups


def _stack(ds: Dataset, indices) -> tuple:
    frames = np.stack([ds.clips[i].frames for i in indices])
    labels = np.array([ds.clips[i].label for i in indices], dtype=np.intp)
    return frames, labels


def _forward_rows(model: Model, ds: Dataset, batch_size: int = 64) -> tuple:
    """Predictions and readout-mass rows for every clip, in dataset order."""
    preds = np.zeros(len(ds), dtype=np.intp)
    w_rows = np.zeros((len(ds), model.n_experts))
    with no_grad():
        for start in range(0, len(ds), batch_size):
            indices = list(range(start, min(start + batch_size, len(ds))))
            for _, group in _batch_groups(ds, indices):
                frames, _ = _stack(ds, group)
                res = model.forward(frames)
                preds[group] = res.predictions()
                w_rows[group] = res.w.data
    return preds, w_rows


def evaluate(model: Model, ds: Dataset) -> tuple:
    """Top-1 accuracy plus usage matrices for correct/wrong cohorts."""
    if len(ds) == 0:
        raise ContractError("evaluate needs a non-empty dataset")
    preds, w_rows = _forward_rows(model, ds)
    labels = np.array([c.label for c in ds.clips], dtype=np.intp)
    correct = preds == labels
    usage = ExpertUsage(num_classes=ds.num_classes, n_experts=model.n_experts)
    for name, mask in (("test-correct", correct), ("test-wrong", ~correct)):
        matrix, counts = usage_matrix(
            w_rows[mask], labels[mask], ds.num_classes, model.n_experts
        )
        usage.cohorts[name] = matrix
        usage.counts[name] = counts
    return float(correct.mean()), usage


def full_usage(model: Model, train_ds: Dataset, eval_ds: Dataset) -> ExpertUsage:
    """Three-cohort usage matrix: train clips plus eval correct/wrong."""
    usage = ExpertUsage(num_classes=train_ds.num_classes, n_experts=model.n_experts)
    preds, w_rows = _forward_rows(model, train_ds)
    labels = np.array([c.label for c in train_ds.clips], dtype=np.intp)
    usage.cohorts["train"], usage.counts["train"] = usage_matrix(
        w_rows, labels, train_ds.num_classes, model.n_experts
    )
    if len(eval_ds):
        _, eval_usage = evaluate(model, eval_ds)
        usage.cohorts.update(eval_usage.cohorts)
        usage.counts.update(eval_usage.counts)
    return usage


def save_checkpoint(path: str, model: Model, run_config: Optional[dict] = None):
    payload = {f"param:{k}": v for k, v in model.bank.state_dict().items()}
    payload["model_config"] = np.array(json.dumps(model.cfg.to_dict(), sort_keys=True))
    payload["run_config"] = np.array(json.dumps(run_config or {}, sort_keys=True))
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        np.savez(f, **payload)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple:
    """Returns (model, run_config dict)."""
    with np.load(path, allow_pickle=False) as z:
        model_cfg = ModelConfig.from_dict(json.loads(str(z["model_config"])))
        run_config = json.loads(str(z["run_config"]))
        state = {k[len("param:") :]: z[k] for k in z.files if k.startswith("param:")}
    model = Model(model_cfg)
    model.bank.load_state_dict(state)
    return model, run_config


def train(
    model: Model,
    dataset: Dataset,
    cfg: TrainConfig,
    weights: Optional[LossWeights] = None,
    out_dir: Optional[str] = None,
    config_echo: Optional[dict] = None,
) -> RunReport:
    """Run the optimization loop; returns a replayable RunReport.

    With ``out_dir`` set, writes train_log.jsonl incrementally, a final
    checkpoint.npz, and on divergence a last_good.npz checkpoint whose
    path is carried by the raised error.
    """
    weights = weights or LossWeights()
    train_ds, eval_ds = split_dataset(dataset, cfg.eval_fraction, cfg.seed)
    if len(eval_ds) == 0:
        eval_ds = train_ds  # tiny smoke runs: evaluate on the train split
    if len(train_ds) == 0:
        raise ContractError("training split is empty")
    adam = Adam(model.bank, cfg)
    log_file = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_file = open(os.path.join(out_dir, "train_log.jsonl"), "w", encoding="utf-8")
    started = time.time()
    report = RunReport(
        config_echo=config_echo or {},
        initial_eval_accuracy=evaluate(model, eval_ds)[0],
    )
    last_good = model.bank.state_dict()
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = stream(cfg.seed, "epoch", epoch).permutation(len(train_ds))
            epoch_losses = []
            hits = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size].tolist()
                for _, group in _batch_groups(train_ds, batch):
                    frames, labels = _stack(train_ds, group)
                    res = model.forward(frames)
                    total, breakdown = loss_total(
                        res.logits, labels, res.rank_pairs, res.expert_outputs, res.w, weights
                    )
                    if not math.isfinite(breakdown.total):
                        # Roll the model back to the last epoch boundary so
                        # callers are left with usable parameters.
                        model.bank.load_state_dict(last_good)
                        ckpt = None
                        if out_dir:
                            ckpt = os.path.join(out_dir, "last_good.npz")
                            save_checkpoint(ckpt, model, config_echo)
                        raise DivergenceError(
                            f"non-finite loss at step {step}", checkpoint_path=ckpt
                        )
                    model.bank.zero_grad()
                    total.backward()
                    adam.step()
                    hits += int((res.predictions() == labels).sum())
                    epoch_losses.append(breakdown)
                    if log_file:
                        entry = {"step": step}
                        entry.update(breakdown.to_dict())
                        log_file.write(json.dumps(entry, sort_keys=True) + "\n")
                    step += 1
            last_good = model.bank.state_dict()
            record = {
                "epoch": epoch,
                "train_accuracy": hits / len(train_ds),
                "loss": _mean_breakdown(epoch_losses),
            }
            is_last = epoch == cfg.epochs - 1
            if epoch % cfg.eval_every == 0 or is_last:
                record["eval_accuracy"] = evaluate(model, eval_ds)[0]
                report.final_eval_accuracy = record["eval_accuracy"]
            report.epochs.append(record)
            if (
                cfg.stop_at_accuracy is not None
                and record.get("eval_accuracy", 0.0) >= cfg.stop_at_accuracy
            ):
                report.stopped_early = True
                break
        if cfg.epochs == 0:
            report.final_eval_accuracy = report.initial_eval_accuracy
        report.usage = full_usage(model, train_ds, eval_ds)
        report.wall_clock_seconds = time.time() - started
        if out_dir:
            save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), model, config_echo)
        return report
    finally:
        if log_file:
            log_file.close()


def _mean_breakdown(losses: list) -> dict:
    if not losses:
        return LossBreakdown(0.0, 0.0, 0.0, 0.0, 0.0).to_dict()
    keys = ("cls", "rank", "div", "gate", "total")
    return {k: sum(getattr(b, k) for b in losses) / len(losses) for k in keys}


def linear_probe(train_ds: Dataset, eval_ds: Dataset, steps: int = 800, lr: float = 0.5) -> float:
    """Softmax regression on frame-averaged features; the temporal-blind baseline."""
    if len(train_ds) == 0 or len(eval_ds) == 0:
        raise ContractError("linear_probe needs non-empty splits")

    def features(ds):
        x = np.stack([c.frames.mean(axis=0) for c in ds.clips])
        y = np.array([c.label for c in ds.clips], dtype=np.intp)
        return x, y

    x_train, y_train = features(train_ds)
    x_eval, y_eval = features(eval_ds)
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0)
    sd[sd == 0] = 1.0
    x_train = (x_train - mu) / sd
    x_eval = (x_eval - mu) / sd
    n, d = x_train.shape
    c = train_ds.num_classes
    w = np.zeros((d, c))
    b = np.zeros(c)
    onehot = np.eye(c)[y_train]
    for _ in range(steps):
        logits = x_train @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        grad = (p - onehot) / n
        w -= lr * (x_train.T @ grad)
        b -= lr * grad.sum(axis=0)
    return float((np.argmax(x_eval @ w + b, axis=1) == y_eval).mean())


def run_ablation(
    axis: str,
    dataset: Dataset,
    base_model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    weights: Optional[LossWeights] = None,
) -> list:
    """Train one variant per axis value; returns one result row per variant."""
    if axis not in ABLATION_AXES:
        raise ConfigError(
            f"unknown ablation axis {axis!r}; valid: {sorted(ABLATION_AXES)}"
        )
    rows = []
    for variant in ABLATION_AXES[axis]:
        cfg_dict = base_model_cfg.to_dict()
        if axis == "expert_grid":
            cfg_dict["rates"] = [int(r) for r in variant.split("+")]
        else:
            cfg_dict[axis] = variant
        model = Model(ModelConfig.from_dict(cfg_dict))
        report = train(model, dataset, train_cfg, weights=weights)
        final_loss = report.epochs[-1]["loss"] if report.epochs else _mean_breakdown([])
        row = {"variant": variant, "accuracy": report.final_eval_accuracy}
        row.update(final_loss)
        rows.append(row)
    return rows


def ablation_csv(rows: list) -> str:
    header = "variant,accuracy,cls,rank,div,gate,total"
    lines = [header]
    for row in rows:
        lines.append(
            ",".join(
                [str(row["variant"])]
                + [repr(float(row[k])) for k in ("accuracy", "cls", "rank", "div", "gate", "total")]
            )
        )
    return "\n".join(lines) + "\n"
