"""End-to-end model: aggregate per rate, exchange, run experts, read out."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .aggregation import AggregationConfig, Aggregator, MergeTrace, target_scores
from .errors import ConfigError
from .experts import ExpertLayer, Readout, build_combiner
from .fusion import FusionParams, GateMatrix, GateNet, PathwaySet, interact
from .params import ParamBank
from .tensor import Tensor, no_grad
from . import aggregation, experts, fusion


@dataclass(frozen=True)
class ModelConfig:
    rates: tuple = (2, 4, 8, 16)
    dim: int = 64
    num_classes: int = 8
    heads: int = 4
    aggregation: str = "soft_merge"
    alpha: float = 0.5
    tau: float = 1.0
    delta: float = 0.5
    metric_dim: Optional[int] = None
    normalize_scores: bool = True
    interaction: str = "bidirectional"
    threshold: float = 0.5
    combination: str = "global_attn"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(int(r) for r in self.rates))
        if not self.rates:
            raise ConfigError("at least one rate is required")
        if self.aggregation not in aggregation.MODES:
            raise ConfigError(
                f"unknown aggregation {self.aggregation!r}; valid: {aggregation.MODES}"
            )
        if self.interaction not in fusion.MODES:
            raise ConfigError(
                f"unknown interaction {self.interaction!r}; valid: {fusion.MODES}"
            )
        if self.combination not in experts.COMBINATION_MODES:
            raise ConfigError(
                f"unknown combination {self.combination!r}; valid: {experts.COMBINATION_MODES}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rates"] = list(self.rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardResult:
    logits: Tensor  # [B, C]
    w: Tensor  # [B, N] readout mass per expert
    expert_outputs: list  # N tensors [B, T_i, D]
    traces: list  # one MergeTrace per rate
    gate_matrix: Optional[GateMatrix]
    rank_pairs: list  # (s_pred Tensor [B, T], s_tgt ndarray [B, T]) per rate

    def predictions(self) -> np.ndarray:
        return np.argmax(self.logits.data, axis=-1)


class Model:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.bank = ParamBank(cfg.seed)
        self.aggregators = [
            Aggregator(
                self.bank,
                cfg.dim,
                AggregationConfig(
                    rate=r,
                    alpha=cfg.alpha,
                    tau=cfg.tau,
                    delta=cfg.delta,
                    metric_dim=cfg.metric_dim,
                    mode=cfg.aggregation,
                    normalize_scores=cfg.normalize_scores,
                ),
            )
            for r in cfg.rates
        ]
        self.gates = GateNet(self.bank, cfg.dim, list(cfg.rates))
        self.fusion_params = FusionParams(self.bank, cfg.dim, list(cfg.rates))
        self.experts = [
            ExpertLayer(self.bank, cfg.dim, cfg.heads, prefix=f"expert.r{r}.")
            for r in cfg.rates
        ]
        self.combiner = build_combiner(
            self.bank, cfg.dim, cfg.heads, cfg.num_classes, list(cfg.rates), cfg.combination
        )

    @property
    def n_experts(self) -> int:
        return len(self.cfg.rates)

    def forward(self, frames: np.ndarray) -> ForwardResult:
        """Classify a batch of clips; ``frames`` is [B, T, D] (or [T, D])."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 2:
            frames = frames[None]
        x = Tensor(frames)
        pathways = []
        traces = []
        rank_pairs = []
        for agg in self.aggregators:
            pathway, trace = agg.aggregate(x)
            if trace.s_pred_live is not None:
                trace.s_tgt = target_scores(frames, agg.cfg.rate)
                rank_pairs.append((trace.s_pred_live, trace.s_tgt))
            pathways.append(pathway)
            traces.append(trace)
        pset = PathwaySet(pathways=pathways, rates=list(self.cfg.rates))
        pset, gate_matrix = interact(
            pset, self.gates, self.fusion_params, self.cfg.threshold, self.cfg.interaction
        )
        outputs = [exp.forward(p) for exp, p in zip(self.experts, pset.pathways)]
        _, w, logits = self.combiner.forward(outputs)
        return ForwardResult(
            logits=logits,
            w=w,
            expert_outputs=outputs,
            traces=traces,
            gate_matrix=gate_matrix,
            rank_pairs=rank_pairs,
        )

    def predict(self, frames: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.forward(frames).predictions()
