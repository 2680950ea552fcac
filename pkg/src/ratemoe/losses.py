"""The four training objectives and their weighted combination.

cls:  mean cross-entropy of the classifier logits.
rank: KL divergence pulling learned frame scores toward a norm-plus-
      group-similarity target, per clip and rate, averaged over all rows.
div:  mean pairwise cosine similarity of time-averaged expert outputs;
      minimizing it pushes experts apart (identical experts score 1).
gate: N * sum of squared mean expert readout masses; equals 1 at uniform
      usage and N when one expert takes everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from . import functional as F
from .tensor import Tensor, concat, select_index

_ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda_rank: float = 0.1
    lambda_div: float = 0.01
    lambda_gate: float = 0.01
    rank_temperature: float = 1.0

    def __post_init__(self):
        for name in ("lambda_rank", "lambda_div", "lambda_gate"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and non-negative, got {v}")
        if not self.rank_temperature > 0:
            raise ConfigError(f"rank_temperature must be positive, got {self.rank_temperature}")


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    rank: float
    div: float
    gate: float
    total: float

    def to_dict(self) -> dict:
        return {
            "cls": self.cls,
            "rank": self.rank,
            "div": self.div,
            "gate": self.gate,
            "total": self.total,
        }


def loss_cls(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true class."""
    labels = np.asarray(labels, dtype=np.intp)
    c = logits.shape[-1]
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= c:
        raise ContractError(f"labels must lie in [0, {c}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    logp = F.log_softmax(logits)
    picked = select_index(logp, labels, axis=-1)
    return -picked.mean()


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_rank(rank_pairs: list, temperature: float = 1.0) -> Tensor:
    """KL(softmax(target / T) || softmax(predicted / T)) averaged over rows.

    ``rank_pairs`` holds one (s_pred Tensor [B, T], s_tgt ndarray [B, T])
    per rate; every (clip, rate) row counts equally in the average. The
    target side is a constant by contract.
    """
    if not rank_pairs:
        return Tensor(0.0)
    rows = []
    for s_pred, s_tgt in rank_pairs:
        p = _softmax_np(np.asarray(s_tgt, dtype=np.float64) / temperature)
        log_p = np.log(p)
        log_q = F.log_softmax(s_pred * (1.0 / temperature))
        entropy = Tensor((p * log_p).sum(axis=-1))
        cross = (Tensor(p) * log_q).sum(axis=-1)
        rows.append((entropy - cross).reshape((-1,)))
    return concat(rows, axis=0).mean()


def loss_div(expert_outputs: list) -> Tensor:
    """Mean pairwise cosine similarity of per-expert time-mean features."""
    n = len(expert_outputs)
    if n < 2:
        return Tensor(0.0)
    means = [out.mean(axis=-2) for out in expert_outputs]
    pair_sum = None
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            cos = F.cosine_similarity(means[i], means[j])
            pair_sum = cos if pair_sum is None else pair_sum + cos
            pairs += 1
    return (pair_sum * (1.0 / pairs)).mean()


def loss_gate(w: Tensor) -> Tensor:
    """Usage-balance penalty N * sum_i (mean_b W[b, i])^2."""
    row_sums = w.data.sum(axis=-1)
    bad = np.abs(row_sums - 1.0) > _ROW_SUM_TOL
    if bad.any():
        raise ContractError(
            f"readout mass rows must sum to 1 within {_ROW_SUM_TOL}; "
            f"worst deviation {np.abs(row_sums - 1.0).max():.3e}"
        )
    n = w.shape[-1]
    col_mean = w.mean(axis=0)
    return float(n) * (col_mean * col_mean).sum()


def loss_total(
    logits: Tensor,
    labels,
    rank_pairs: list,
    expert_outputs: list,
    w: Tensor,
    weights: LossWeights,
) -> tuple:
    """Weighted sum of the four objectives; returns (Tensor, LossBreakdown)."""
    cls = loss_cls(logits, labels)
    rank = loss_rank(rank_pairs, weights.rank_temperature)
    div = loss_div(expert_outputs)
    gate = loss_gate(w)
    total = (
        cls
        + weights.lambda_rank * rank
        + weights.lambda_div * div
        + weights.lambda_gate * gate
    )
    breakdown = LossBreakdown(
        cls=cls.item(), rank=rank.item(), div=div.item(), gate=gate.item(), total=total.item()
    )
    return total, breakdown
