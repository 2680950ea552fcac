"""Rate-guided temporal aggregation.

A rate r splits a T-frame clip into T/r contiguous groups. Within each
group the highest-scored frame is kept and the remaining r-1 frames are
folded into it as a scaled sum, compressing the clip to a length-T/r
pathway without discarding the rest. Frame scores mix a learned head with
the feature norm; the keep decision is hard (argmax, ties to the lowest
index) and non-differentiable, so the score head trains through the
ranking objective rather than through the merge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, RateError
from . import functional as F
from .params import ParamBank
from .tensor import Tensor, astensor, select_index

MODES = ("soft_merge", "hard", "mean", "max")
_EPS = 1e-8


@dataclass(frozen=True)
class AggregationConfig:
    rate: int
    alpha: float = 0.5
    tau: float = 1.0
    delta: float = 0.5
    metric_dim: Optional[int] = None
    mode: str = "soft_merge"
    normalize_scores: bool = True

    def __post_init__(self):
        if self.rate < 1:
            raise RateError(f"rate must be positive, got {self.rate}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tau <= 0.0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if self.delta < 0.0:
            raise ContractError(f"delta must be non-negative, got {self.delta}")
        if self.mode not in MODES:
            raise ContractError(f"unknown aggregation mode {self.mode!r}; valid: {MODES}")


@dataclass
class MergeTrace:
    """Per-clip record of the aggregation decisions (JSON-serializable)."""

    rate: int
    kept_indices: Optional[np.ndarray]  # [B, G] absolute frame indices, None for mean/max
    s_pred: Optional[np.ndarray]  # [B, T] raw learned scores
    s_norm: Optional[np.ndarray]  # [B, T] frame norms
    s_mix: Optional[np.ndarray]  # [B, T] mixed scores used for selection
    a_norm: Optional[np.ndarray]  # [B, G, r-1] merge weights (rows sum to 1 per rest frame)
    s_tgt: Optional[np.ndarray] = None  # [B, T] ranking target
    s_pred_live: Optional[Tensor] = None  # graph-connected scores for the ranking loss

    def to_json_dict(self, sample: int = 0) -> dict:
        def pick(x):
            return None if x is None else np.asarray(x)[sample].tolist()

        return {
            "rate": self.rate,
            "kept_indices": pick(self.kept_indices),
            "s_pred": pick(self.s_pred),
            "s_norm": pick(self.s_norm),
            "s_mix": pick(self.s_mix),
            "a_norm": pick(self.a_norm),
            "s_tgt": pick(self.s_tgt),
        }


def split_groups(frames, rate: int) -> list:
    """Split [T, D] frames into T/r contiguous groups of r, order preserved."""
    frames = astensor(frames)
    t = frames.shape[0]
    if rate < 1 or t % rate != 0:
        raise RateError(f"T={t} is not divisible by rate r={rate}")
    return [frames[g * rate : (g + 1) * rate] for g in range(t // rate)]


def _minmax(x: np.ndarray) -> np.ndarray:
    """Min-max normalize the last axis to [0, 1]; constant rows map to 0."""
    lo = x.min(axis=-1, keepdims=True)
    hi = x.max(axis=-1, keepdims=True)
    span = hi - lo
    safe = np.where(span > 0.0, span, 1.0)
    return (x - lo) / safe * (span > 0.0)


def target_scores(frames: np.ndarray, rate: int) -> np.ndarray:
    """Ranking target: frame norm plus mean cosine similarity to its group.

    Pure numpy on purpose; the target is a constant during training.
    """
    frames = np.asarray(frames, dtype=np.float64)
    t = frames.shape[-2]
    if rate < 1 or t % rate != 0:
        raise RateError(f"T={t} is not divisible by rate r={rate}")
    shape = frames.shape[:-2] + (t // rate, rate, frames.shape[-1])
    groups = frames.reshape(shape)
    norms = np.sqrt((groups * groups).sum(axis=-1))
    dots = np.einsum("...id,...jd->...ij", groups, groups)
    denom = np.maximum(norms[..., :, None] * norms[..., None, :], _EPS)
    sims = dots / denom
    s_tgt = norms + sims.sum(axis=-1) / rate
    return s_tgt.reshape(frames.shape[:-1])


class Aggregator:
    """Owns one rate's scoring parameters and performs the aggregation."""

    def __init__(self, bank: ParamBank, dim: int, cfg: AggregationConfig):
        self.cfg = cfg
        self.dim = dim
        m = cfg.metric_dim if cfg.metric_dim is not None else max(dim // 2, 1)
        self.metric_dim = m
        p = f"agg.r{cfg.rate}."
        self.w_proj = bank.glorot(p + "metric_proj.weight", dim, m)
        self.b_proj = bank.zeros(p + "metric_proj.bias", (m,))
        self.g_norm = bank.ones(p + "norm.gain", (m,))
        self.b_norm = bank.zeros(p + "norm.bias", (m,))
        self.w_score = bank.glorot(p + "score_head.weight", m, 1)
        self.b_score = bank.zeros(p + "score_head.bias", (1,))

    def score_frames(self, frames) -> tuple:
        """Return (s_pred Tensor [..., T], s_norm ndarray, s_mix ndarray).

        s_pred stays in the autodiff graph (it feeds the ranking loss);
        s_norm and the mixed selection score are plain arrays because the
        keep decision is non-differentiable.
        """
        frames = astensor(frames)
        h = F.linear(frames, self.w_proj, self.b_proj)
        h = F.layer_norm(h, self.g_norm, self.b_norm)
        s_pred = F.linear(h, self.w_score, self.b_score)
        s_pred = s_pred.reshape(s_pred.shape[:-1])
        s_norm = np.sqrt((frames.data * frames.data).sum(axis=-1))
        if self.cfg.normalize_scores:
            p, n = _minmax(s_pred.data), _minmax(s_norm)
        else:
            p, n = s_pred.data, s_norm
        s_mix = self.cfg.alpha * p + (1.0 - self.cfg.alpha) * n
        return s_pred, s_norm, s_mix

    def soft_merge_group(self, group, s_mix: np.ndarray) -> tuple:
        """Merge one [r, D] group into [1, D]: argmax keep + delta-scaled rest.

        The merge weight of each rest frame is the softmax of its
        similarity to the kept set; with a single kept frame that softmax
        is identically 1, so the result is kept + delta * sum(rest).
        """
        group = astensor(group)
        r = group.shape[0]
        if r == 0:
            raise ContractError("soft_merge_group needs at least one frame")
        kept_idx = int(np.argmax(np.asarray(s_mix)))
        kept = group[kept_idx : kept_idx + 1]
        a_norm = np.ones((r - 1, 1))
        if r == 1 or self.cfg.delta == 0.0:
            return kept, {"kept_index": kept_idx, "a_norm": a_norm}
        mask = np.ones((r, 1))
        mask[kept_idx, 0] = 0.0
        rest_sum = (group * Tensor(mask)).sum(axis=0, keepdims=True)
        merged = kept + self.cfg.delta * rest_sum
        return merged, {"kept_index": kept_idx, "a_norm": a_norm}

    def aggregate(self, frames) -> tuple:
        """Compress [..., T, D] to ([..., T/r, D], MergeTrace)."""
        frames = astensor(frames)
        t, d = frames.shape[-2], frames.shape[-1]
        r = self.cfg.rate
        if t % r != 0:
            raise RateError(f"T={t} is not divisible by rate r={r}")
        g = t // r
        groups = frames.reshape(frames.shape[:-2] + (g, r, d))
        mode = self.cfg.mode

        if mode == "mean":
            return groups.mean(axis=-2), MergeTrace(r, None, None, None, None, None)
        if mode == "max":
            return groups.max(axis=-2), MergeTrace(r, None, None, None, None, None)

        s_pred, s_norm, s_mix = self.score_frames(frames)
        group_scores = s_mix.reshape(s_mix.shape[:-1] + (g, r))
        local_idx = np.argmax(group_scores, axis=-1)
        kept = select_index(groups, local_idx, axis=-2)
        offsets = np.arange(g) * r
        kept_abs = local_idx + offsets.reshape((1,) * (local_idx.ndim - 1) + (g,))
        if mode == "soft_merge" and self.cfg.delta != 0.0:
            onehot = np.zeros(group_scores.shape)
            np.put_along_axis(onehot, local_idx[..., None], 1.0, axis=-1)
            rest_sum = (groups * Tensor((1.0 - onehot)[..., None])).sum(axis=-2)
            pathway = kept + self.cfg.delta * rest_sum
        else:
            pathway = kept
        a_norm = np.ones(local_idx.shape + (max(r - 1, 0),))
        trace = MergeTrace(r, kept_abs, s_pred.data.copy(), s_norm, s_mix, a_norm)
        trace.s_pred_live = s_pred
        return pathway, trace
