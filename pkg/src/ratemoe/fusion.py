"""Gated bidirectional exchange between pathways of different lengths.

Each unordered pathway pair owns a small gate perceptron scoring, per
sample, whether the pair should exchange information. When the score
clears the threshold, both directional updates run: the slower (shorter)
pathway is linearly upsampled and channel-mapped into the faster one, and
the faster pathway is strided-convolved down into the slower one. Updates
are residual, scaled by the differentiable gate score, and always computed
from the pre-exchange features so accumulation order cannot matter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PathwayCompatError
from . import functional as F
from .params import ParamBank
from .tensor import Tensor, astensor, concat

CONV_KERNEL = 3
MODES = ("none", "slow2fast", "fast2slow", "bidirectional")


@dataclass
class PathwaySet:
    """Aligned views of one clip batch: pathways[i] is [B, T/rates[i], D]."""

    pathways: list
    rates: list

    def __post_init__(self):
        if len(self.pathways) != len(self.rates):
            raise PathwayCompatError(
                f"{len(self.pathways)} pathways but {len(self.rates)} rates"
            )
        if any(r2 <= r1 for r1, r2 in zip(self.rates, self.rates[1:])):
            raise PathwayCompatError(f"rates must be strictly increasing, got {self.rates}")
        for i, r_i in enumerate(self.rates):
            for r_j in self.rates[i + 1 :]:
                if r_j % r_i != 0:
                    raise PathwayCompatError(
                        f"rates must pairwise divide: {r_j} % {r_i} != 0"
                    )
        dims = {p.shape[-1] for p in self.pathways}
        if len(dims) > 1:
            raise PathwayCompatError(f"pathways disagree on channel count: {sorted(dims)}")
        totals = {p.shape[-2] * r for p, r in zip(self.pathways, self.rates)}
        if len(totals) > 1:
            raise PathwayCompatError(
                f"pathway lengths inconsistent with a common T: lengths "
                f"{[p.shape[-2] for p in self.pathways]} at rates {self.rates}"
            )

    @property
    def n(self) -> int:
        return len(self.pathways)


@dataclass
class GateMatrix:
    """Per-pair exchange scores; scores[(i, j)] is a per-sample Tensor."""

    n: int
    scores: dict
    threshold: float

    def active(self, i: int, j: int) -> np.ndarray:
        key = (min(i, j), max(i, j))
        return self.scores[key].data >= self.threshold

    def to_json_dict(self, sample: int = 0) -> dict:
        s = np.zeros((self.n, self.n))
        active = np.zeros((self.n, self.n), dtype=bool)
        for (i, j), score in self.scores.items():
            val = float(np.asarray(score.data).reshape(-1)[sample])
            s[i, j] = s[j, i] = val
            active[i, j] = active[j, i] = val >= self.threshold
        return {"scores": s.tolist(), "active": active.tolist(), "threshold": self.threshold}


class GateNet:
    """One 2D -> D -> 1 perceptron per unordered pathway pair."""

    def __init__(self, bank: ParamBank, dim: int, rates: list):
        self.rates = list(rates)
        self.weights = {}
        for i, r_i in enumerate(self.rates):
            for j, r_j in enumerate(self.rates):
                if i >= j:
                    continue
                p = f"gate.r{r_i}_r{r_j}."
                self.weights[(i, j)] = (
                    bank.glorot(p + "w1", 2 * dim, dim),
                    bank.zeros(p + "b1", (dim,)),
                    bank.glorot(p + "w2", dim, 1),
                    bank.zeros(p + "b2", (1,)),
                )

    def gate_scores(self, pset: PathwaySet, threshold: float) -> GateMatrix:
        """Score every unordered pair from time-pooled pathway summaries."""
        pooled = [p.mean(axis=-2) for p in pset.pathways]
        scores = {}
        for (i, j), (w1, b1, w2, b2) in self.weights.items():
            g = concat([pooled[i], pooled[j]], axis=-1)
            h = F.gelu(F.linear(g, w1, b1))
            s = F.sigmoid(F.linear(h, w2, b2))
            scores[(i, j)] = s.reshape(s.shape[:-1])
        return GateMatrix(n=pset.n, scores=scores, threshold=threshold)


class FusionParams:
    """Per ordered pair: a channel map for upsampling and a strided conv down."""

    def __init__(self, bank: ParamBank, dim: int, rates: list):
        self.rates = list(rates)
        self.dim = dim
        self.maps = {}
        for i, r_i in enumerate(self.rates):
            for j, r_j in enumerate(self.rates):
                if i >= j:
                    continue
                p = f"fuse.r{r_i}_r{r_j}."
                self.maps[(i, j)] = {
                    "s2f_weight": bank.glorot(p + "s2f.weight", dim, dim),
                    "s2f_bias": bank.zeros(p + "s2f.bias", (dim,)),
                    "f2s_weight": bank.glorot(
                        p + "f2s.weight", CONV_KERNEL * dim, dim, shape=(CONV_KERNEL, dim, dim)
                    ),
                    "f2s_bias": bank.zeros(p + "f2s.bias", (dim,)),
                }


def _gate_factor(s, mask: np.ndarray, batched: bool):
    """Per-sample gate scale, masked to zero for below-threshold samples."""
    if not batched:
        return s if mask.all() else s * Tensor(mask.astype(np.float64))
    b = np.asarray(s.data).reshape(-1).shape[0]
    factor = s.reshape((b, 1, 1))
    if mask.all():
        return factor
    return factor * Tensor(mask.reshape(b, 1, 1).astype(np.float64))


def slow_to_fast(f_slow, f_fast, s, weight, bias, threshold: float = 0.0):
    """Residual update of the fast pathway from an upsampled slow one.

    Inputs are [T, D] or [B, T, D]; ``s`` is a scalar or per-sample Tensor.
    Samples whose score misses the threshold are left untouched.
    """
    s = astensor(s)
    mask = np.atleast_1d(np.asarray(s.data) >= threshold)
    if not mask.any():
        return f_fast
    up = F.time_interp(f_slow, f_fast.shape[-2])
    update = F.linear(up, weight, bias)
    return f_fast + _gate_factor(s, mask, batched=f_fast.ndim == 3) * update


def fast_to_slow(f_fast, f_slow, s, weight, bias, threshold: float = 0.0):
    """Residual update of the slow pathway from a strided conv of the fast one."""
    t_f, t_s = f_fast.shape[-2], f_slow.shape[-2]
    if t_f % t_s != 0:
        raise PathwayCompatError(f"fast length {t_f} not divisible by slow length {t_s}")
    s = astensor(s)
    mask = np.atleast_1d(np.asarray(s.data) >= threshold)
    if not mask.any():
        return f_slow
    down = F.time_conv(f_fast, weight, bias, stride=t_f // t_s)
    return f_slow + _gate_factor(s, mask, batched=f_slow.ndim == 3) * down


def interact(
    pset: PathwaySet,
    gates: GateNet,
    params: FusionParams,
    threshold: float = 0.5,
    mode: str = "bidirectional",
) -> tuple:
    """Run all above-threshold exchanges; returns (new PathwaySet, GateMatrix).

    Every update reads the original pre-exchange features, and updates are
    accumulated in ascending source index per destination.
    """
    if mode not in MODES:
        raise PathwayCompatError(f"unknown interaction mode {mode!r}; valid: {MODES}")
    matrix = gates.gate_scores(pset, threshold)
    if mode == "none" or pset.n == 1:
        return pset, matrix
    originals = list(pset.pathways)
    outputs = []
    for dst in range(pset.n):
        out = originals[dst]
        for src in range(pset.n):
            if src == dst:
                continue
            key = (min(src, dst), max(src, dst))
            s = matrix.scores[key]
            mask = s.data >= threshold
            if not mask.any():
                continue
            pair = params.maps[key]
            if src > dst:
                # Higher rate = shorter sequence: src is the slow side.
                if mode == "fast2slow":
                    continue
                out = slow_to_fast(
                    originals[src], out, s, pair["s2f_weight"], pair["s2f_bias"], threshold
                )
            else:
                if mode == "slow2fast":
                    continue
                out = fast_to_slow(
                    originals[src], out, s, pair["f2s_weight"], pair["f2s_bias"], threshold
                )
        outputs.append(out)
    return PathwaySet(pathways=outputs, rates=list(pset.rates)), matrix
