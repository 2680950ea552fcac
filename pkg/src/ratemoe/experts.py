"""Per-pathway transformer experts and the cross-pathway readout.

Each pathway gets one post-norm transformer layer (multi-head
self-attention, then a 4x GELU feed-forward, each behind a residual and a
LayerNorm). No positional encodings are added anywhere, so every layer is
permutation-covariant over its tokens; temporal order enters only through
the aggregation that built the pathway.

The default readout concatenates all expert outputs along time and lets a
single learnable query cross-attend over them; the attention mass that
lands on each expert's token span (averaged over heads) is the expert's
readout weight. Alternative combination strategies used by the ablations
live here too, behind the same interface.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, ShapeError
from . import functional as F
from .params import ParamBank
from .tensor import Tensor, astensor, concat

COMBINATION_MODES = ("avg_pool", "linear", "mlp", "local_attn", "global_attn")


def _split_heads(x, heads: int):
    """[B, T, D] -> [B, H, T, D/H]."""
    b, t, d = x.shape
    hd = d // heads
    return x.reshape((b, t, heads, hd)).transpose((0, 2, 1, 3))


def _merge_heads(x):
    """[B, H, T, D/H] -> [B, T, D]."""
    b, h, t, hd = x.shape
    return x.transpose((0, 2, 1, 3)).reshape((b, t, h * hd))


class ExpertLayer:
    """One transformer layer: LN(F + MHSA(F)) then LN(.. + FFN(..))."""

    def __init__(self, bank: ParamBank, dim: int, heads: int, prefix: str):
        if dim % heads != 0:
            raise ShapeError(f"heads {heads} must divide dim {dim}")
        self.dim = dim
        self.heads = heads
        p = prefix
        self.wq = bank.glorot(p + "attn.wq", dim, dim)
        self.bq = bank.zeros(p + "attn.bq", (dim,))
        # No key bias: softmax is invariant to per-query constant shifts,
        # so a key bias would be an untrainable null parameter.
        self.wk = bank.glorot(p + "attn.wk", dim, dim)
        self.wv = bank.glorot(p + "attn.wv", dim, dim)
        self.bv = bank.zeros(p + "attn.bv", (dim,))
        self.wo = bank.glorot(p + "attn.wo", dim, dim)
        self.bo = bank.zeros(p + "attn.bo", (dim,))
        self.ln1_g = bank.ones(p + "ln1.gain", (dim,))
        self.ln1_b = bank.zeros(p + "ln1.bias", (dim,))
        hidden = 4 * dim
        self.w1 = bank.glorot(p + "ffn.w1", dim, hidden)
        self.b1 = bank.zeros(p + "ffn.b1", (hidden,))
        self.w2 = bank.glorot(p + "ffn.w2", hidden, dim)
        self.b2 = bank.zeros(p + "ffn.b2", (dim,))
        self.ln2_g = bank.ones(p + "ln2.gain", (dim,))
        self.ln2_b = bank.zeros(p + "ln2.bias", (dim,))

    def self_attention(self, x):
        q = _split_heads(F.linear(x, self.wq, self.bq), self.heads)
        k = _split_heads(F.linear(x, self.wk), self.heads)
        v = _split_heads(F.linear(x, self.wv, self.bv), self.heads)
        scale = 1.0 / math.sqrt(self.dim // self.heads)
        att = F.softmax(q @ k.transpose((0, 1, 3, 2)) * scale)
        return F.linear(_merge_heads(att @ v), self.wo, self.bo)

    def forward(self, x):
        """[T, D] or [B, T, D] -> same shape."""
        x = astensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape((1,) + x.shape)
        h = F.layer_norm(x + self.self_attention(x), self.ln1_g, self.ln1_b)
        ff = F.linear(F.gelu(F.linear(h, self.w1, self.b1)), self.w2, self.b2)
        out = F.layer_norm(h + ff, self.ln2_g, self.ln2_b)
        return out.reshape(out.shape[1:]) if squeeze else out


class Readout:
    """Learnable-query cross-attention over concatenated expert outputs."""

    def __init__(self, bank: ParamBank, dim: int, heads: int, num_classes: int):
        if dim % heads != 0:
            raise ShapeError(f"heads {heads} must divide dim {dim}")
        self.dim = dim
        self.heads = heads
        self.q_global = bank.glorot("readout.q_global", 1, dim)
        self.wq = bank.glorot("readout.wq", dim, dim)
        self.bq = bank.zeros("readout.bq", (dim,))
        self.wk = bank.glorot("readout.wk", dim, dim)  # no key bias, see ExpertLayer
        self.wv = bank.glorot("readout.wv", dim, dim)
        self.bv = bank.zeros("readout.bv", (dim,))
        self.wo = bank.glorot("readout.wo", dim, dim)
        self.bo = bank.zeros("readout.bo", (dim,))
        self.cw = bank.glorot("classifier.weight", dim, num_classes)
        self.cb = bank.zeros("classifier.bias", (num_classes,))

    def forward(self, expert_outputs: list) -> tuple:
        """Returns (v_fused [B, D], W [B, N], logits [B, C])."""
        if not expert_outputs:
            raise ContractError("readout needs at least one expert output")
        context = concat(expert_outputs, axis=-2)
        b, total_t, d = context.shape
        hd = d // self.heads
        q = F.linear(self.q_global, self.wq, self.bq)
        q = q.reshape((1, 1, self.heads, hd)).transpose((0, 2, 1, 3))
        k = _split_heads(F.linear(context, self.wk), self.heads)
        v = _split_heads(F.linear(context, self.wv, self.bv), self.heads)
        att = F.softmax(q @ k.transpose((0, 1, 3, 2)) / math.sqrt(hd))  # [B, H, 1, sum_T]
        fused = _merge_heads(att @ v).reshape((b, d))
        v_fused = F.linear(fused, self.wo, self.bo)
        mass = att.reshape((b, self.heads, total_t)).mean(axis=1)  # [B, sum_T]
        spans = []
        offset = 0
        for out in expert_outputs:
            t_i = out.shape[-2]
            spans.append(mass[:, offset : offset + t_i].sum(axis=-1, keepdims=True))
            offset += t_i
        w = concat(spans, axis=-1)
        logits = F.linear(v_fused, self.cw, self.cb)
        return v_fused, w, logits


class AvgPoolCombiner:
    """Plain token mean; readout mass is proportional to token count."""

    def __init__(self, bank: ParamBank, dim: int, num_classes: int):
        self.cw = bank.glorot("classifier.weight", dim, num_classes)
        self.cb = bank.zeros("classifier.bias", (num_classes,))

    def forward(self, expert_outputs: list) -> tuple:
        if not expert_outputs:
            raise ContractError("combiner needs at least one expert output")
        context = concat(expert_outputs, axis=-2)
        b, total_t, _ = context.shape
        v_fused = context.mean(axis=-2)
        counts = np.array([o.shape[-2] for o in expert_outputs], dtype=np.float64)
        w = Tensor(np.tile(counts / counts.sum(), (b, 1)))
        return v_fused, w, F.linear(v_fused, self.cw, self.cb)


class _UniformWeightCombiner:
    """Shared plumbing for combiners whose readout mass is uniform."""

    def _uniform_w(self, expert_outputs: list) -> Tensor:
        b = expert_outputs[0].shape[0]
        n = len(expert_outputs)
        return Tensor(np.full((b, n), 1.0 / n))


class LinearCombiner(_UniformWeightCombiner):
    """Linear map over the stacked per-expert time means."""

    def __init__(self, bank: ParamBank, dim: int, num_classes: int, n_experts: int):
        self.w = bank.glorot("combine.linear.weight", n_experts * dim, dim)
        self.b = bank.zeros("combine.linear.bias", (dim,))
        self.cw = bank.glorot("classifier.weight", dim, num_classes)
        self.cb = bank.zeros("classifier.bias", (num_classes,))

    def forward(self, expert_outputs: list) -> tuple:
        if not expert_outputs:
            raise ContractError("combiner needs at least one expert output")
        means = concat([o.mean(axis=-2) for o in expert_outputs], axis=-1)
        v_fused = F.linear(means, self.w, self.b)
        return v_fused, self._uniform_w(expert_outputs), F.linear(v_fused, self.cw, self.cb)


class MlpCombiner(_UniformWeightCombiner):
    """Two-layer GELU map over the stacked per-expert time means."""

    def __init__(self, bank: ParamBank, dim: int, num_classes: int, n_experts: int):
        self.w1 = bank.glorot("combine.mlp.w1", n_experts * dim, dim)
        self.b1 = bank.zeros("combine.mlp.b1", (dim,))
        self.w2 = bank.glorot("combine.mlp.w2", dim, dim)
        self.b2 = bank.zeros("combine.mlp.b2", (dim,))
        self.cw = bank.glorot("classifier.weight", dim, num_classes)
        self.cb = bank.zeros("classifier.bias", (num_classes,))

    def forward(self, expert_outputs: list) -> tuple:
        if not expert_outputs:
            raise ContractError("combiner needs at least one expert output")
        means = concat([o.mean(axis=-2) for o in expert_outputs], axis=-1)
        v_fused = F.linear(F.gelu(F.linear(means, self.w1, self.b1)), self.w2, self.b2)
        return v_fused, self._uniform_w(expert_outputs), F.linear(v_fused, self.cw, self.cb)


class LocalAttnCombiner(_UniformWeightCombiner):
    """Per-expert single-query attention pooling, then a mean across experts."""

    def __init__(self, bank: ParamBank, dim: int, num_classes: int, rates: list):
        self.dim = dim
        self.queries = [
            bank.glorot(f"combine.local.q.r{r}", 1, dim) for r in rates
        ]
        self.cw = bank.glorot("classifier.weight", dim, num_classes)
        self.cb = bank.zeros("classifier.bias", (num_classes,))

    def forward(self, expert_outputs: list) -> tuple:
        if not expert_outputs:
            raise ContractError("combiner needs at least one expert output")
        pooled = []
        scale = 1.0 / math.sqrt(self.dim)
        for out, query in zip(expert_outputs, self.queries):
            scores = F.softmax((out @ query.transpose((1, 0))) * scale, axis=-2)
            pooled.append((scores * out).sum(axis=-2))
        v_fused = pooled[0] if len(pooled) == 1 else sum(pooled[1:], pooled[0]) * (1.0 / len(pooled))
        return v_fused, self._uniform_w(expert_outputs), F.linear(v_fused, self.cw, self.cb)


def build_combiner(bank: ParamBank, dim: int, heads: int, num_classes: int, rates: list, mode: str):
    if mode == "global_attn":
        return Readout(bank, dim, heads, num_classes)
    if mode == "avg_pool":
        return AvgPoolCombiner(bank, dim, num_classes)
    if mode == "linear":
        return LinearCombiner(bank, dim, num_classes, len(rates))
    if mode == "mlp":
        return MlpCombiner(bank, dim, num_classes, len(rates))
    if mode == "local_attn":
        return LocalAttnCombiner(bank, dim, num_classes, rates)
    raise ContractError(f"unknown combination mode {mode!r}; valid: {COMBINATION_MODES}")
