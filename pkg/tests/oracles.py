"""Naive loop-based reference implementations used by the test suite.

Everything here is deliberately slow and scalar-ish: explicit Python
loops, no shared code with the package, so agreement is meaningful.
All functions take and return plain numpy arrays (float64).
"""

import math

import numpy as np


def softmax_ref(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat = x.reshape(-1, x.shape[-1])
    oflat = out.reshape(-1, x.shape[-1])
    for r in range(flat.shape[0]):
        row = flat[r] - flat[r].max()
        e = np.array([math.exp(v) for v in row])
        oflat[r] = e / e.sum()
    return out


def log_softmax_ref(x):
    return np.log(softmax_ref(x))


def gelu_ref(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i, v in enumerate(x.reshape(-1)):
        out.reshape(-1)[i] = v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0)))
    return out


def sigmoid_ref(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i, v in enumerate(x.reshape(-1)):
        out.reshape(-1)[i] = 1.0 / (1.0 + math.exp(-v))
    return out


def layer_norm_ref(x, gain, bias, eps=1e-5):
    """Two-pass per-row normalization over the last axis, biased variance."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat = x.reshape(-1, x.shape[-1])
    oflat = out.reshape(-1, x.shape[-1])
    for r in range(flat.shape[0]):
        mu = flat[r].mean()
        var = ((flat[r] - mu) ** 2).mean()
        oflat[r] = (flat[r] - mu) / math.sqrt(var + eps) * gain + bias
    return out


def interp_ref(x, t_out):
    """Linear resampling of [T, D] along time; endpoints preserved."""
    x = np.asarray(x, dtype=np.float64)
    t_in, d = x.shape
    out = np.zeros((t_out, d))
    for t in range(t_out):
        src = 0.0 if t_out == 1 else t * (t_in - 1) / (t_out - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, t_in - 1)
        w = src - lo
        out[t] = (1.0 - w) * x[lo] + w * x[hi]
    return out


def conv_same_ref(x, weight, bias, stride):
    """Strided temporal conv of [T, D_in] with [k, D_in, D_out] and SAME pad.

    Output length ceil(T / stride); pad_total = max((out-1)*stride + k - T, 0)
    with the smaller half on the left.
    """
    x = np.asarray(x, dtype=np.float64)
    k, d_in, d_out = weight.shape
    t = x.shape[0]
    t_out = -(-t // stride)
    pad_total = max((t_out - 1) * stride + k - t, 0)
    left = pad_total // 2
    padded = np.zeros((left + t + (pad_total - left), d_in))
    padded[left : left + t] = x
    out = np.zeros((t_out, d_out))
    for o in range(t_out):
        for j in range(k):
            out[o] += padded[o * stride + j] @ weight[j]
        out[o] += bias
    return out


def soft_merge_group_ref(group, s_mix, delta, tau=1.0):
    """Merge one [r, D] group: keep the argmax frame, fold the rest in.

    Each rest frame joins with weight softmax(sim(rest, kept) / tau) over
    the kept set; with a single kept frame that softmax is 1, but the code
    below computes it anyway so it stays an independent derivation.
    """
    group = np.asarray(group, dtype=np.float64)
    s_mix = np.asarray(s_mix, dtype=np.float64)
    r = group.shape[0]
    kept_idx = 0
    for i in range(1, r):
        if s_mix[i] > s_mix[kept_idx]:
            kept_idx = i
    kept_set = [group[kept_idx]]
    merged = group[kept_idx].copy()
    if delta == 0.0 or r == 1:
        return merged[None, :], kept_idx
    for j in range(r):
        if j == kept_idx:
            continue
        sims = []
        for kv in kept_set:
            na = math.sqrt(float(group[j] @ group[j]))
            nb = math.sqrt(float(kv @ kv))
            sims.append(float(group[j] @ kv) / max(na * nb, 1e-8))
        e = [math.exp(s / tau) for s in sims]
        a = [v / sum(e) for v in e]
        merged += delta * a[0] * group[j]
    return merged[None, :], kept_idx


def target_scores_ref(frames, rate):
    """Frame norm plus mean cosine similarity to its rate group (incl self)."""
    frames = np.asarray(frames, dtype=np.float64)
    t = frames.shape[0]
    out = np.zeros(t)
    for i in range(t):
        g0 = (i // rate) * rate
        ni = math.sqrt(float(frames[i] @ frames[i]))
        sims = 0.0
        for j in range(g0, g0 + rate):
            nj = math.sqrt(float(frames[j] @ frames[j]))
            sims += float(frames[i] @ frames[j]) / max(ni * nj, 1e-8)
        out[i] = ni + sims / rate
    return out


def _heads(mat, h, hd):
    """Columns of head ``h`` from a [..., H*hd] matrix."""
    return mat[..., h * hd : (h + 1) * hd]


def expert_forward_ref(x, p, heads):
    """One transformer layer on [T, D] with a param dict of numpy arrays.

    Keys: wq bq wk wv bv wo bo ln1_g ln1_b w1 b1 w2 b2 ln2_g ln2_b.
    The key projection has no bias.
    """
    x = np.asarray(x, dtype=np.float64)
    t, d = x.shape
    hd = d // heads
    q = x @ p["wq"] + p["bq"]
    k = x @ p["wk"]
    v = x @ p["wv"] + p["bv"]
    attn_out = np.zeros((t, d))
    for h in range(heads):
        qh, kh, vh = _heads(q, h, hd), _heads(k, h, hd), _heads(v, h, hd)
        scores = np.zeros((t, t))
        for i in range(t):
            for j in range(t):
                scores[i, j] = float(qh[i] @ kh[j]) / math.sqrt(hd)
        att = softmax_ref(scores)
        attn_out[:, h * hd : (h + 1) * hd] = att @ vh
    attn_out = attn_out @ p["wo"] + p["bo"]
    h1 = layer_norm_ref(x + attn_out, p["ln1_g"], p["ln1_b"])
    ffn = gelu_ref(h1 @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]
    return layer_norm_ref(h1 + ffn, p["ln2_g"], p["ln2_b"])


def readout_ref(expert_outputs, p, heads):
    """Global-query cross-attention readout for ONE sample.

    ``expert_outputs`` is a list of [T_i, D]; returns (v_fused [D],
    w [N], logits [C]). Keys: q_global wq bq wk wv bv wo bo cw cb.
    """
    context = np.concatenate([np.asarray(o, dtype=np.float64) for o in expert_outputs], axis=0)
    total_t, d = context.shape
    hd = d // heads
    q = np.asarray(p["q_global"], dtype=np.float64).reshape(d) @ p["wq"] + p["bq"]
    k = context @ p["wk"]
    v = context @ p["wv"] + p["bv"]
    fused = np.zeros(d)
    mass = np.zeros(total_t)
    for h in range(heads):
        qh, kh, vh = _heads(q, h, hd), _heads(k, h, hd), _heads(v, h, hd)
        scores = np.array([float(qh @ kh[t]) / math.sqrt(hd) for t in range(total_t)])
        att = softmax_ref(scores)
        fused[h * hd : (h + 1) * hd] = att @ vh
        mass += att
    mass /= heads
    v_fused = fused @ p["wo"] + p["bo"]
    w = []
    offset = 0
    for o in expert_outputs:
        t_i = np.asarray(o).shape[0]
        w.append(mass[offset : offset + t_i].sum())
        offset += t_i
    logits = v_fused @ p["cw"] + p["cb"]
    return v_fused, np.array(w), logits


def gate_score_ref(pooled_i, pooled_j, w1, b1, w2, b2):
    """Pair gate: sigmoid(gelu([mean_i ; mean_j] @ w1 + b1) @ w2 + b2)."""
    g = np.concatenate([pooled_i, pooled_j])
    h = gelu_ref(g @ w1 + b1)
    return float(sigmoid_ref(h @ w2 + b2)[0])


def fast_to_slow_ref(f_fast, f_slow, s, weight, bias, threshold=0.0):
    """Residual strided-conv update of ONE sample's slow pathway."""
    f_fast = np.asarray(f_fast, dtype=np.float64)
    f_slow = np.asarray(f_slow, dtype=np.float64)
    if s < threshold:
        return f_slow.copy()
    stride = f_fast.shape[0] // f_slow.shape[0]
    down = conv_same_ref(f_fast, weight, bias, stride)
    return f_slow + s * down


def slow_to_fast_ref(f_slow, f_fast, s, weight, bias, threshold=0.0):
    """Residual upsample-and-map update of ONE sample's fast pathway."""
    f_slow = np.asarray(f_slow, dtype=np.float64)
    f_fast = np.asarray(f_fast, dtype=np.float64)
    if s < threshold:
        return f_fast.copy()
    up = interp_ref(f_slow, f_fast.shape[0])
    return f_fast + s * (up @ weight + bias)


def cross_entropy_ref(logits, labels):
    """Mean negative log-likelihood via the explicit softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for row, lab in zip(logits, labels):
        total -= math.log(softmax_ref(row)[int(lab)])
    return total / len(labels)


def kl_ref(target_row, pred_row, temperature=1.0):
    """KL(softmax(t / T) || softmax(p / T)) for one score row."""
    p = softmax_ref(np.asarray(target_row, dtype=np.float64) / temperature)
    q = softmax_ref(np.asarray(pred_row, dtype=np.float64) / temperature)
    return float(sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0))


def bank_arrays(bank, prefix=""):
    """Snapshot a ParamBank's arrays into a plain dict, optionally filtered."""
    return {
        name: bank[name].data.copy()
        for name in bank.names()
        if name.startswith(prefix)
    }


def expert_param_dict(bank, prefix):
    """Map a bank's expert-layer params onto oracle key names."""
    g = lambda s: bank[prefix + s].data
    return {
        "wq": g("attn.wq"), "bq": g("attn.bq"), "wk": g("attn.wk"),
        "wv": g("attn.wv"), "bv": g("attn.bv"), "wo": g("attn.wo"),
        "bo": g("attn.bo"), "ln1_g": g("ln1.gain"), "ln1_b": g("ln1.bias"),
        "w1": g("ffn.w1"), "b1": g("ffn.b1"), "w2": g("ffn.w2"),
        "b2": g("ffn.b2"), "ln2_g": g("ln2.gain"), "ln2_b": g("ln2.bias"),
    }


def readout_param_dict(bank):
    g = lambda s: bank[s].data
    return {
        "q_global": g("readout.q_global"), "wq": g("readout.wq"),
        "bq": g("readout.bq"), "wk": g("readout.wk"), "wv": g("readout.wv"),
        "bv": g("readout.bv"), "wo": g("readout.wo"), "bo": g("readout.bo"),
        "cw": g("classifier.weight"), "cb": g("classifier.bias"),
    }
