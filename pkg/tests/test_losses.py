"""The four objectives: frozen values, invariants, composition."""

import math

import numpy as np
import pytest

from ratemoe import (
    ConfigError,
    ContractError,
    LossBreakdown,
    LossWeights,
    grad_check,
    loss_cls,
    loss_div,
    loss_gate,
    loss_rank,
    loss_total,
)
from ratemoe.tensor import Parameter, Tensor

import oracles


def test_loss_cls_frozen_value():
    # logits [1, 2, 3], label 2: -log softmax_2 = log(1 + e^-1 + e^-2)
    out = loss_cls(Tensor([[1.0, 2.0, 3.0]]), [2])
    assert out.item() == pytest.approx(0.40760596444438079, abs=1e-12)


def test_loss_cls_matches_oracle_and_mean():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    out = loss_cls(Tensor(logits), labels)
    assert out.item() == pytest.approx(oracles.cross_entropy_ref(logits, labels), abs=1e-12)


def test_loss_cls_rejects_out_of_range_labels():
    with pytest.raises(ContractError):
        loss_cls(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ContractError):
        loss_cls(Tensor(np.zeros((2, 3))), [-1, 0])


def test_loss_cls_gradient():
    rng = np.random.default_rng(1)
    logits = Parameter(rng.normal(size=(4, 3)), "logits")
    labels = np.array([0, 2, 1, 2])
    assert grad_check(lambda: loss_cls(logits, labels), [logits]) < 1e-6


def test_loss_rank_zero_at_matching_scores():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(3, 8))
    out = loss_rank([(Tensor(s), s.copy())])
    assert out.item() == pytest.approx(0.0, abs=1e-12)


def test_loss_rank_frozen_two_point_value():
    # target [1, 0] vs prediction [0, 1]:
    # KL = sum p_i log(p_i / q_i) with p = softmax([1,0]), q = softmax([0,1])
    p = np.exp([1.0, 0.0]) / np.exp([1.0, 0.0]).sum()
    expected = float(p[0] * math.log(p[0] / p[1]) + p[1] * math.log(p[1] / p[0]))
    assert expected == pytest.approx(0.46211715726000974, abs=1e-12)
    out = loss_rank([(Tensor([[0.0, 1.0]]), np.array([[1.0, 0.0]]))])
    assert out.item() == pytest.approx(expected, abs=1e-12)


def test_loss_rank_matches_kl_oracle_row_average():
    rng = np.random.default_rng(3)
    pairs = []
    expected_rows = []
    for t in (6, 4):
        pred = rng.normal(size=(3, t))
        tgt = rng.normal(size=(3, t))
        pairs.append((Tensor(pred), tgt))
        expected_rows.extend(oracles.kl_ref(tgt[b], pred[b]) for b in range(3))
    out = loss_rank(pairs)
    assert out.item() == pytest.approx(np.mean(expected_rows), abs=1e-12)


def test_loss_rank_temperature():
    rng = np.random.default_rng(4)
    pred, tgt = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
    out = loss_rank([(Tensor(pred), tgt)], temperature=2.5)
    expected = np.mean([oracles.kl_ref(tgt[b], pred[b], 2.5) for b in range(2)])
    assert out.item() == pytest.approx(expected, abs=1e-12)


def test_loss_rank_empty_is_zero():
    assert loss_rank([]).item() == 0.0


def test_loss_rank_gradient():
    rng = np.random.default_rng(5)
    pred = Parameter(rng.normal(size=(2, 6)), "pred")
    tgt = rng.normal(size=(2, 6))
    assert grad_check(lambda: loss_rank([(pred, tgt)]), [pred]) < 1e-6


def test_loss_div_identical_experts_is_one():
    rng = np.random.default_rng(6)
    out = Tensor(rng.normal(size=(2, 4, 8)))
    assert loss_div([out, out, out]).item() == pytest.approx(1.0, abs=1e-12)


def test_loss_div_orthogonal_means_is_zero():
    a = np.zeros((1, 2, 4)); a[..., 0] = 1.0
    b = np.zeros((1, 2, 4)); b[..., 1] = 1.0
    assert loss_div([Tensor(a), Tensor(b)]).item() == pytest.approx(0.0, abs=1e-12)


def test_loss_div_three_expert_frozen_value():
    # means e0, e1, (e0+e1)/sqrt(2): pairwise cosines 0, 1/sqrt2, 1/sqrt2
    a = np.zeros((1, 1, 3)); a[..., 0] = 1.0
    b = np.zeros((1, 1, 3)); b[..., 1] = 1.0
    c = np.zeros((1, 1, 3)); c[..., 0] = c[..., 1] = 1.0 / math.sqrt(2.0)
    out = loss_div([Tensor(a), Tensor(b), Tensor(c)])
    assert out.item() == pytest.approx(math.sqrt(2.0) / 3.0, abs=1e-12)


def test_loss_div_single_expert_is_zero():
    assert loss_div([Tensor(np.ones((2, 3, 4)))]).item() == 0.0


def test_loss_div_gradient():
    rng = np.random.default_rng(7)
    a = Parameter(rng.normal(size=(2, 3, 4)), "a")
    b = Parameter(rng.normal(size=(2, 3, 4)), "b")
    assert grad_check(lambda: loss_div([a, b]), [a, b]) < 1e-6


def test_loss_gate_uniform_is_one_and_onehot_is_n():
    for n in (2, 4, 8):
        uniform = Tensor(np.full((5, n), 1.0 / n))
        assert loss_gate(uniform).item() == pytest.approx(1.0, abs=1e-12)
        onehot = np.zeros((5, n)); onehot[:, 0] = 1.0
        assert loss_gate(Tensor(onehot)).item() == pytest.approx(float(n), abs=1e-12)


def test_loss_gate_frozen_value():
    w = Tensor(np.array([[0.5, 0.5], [1.0, 0.0]]))
    # col means (0.75, 0.25): 2 * (0.5625 + 0.0625) = 1.25
    assert loss_gate(w).item() == pytest.approx(1.25, abs=1e-12)


def test_loss_gate_rejects_bad_rows():
    with pytest.raises(ContractError):
        loss_gate(Tensor(np.array([[0.5, 0.4]])))


def test_loss_gate_gradient():
    rng = np.random.default_rng(8)
    raw = rng.uniform(0.1, 1.0, size=(4, 3))
    w = Parameter(raw / raw.sum(axis=-1, keepdims=True), "w")
    # h below the row-sum contract tolerance so perturbed rows still pass
    assert grad_check(lambda: loss_gate(w), [w], h=1e-7) < 1e-5


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(lambda_rank=-0.1)
    with pytest.raises(ConfigError):
        LossWeights(rank_temperature=0.0)


def test_loss_total_composition_and_breakdown():
    rng = np.random.default_rng(9)
    logits = Tensor(rng.normal(size=(4, 3)))
    labels = np.array([0, 1, 2, 1])
    pred = Tensor(rng.normal(size=(4, 6)))
    tgt = rng.normal(size=(4, 6))
    outs = [Tensor(rng.normal(size=(4, 3, 8))), Tensor(rng.normal(size=(4, 2, 8)))]
    w = Tensor(np.full((4, 2), 0.5))
    weights = LossWeights(lambda_rank=0.2, lambda_div=0.05, lambda_gate=0.03)
    total, bd = loss_total(logits, labels, [(pred, tgt)], outs, w, weights)
    assert isinstance(bd, LossBreakdown)
    assert bd.cls == pytest.approx(loss_cls(logits, labels).item(), abs=1e-15)
    recomposed = bd.cls + 0.2 * bd.rank + 0.05 * bd.div + 0.03 * bd.gate
    assert bd.total == pytest.approx(recomposed, abs=1e-12)
    assert total.item() == bd.total
    assert set(bd.to_dict()) == {"cls", "rank", "div", "gate", "total"}
