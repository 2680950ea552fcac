"""The checker itself: catches wrong gradients, tolerates right ones."""

import numpy as np
import pytest

from ratemoe import GradCheckError, grad_check
from ratemoe.tensor import Parameter, Tensor, _make


def test_correct_gradient_passes():
    p = Parameter(np.array([0.3, -0.7, 1.2]), "p")
    assert grad_check(lambda: (p * p).sum(), [p]) < 1e-8


def test_wrong_gradient_is_flagged():
    p = Parameter(np.array([0.5, 1.5]), "p")

    def broken_square(a):
        out = _make(a.data**2, (a,))

        def backward():
            a._accumulate(out.grad * a.data)  # missing the factor 2

        out._backward = backward
        return out

    assert grad_check(lambda: broken_square(p).sum(), [p]) > 0.4


def test_non_finite_analytic_gradient_raises():
    p = Parameter(np.array([1.0]), "p")

    def nan_grad(a):
        out = _make(a.data.copy(), (a,))

        def backward():
            a._accumulate(np.full_like(a.data, np.nan))

        out._backward = backward
        return out

    with pytest.raises(GradCheckError, match="p"):
        grad_check(lambda: nan_grad(p).sum(), [p])


def test_restores_parameter_values():
    p = Parameter(np.array([2.0, 3.0]), "p")
    before = p.data.copy()
    grad_check(lambda: (p**3).sum(), [p])
    assert np.array_equal(p.data, before)
