"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import GradCheckError
from .tensor import Parameter, no_grad


def grad_check(
    f: Callable[[], "object"],
    params: Iterable[Parameter],
    h: float = 1e-5,
) -> float:
    """Compare analytic and numerical gradients of the scalar ``f()``.

    Returns the maximum relative error
    |a - n| / max(|a|, |n|, 1e-8) over every element of every parameter.
    ``f`` must rebuild its graph on each call, because each perturbation
    reruns it.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {}
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise GradCheckError(f"non-finite analytic gradient in {p.name!r}")
        analytic[p.name] = g.copy()

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            if not np.isfinite(numeric):
                raise GradCheckError(f"non-finite numerical gradient in {p.name!r}[{i}]")
            a = analytic[p.name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
