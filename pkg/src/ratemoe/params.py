"""Parameter registry with name-keyed deterministic initialization.

Every parameter draws from its own PRNG stream derived from (seed, name),
so initial values depend only on the seed and the parameter's name, never
on registration order. Iteration is in sorted-name order, which keeps the
optimizer's update sequence reproducible.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .errors import ContractError
from .rng import stream
from .tensor import Parameter


class ParamBank:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._params: dict[str, Parameter] = {}

    def _register(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Parameter(data, name)
        self._params[name] = p
        return p

    def glorot(self, name: str, fan_in: int, fan_out: int, shape=None) -> Parameter:
        """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
        a = math.sqrt(6.0 / (fan_in + fan_out))
        shape = (fan_in, fan_out) if shape is None else tuple(shape)
        data = stream(self.seed, "init", name).uniform(-a, a, size=shape)
        return self._register(name, data)

    def zeros(self, name: str, shape) -> Parameter:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Parameter:
        return self._register(name, np.ones(shape))

    def constant(self, name: str, data) -> Parameter:
        return self._register(name, np.asarray(data, dtype=np.float64))

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def __iter__(self) -> Iterator[Parameter]:
        for name in self.names():
            yield self._params[name]

    def zero_grad(self):
        for p in self:
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: self._params[name].data.copy() for name in self.names()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = sorted(set(self._params) - set(state))
        extra = sorted(set(state) - set(self._params))
        if missing or extra:
            raise ContractError(
                f"parameter set mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
            )
        for name, value in state.items():
            p = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != p.data.shape:
                raise ContractError(
                    f"shape mismatch for {name!r}: expected {p.data.shape}, got {value.shape}"
                )
            p.data = value.copy()
