"""Seeded, splittable random streams.

Every source of randomness in the package flows through :func:`stream`,
which derives an independent counter-based (Philox) generator from a root
seed plus a tuple of string labels. Streams are stable across runs and
independent of the order in which they are created, so adding a new
consumer never perturbs existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ConfigError


def _label_word(label) -> int:
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed: int, *labels) -> np.random.Generator:
    """Return a Generator keyed by ``seed`` and a label path.

    ``stream(7, "init", "encoder.weight")`` always yields the same sequence,
    regardless of what other streams exist.
    """
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    entropy = [int(seed)] + [_label_word(l) for l in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
