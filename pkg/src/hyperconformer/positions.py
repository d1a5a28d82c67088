"""Absolute sinusoidal position embeddings."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import CapacityError
from .tensor import Tensor

DEFAULT_MAX_LEN = 4096


@lru_cache(maxsize=16)
def _table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(0, d, 2)
    angles = pos / np.power(10000.0, i / d)
    table = np.zeros((max_len, d))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d // 2])
    table.flags.writeable = False
    return table


def sinusoidal_table(n: int, d: int, max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    """Rows ``0..n-1`` of the ``max_len x d`` table (sin on even, cos on odd)."""
    if n > max_len:
        raise CapacityError(f"sequence length {n} exceeds position table capacity {max_len}")
    return _table(max_len, d)[:n]


def positions(n: int, d: int, max_len: int = DEFAULT_MAX_LEN) -> Tensor:
    """The first ``n`` embeddings as a constant tensor."""
    return Tensor(sinusoidal_table(n, d, max_len))
