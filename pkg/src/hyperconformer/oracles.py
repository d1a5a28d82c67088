"""Slow reference implementations used to cross-check the fast paths.

Each oracle computes the same quantity by a different route: brute-force
enumeration, explicit per-head slicing, or scalar loops. None of them shares
arithmetic code with the module it checks beyond what the comparison itself
requires.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .hypermixer import MhhmParams, hypermixer_forward
from .positions import sinusoidal_table
from .tensor import Tensor


def ctc_enumerate(log_probs: np.ndarray, targets) -> float:
    """CTC negative log-likelihood by summing over every frame-level path."""
    lp = np.asarray(log_probs, dtype=np.float64)
    n, c = lp.shape
    want = tuple(int(t) for t in targets)
    total = 0.0
    for path in itertools.product(range(c), repeat=n):
        merged = tuple(label for label, _ in itertools.groupby(path) if label != 0)
        if merged == want:
            total += math.exp(sum(lp[t, path[t]] for t in range(n)))
    return math.inf if total == 0.0 else -math.log(total)


def mhhm_by_slices(x: np.ndarray, params: MhhmParams, positions: bool = True, max_len: int = 4096) -> np.ndarray:
    """Run each head as its own single-head HyperMixer on a sliced copy and concatenate."""
    x = np.asarray(x, dtype=np.float64)
    d, k = x.shape[-1], params.k
    w = d // k
    table = sinusoidal_table(x.shape[-2], d, max_len) if positions else None
    outs = []
    for l, head in enumerate(params.heads):
        xs = Tensor(np.ascontiguousarray(x[..., l * w:(l + 1) * w]))
        pos = Tensor(np.ascontiguousarray(table[:, l * w:(l + 1) * w])) if table is not None else False
        outs.append(hypermixer_forward(xs, head, pos, max_len).data)
    return np.concatenate(outs, axis=-1)


def _gelu_scalar(v: float) -> float:
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def tm_mlp_loop(x: np.ndarray, w1: np.ndarray, w2: np.ndarray, norm: str = "token", eps: float = 1e-5) -> np.ndarray:
    """Token-mixing MLP one feature column at a time with scalar arithmetic."""
    x, w1, w2 = (np.asarray(a, dtype=np.float64) for a in (x, w1, w2))
    n, d = x.shape
    dp = w1.shape[1]
    y = np.zeros((n, d))
    for i in range(d):
        col = x[:, i]
        hidden = [_gelu_scalar(math.fsum(w2[j, p] * col[j] for j in range(n))) for p in range(dp)]
        for j in range(n):
            y[j, i] = math.fsum(w1[j, p] * hidden[p] for p in range(dp))
    if norm == "token":
        for i in range(d):
            mu = math.fsum(y[:, i]) / n
            var = math.fsum((v - mu) ** 2 for v in y[:, i]) / n
            y[:, i] = (y[:, i] - mu) / math.sqrt(var + eps)
    elif norm == "feature":
        for j in range(n):
            mu = math.fsum(y[j]) / d
            var = math.fsum((v - mu) ** 2 for v in y[j]) / d
            y[j] = (y[j] - mu) / math.sqrt(var + eps)
    return y
