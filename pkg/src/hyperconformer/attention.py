"""Scaled dot-product attention and multi-head self-attention (MHSA).

This is the quadratic baseline global-interaction mechanism: the score
matrix of every head is ``N x N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .positions import DEFAULT_MAX_LEN, positions as position_table
from .tensor import Tensor, parameter


@dataclass
class MhsaParams:
    """Per-head Q/K/V projections (``d x d/k`` with bias) and the output map."""

    wq: list
    bq: list
    wk: list
    bk: list
    wv: list
    bv: list
    wo: Tensor
    bo: Tensor

    @property
    def heads(self) -> int:
        return len(self.wq)

    @property
    def d_model(self) -> int:
        return self.wo.shape[1]


def init_mhsa(d: int, k: int, rng: np.random.Generator) -> MhsaParams:
    if k < 1 or d % k:
        raise ConfigError(f"head count {k} must divide d_model {d}")
    dk = d // k
    std = 1.0 / math.sqrt(d)

    def proj():
        return [parameter(rng.normal(0.0, std, (d, dk))) for _ in range(k)]

    def bias():
        return [parameter(np.zeros(dk)) for _ in range(k)]

    return MhsaParams(
        wq=proj(), bq=bias(), wk=proj(), bk=bias(), wv=proj(), bv=bias(),
        wo=parameter(rng.normal(0.0, std, (d, d))), bo=parameter(np.zeros(d)),
    )


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes."""
    if q.shape != k.shape or k.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} disagree")
    dk = q.shape[-1]
    scores = ops.matmul(ops.scale(q, 1.0 / math.sqrt(dk)), ops.transpose(k))
    return ops.matmul(ops.softmax(scores, axis=-1), v)


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    dk = q.shape[-1]
    return ops.softmax(ops.matmul(ops.scale(q, 1.0 / math.sqrt(dk)), ops.transpose(k)), axis=-1)


def mhsa_forward(
    x: Tensor,
    params: MhsaParams,
    positions: bool = False,
    max_len: int = DEFAULT_MAX_LEN,
) -> Tensor:
    """Multi-head self-attention on ``x`` of shape ``(..., N, d)``.

    With ``positions`` the sinusoidal table is added to ``x`` once, before
    the projections.
    """
    d = x.shape[-1]
    if d != params.d_model or d % params.heads:
        raise ConfigError(f"input width {d} incompatible with {params.heads} heads of d_model {params.d_model}")
    if positions:
        x = ops.add(x, position_table(x.shape[-2], d, max_len))
    heads = []
    for i in range(params.heads):
        q = ops.linear(x, params.wq[i], params.bq[i])
        k = ops.linear(x, params.wk[i], params.bk[i])
        v = ops.linear(x, params.wv[i], params.bv[i])
        heads.append(attention(q, k, v))
    mixed = heads[0] if len(heads) == 1 else ops.concat(heads, axis=-1)
    return ops.linear(mixed, params.wo, params.bo)


def mhsa_flops(n: int, d: int, k: int, positions: bool = False, batch: int = 1) -> int:
    """Closed-form FLOPs of :func:`mhsa_forward`.

    Projections ``8*N*d^2 + 4*N*d`` (Q/K/V and output, with biases), query
    scaling ``N*d``, scores and mixing ``4*N^2*d``, softmax ``4*k*N^2``.
    """
    if d % k:
        raise ConfigError(f"head count {k} must divide d_model {d}")
    total = 8 * n * d * d + 5 * n * d + 4 * n * n * d + 4 * k * n * n
    if positions:
        total += n * d
    return batch * total


def mhsa_param_count(d: int, k: int) -> int:
    return 4 * (d * d + d)
