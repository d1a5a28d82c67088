"""HyperMixer: token mixing with hypernetwork-generated weights.

A token-mixing MLP mixes information across the ``N`` positions separately
for each feature. Its two weight matrices ``W1, W2`` (``N x d'``) cannot be
learned directly because ``N`` varies, so two small hypernetworks produce one
row per token from that token (plus its position embedding). Cost is linear
in ``N``.

The multi-head variant splits the features into ``k`` contiguous slices and
runs an independent HyperMixer of widths ``(d/k, d'/k)`` on each slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .positions import DEFAULT_MAX_LEN, positions as position_table, sinusoidal_table
from .tensor import Tensor, parameter

NORM_CHOICES = ("token", "feature", "none")


@dataclass
class HyperNetwork:
    """Two-layer perceptron ``d -> hidden -> d'`` with GELU in between."""

    w_in: Tensor
    b_in: Tensor
    w_out: Tensor
    b_out: Tensor

    @property
    def in_width(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_in.shape[1]

    @property
    def out_width(self) -> int:
        return self.w_out.shape[1]


@dataclass
class HyperNetParams:
    """The two hypernetworks of one HyperMixer.

    When ``mlp2`` is the same object as ``mlp1`` the networks are tied and
    ``W2 == W1``. ``norm`` selects the axis of the output layer norm:
    ``"token"`` normalises each feature over positions (the literal reading
    of the token-mixing MLP), ``"feature"`` normalises each position over
    features, ``"none"`` skips it.
    """

    mlp1: HyperNetwork
    mlp2: HyperNetwork
    norm: str = "token"

    @property
    def tied(self) -> bool:
        return self.mlp2 is self.mlp1

    @property
    def d_model(self) -> int:
        return self.mlp1.in_width

    @property
    def d_prime(self) -> int:
        return self.mlp1.out_width


@dataclass
class MhhmParams:
    heads: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.heads)


def init_hypernetwork(d: int, hidden: int, d_prime: int, rng: np.random.Generator) -> HyperNetwork:
    return HyperNetwork(
        w_in=parameter(rng.normal(0.0, 1.0 / math.sqrt(d), (d, hidden))),
        b_in=parameter(np.zeros(hidden)),
        w_out=parameter(rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, d_prime))),
        b_out=parameter(np.zeros(d_prime)),
    )


def init_hypernet_params(
    d: int,
    d_prime: int,
    rng: np.random.Generator,
    hidden: int | None = None,
    tied: bool = False,
    norm: str = "token",
) -> HyperNetParams:
    if norm not in NORM_CHOICES:
        raise ConfigError(f"norm must be one of {NORM_CHOICES}, got {norm!r}")
    hidden = d if hidden is None else hidden
    mlp1 = init_hypernetwork(d, hidden, d_prime, rng)
    mlp2 = mlp1 if tied else init_hypernetwork(d, hidden, d_prime, rng)
    return HyperNetParams(mlp1, mlp2, norm)


def init_mhhm(
    d: int,
    d_prime: int,
    k: int,
    rng: np.random.Generator,
    hidden: int | None = None,
    tied: bool = False,
    norm: str = "token",
) -> MhhmParams:
    hidden = d if hidden is None else hidden
    if k < 1 or d % k or d_prime % k or hidden % k:
        raise ConfigError(f"head count {k} must divide d={d}, d'={d_prime} and hidden={hidden}")
    return MhhmParams([
        init_hypernet_params(d // k, d_prime // k, rng, hidden // k, tied, norm) for _ in range(k)
    ])


def hypernetwork(x: Tensor, net: HyperNetwork) -> Tensor:
    return ops.linear(ops.gelu(ops.linear(x, net.w_in, net.b_in)), net.w_out, net.b_out)


def generate_weights(x: Tensor, hn: HyperNetParams, positions: Tensor | None = None):
    """Rows ``j`` of ``(W1, W2)`` are ``MLP1(x_j + p_j)`` and ``MLP2(x_j + p_j)``."""
    if x.shape[-1] != hn.d_model:
        raise ShapeError(f"generate_weights: input width {x.shape[-1]} != hypernetwork width {hn.d_model}")
    if positions is not None:
        x = ops.add(x, positions)
    w1 = hypernetwork(x, hn.mlp1)
    w2 = w1 if hn.tied else hypernetwork(x, hn.mlp2)
    return w1, w2


def _normalize(y: Tensor, norm: str) -> Tensor:
    if norm == "token":
        return ops.layer_norm(y, axis=-2)
    if norm == "feature":
        return ops.layer_norm(y, axis=-1)
    if norm == "none":
        return y
    raise ConfigError(f"norm must be one of {NORM_CHOICES}, got {norm!r}")


def tm_mlp(x: Tensor, w1: Tensor, w2: Tensor, norm: str = "token") -> Tensor:
    """Token-mixing MLP with given weights.

    For every feature column ``x_i`` (length ``N``) the hidden vector is
    ``gelu(W2^T x_i)`` (length ``d'``) and the output column is
    ``W1 @ hidden``, normalised according to ``norm``.
    """
    if w1.shape != w2.shape or w1.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"tm_mlp: x {x.shape}, W1 {w1.shape}, W2 {w2.shape} disagree")
    hidden = ops.gelu(ops.matmul(ops.transpose(w2), x))
    return _normalize(ops.matmul(w1, hidden), norm)


def hypermixer_forward(
    x: Tensor,
    hn: HyperNetParams,
    positions: bool | Tensor = True,
    max_len: int = DEFAULT_MAX_LEN,
) -> Tensor:
    """Single-head HyperMixer on ``(..., N, d)``.

    ``positions`` may be a flag (use the sinusoidal table of width ``d``) or
    an explicit ``N x d`` embedding tensor.
    """
    if positions is True:
        positions = position_table(x.shape[-2], x.shape[-1], max_len)
    elif positions is False:
        positions = None
    w1, w2 = generate_weights(x, hn, positions)
    return tm_mlp(x, w1, w2, hn.norm)


def mhhm_forward(
    x: Tensor,
    params: MhhmParams,
    positions: bool = True,
    max_len: int = DEFAULT_MAX_LEN,
) -> Tensor:
    """Multi-head HyperMixer: independent heads on contiguous feature slices.

    Head ``l`` sees columns ``l*d/k:(l+1)*d/k`` of ``x`` and the same columns
    of the position table; outputs are concatenated without a projection.
    """
    d, k = x.shape[-1], params.k
    if k < 1 or d % k:
        raise ConfigError(f"head count {k} must divide input width {d}")
    w = d // k
    if any(h.d_model != w for h in params.heads):
        raise ConfigError(f"every head must take {w} features for input width {d} and {k} heads")
    if k == 1:
        return hypermixer_forward(x, params.heads[0], positions, max_len)
    table = sinusoidal_table(x.shape[-2], d, max_len) if positions else None
    outs = []
    for l, head in enumerate(params.heads):
        cols = slice(l * w, (l + 1) * w)
        pos = Tensor(table[:, cols]) if table is not None else False
        outs.append(hypermixer_forward(x[..., cols], head, pos, max_len))
    return ops.concat(outs, axis=-1)


def hypermixer_flops(
    n: int,
    d: int,
    d_prime: int,
    hidden: int | None = None,
    tied: bool = False,
    positions: bool = True,
    norm: str = "token",
    batch: int = 1,
) -> int:
    """Closed-form FLOPs of :func:`hypermixer_forward`.

    Hypernetworks: ``2*N*d*h + 2*N*h`` (input layer, bias, GELU) and
    ``2*N*h*d' + N*d'`` (output layer, bias) each, once when tied.
    Token mixing: ``4*N*d*d'`` for the two products and ``d*d'`` for the
    hidden GELU, plus ``5*N*d`` for the norm.
    """
    h = d if hidden is None else hidden
    gen = 2 * n * d * h + 2 * n * h + 2 * n * h * d_prime + n * d_prime
    total = gen * (1 if tied else 2)
    total += tokenmix_flops(n, d, d_prime)
    if norm != "none":
        total += 5 * n * d
    if positions:
        total += n * d
    return batch * total


def tokenmix_flops(n: int, d: int, d_prime: int) -> int:
    """FLOPs of the two token-mixing products and the hidden GELU."""
    return 4 * n * d * d_prime + d * d_prime


def mhhm_flops(
    n: int,
    d: int,
    d_prime: int,
    k: int,
    hidden: int | None = None,
    tied: bool = False,
    positions: bool = True,
    norm: str = "token",
    batch: int = 1,
) -> int:
    """Closed-form FLOPs of :func:`mhhm_forward`: ``k`` heads of widths ``(d/k, d'/k)``."""
    h = d if hidden is None else hidden
    if d % k or d_prime % k or h % k:
        raise ConfigError(f"head count {k} must divide d={d}, d'={d_prime} and hidden={h}")
    return k * hypermixer_flops(n, d // k, d_prime // k, h // k, tied, positions, norm, batch)


def mhhm_tokenmix_flops(n: int, d: int, d_prime: int, k: int) -> int:
    """The token-mixing part of :func:`mhhm_flops`; equals ``4*N*d*d'/k + d*d'/k``."""
    return k * tokenmix_flops(n, d // k, d_prime // k)


def hypernet_param_count(d: int, d_prime: int, hidden: int | None = None, tied: bool = False) -> int:
    h = d if hidden is None else hidden
    one = d * h + h + h * d_prime + d_prime
    return one if tied else 2 * one


def mhhm_param_count(d: int, d_prime: int, k: int, hidden: int | None = None, tied: bool = False) -> int:
    h = d if hidden is None else hidden
    return k * hypernet_param_count(d // k, d_prime // k, h // k, tied)
