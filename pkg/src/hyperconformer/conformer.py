"""Conformer / Transformer encoder blocks with a pluggable global interaction.

Conformer block (Macaron layout, half-step feed-forward residuals)::

    x1 = x  + 0.5 * ffn1(x)
    x2 = x1 + GI(LN(x1))
    x3 = x2 + conv(x2)
    x4 = x3 + 0.5 * ffn2(x3)
    y  = LN(x4)

Transformer block (pre-norm)::

    x1 = x  + GI(LN(x))
    y  = x1 + ffn(x1)

``GI`` is either multi-head self-attention or multi-head HyperMixer. Every
function accepts ``(..., N, d)`` inputs except the convolutional frontend,
which takes a single ``T x F`` feature matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .attention import MhsaParams, init_mhsa, mhsa_flops, mhsa_forward
from .errors import ConfigError, InputError
from .hypermixer import MhhmParams, init_mhhm, mhhm_flops, mhhm_forward
from .positions import DEFAULT_MAX_LEN, positions as position_table
from .tensor import Tensor, parameter

GI_KINDS = ("mhsa", "hypermixer", "none")
BLOCK_STYLES = ("conformer", "transformer")
MIN_FRAMES = 8


def _dense(rng, fan_in, fan_out):
    return parameter(rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out)))


def _zeros(n):
    return parameter(np.zeros(n))


def _ones(n):
    return parameter(np.ones(n))


# -- feed-forward --------------------------------------------------------


@dataclass
class FeedForwardParams:
    norm_g: Tensor
    norm_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def init_ffn(d: int, d_ffn: int, rng) -> FeedForwardParams:
    return FeedForwardParams(_ones(d), _zeros(d), _dense(rng, d, d_ffn), _zeros(d_ffn),
                             _dense(rng, d_ffn, d), _zeros(d))


def ffn_module(x: Tensor, p: FeedForwardParams) -> Tensor:
    """LayerNorm, ``d -> d_ffn``, GELU, ``d_ffn -> d``."""
    h = ops.layer_norm(x, -1, p.norm_g, p.norm_b)
    h = ops.gelu(ops.linear(h, p.w1, p.b1))
    return ops.linear(h, p.w2, p.b2)


def ffn_flops(n: int, d: int, d_ffn: int) -> int:
    return 4 * n * d * d_ffn + 2 * n * d_ffn + 8 * n * d


# -- convolution module --------------------------------------------------


@dataclass
class ConvModuleParams:
    norm_g: Tensor
    norm_b: Tensor
    pw1_w: Tensor
    pw1_b: Tensor
    dw_w: Tensor
    dw_b: Tensor
    norm2_g: Tensor
    norm2_b: Tensor
    pw2_w: Tensor
    pw2_b: Tensor

    @property
    def kernel(self) -> int:
        return self.dw_w.shape[0]


def init_conv_module(d: int, kernel: int, rng) -> ConvModuleParams:
    if kernel % 2 == 0:
        raise ConfigError(f"depthwise kernel size must be odd, got {kernel}")
    return ConvModuleParams(
        _ones(d), _zeros(d),
        _dense(rng, d, 2 * d), _zeros(2 * d),
        parameter(rng.normal(0.0, 1.0 / math.sqrt(kernel), (kernel, d))), _zeros(d),
        _ones(d), _zeros(d),
        _dense(rng, d, d), _zeros(d),
    )


def conv_module(x: Tensor, p: ConvModuleParams) -> Tensor:
    """LayerNorm, pointwise ``d -> 2d``, GLU, depthwise conv, LayerNorm, Swish, pointwise ``d -> d``.

    Output position ``m`` only sees inputs within ``(K - 1) / 2`` of ``m``.
    """
    h = ops.layer_norm(x, -1, p.norm_g, p.norm_b)
    h = ops.glu(ops.linear(h, p.pw1_w, p.pw1_b), axis=-1)
    h = ops.add(ops.conv1d_depthwise(h, p.dw_w), p.dw_b)
    h = ops.swish(ops.layer_norm(h, -1, p.norm2_g, p.norm2_b))
    return ops.linear(h, p.pw2_w, p.pw2_b)


def conv_module_flops(n: int, d: int, kernel: int) -> int:
    return 6 * n * d * d + 2 * kernel * n * d + 21 * n * d


# -- global interaction --------------------------------------------------


@dataclass
class GlobalInteraction:
    """A token-mixing module ``(N x d) -> (N x d)`` behind a pre-norm.

    ``kind`` is ``"mhsa"`` or ``"hypermixer"``. HyperMixer adds position
    embeddings inside its weight generation (``positions``); MHSA relies on
    the embeddings added at the encoder input.
    """

    kind: str
    params: MhsaParams | MhhmParams
    norm_g: Tensor
    norm_b: Tensor
    positions: bool = True
    max_len: int = DEFAULT_MAX_LEN

    @property
    def heads(self) -> int:
        return self.params.heads if self.kind == "mhsa" else self.params.k

    def mix(self, x: Tensor) -> Tensor:
        if self.kind == "mhsa":
            return mhsa_forward(x, self.params, positions=False, max_len=self.max_len)
        return mhhm_forward(x, self.params, positions=self.positions, max_len=self.max_len)

    def __call__(self, x: Tensor) -> Tensor:
        return self.mix(ops.layer_norm(x, -1, self.norm_g, self.norm_b))


def init_global_interaction(
    kind: str,
    d: int,
    k: int,
    rng,
    d_prime: int | None = None,
    tied: bool = False,
    norm: str = "token",
    max_len: int = DEFAULT_MAX_LEN,
) -> GlobalInteraction:
    if kind == "mhsa":
        params = init_mhsa(d, k, rng)
    elif kind == "hypermixer":
        if d_prime is None:
            raise ConfigError("hypermixer needs d_prime")
        params = init_mhhm(d, d_prime, k, rng, tied=tied, norm=norm)
    else:
        raise ConfigError(f"unknown global interaction {kind!r}; expected mhsa or hypermixer")
    return GlobalInteraction(kind, params, _ones(d), _zeros(d), True, max_len)


def gi_flops(kind: str, n: int, d: int, k: int, d_prime: int | None = None,
             tied: bool = False, norm: str = "token") -> int:
    """FLOPs of :class:`GlobalInteraction` including its pre-norm."""
    if kind == "mhsa":
        core = mhsa_flops(n, d, k)
    else:
        core = mhhm_flops(n, d, d_prime, k, tied=tied, positions=True, norm=norm)
    return 7 * n * d + core


# -- blocks --------------------------------------------------------------


@dataclass
class ConformerBlockParams:
    style: str
    ffn1: FeedForwardParams | None
    gi: GlobalInteraction | None
    conv: ConvModuleParams | None
    ffn2: FeedForwardParams
    final_g: Tensor | None
    final_b: Tensor | None


def init_block(style: str, d: int, d_ffn: int, kernel: int, gi: GlobalInteraction | None, rng):
    if style == "conformer":
        return ConformerBlockParams(style, init_ffn(d, d_ffn, rng), gi, init_conv_module(d, kernel, rng),
                                    init_ffn(d, d_ffn, rng), _ones(d), _zeros(d))
    if style == "transformer":
        if gi is None:
            raise ConfigError("a transformer block needs a global interaction module")
        return ConformerBlockParams(style, None, gi, None, init_ffn(d, d_ffn, rng), None, None)
    raise ConfigError(f"unknown block style {style!r}; expected one of {BLOCK_STYLES}")


def conformer_block(x: Tensor, p: ConformerBlockParams, dropout: float = 0.0, rng=None) -> Tensor:
    def drop(t):
        return ops.dropout(t, dropout, rng)

    if p.style == "transformer":
        x = ops.add(x, drop(p.gi(x)))
        return ops.add(x, drop(ffn_module(x, p.ffn2)))
    x = ops.add(x, ops.scale(drop(ffn_module(x, p.ffn1)), 0.5))
    if p.gi is not None:
        x = ops.add(x, drop(p.gi(x)))
    x = ops.add(x, drop(conv_module(x, p.conv)))
    x = ops.add(x, ops.scale(drop(ffn_module(x, p.ffn2)), 0.5))
    return ops.layer_norm(x, -1, p.final_g, p.final_b)


def block_flops(style: str, n: int, d: int, d_ffn: int, kernel: int, gi: int | None) -> int:
    """Block FLOPs given the FLOPs ``gi`` of its global interaction (None if absent)."""
    if style == "transformer":
        return gi + ffn_flops(n, d, d_ffn) + 2 * n * d
    total = 2 * ffn_flops(n, d, d_ffn) + conv_module_flops(n, d, kernel) + 4 * n * d + n * d + 7 * n * d
    if gi is not None:
        total += gi + n * d
    return total


# -- frontend ------------------------------------------------------------


def conv_out_length(n: int) -> int:
    """Length after one kernel-3, stride-2, unpadded convolution."""
    return (n - 1) // 2


def subsampled_length(t: int) -> int:
    """Frames after the two-stage frontend: ``floor((floor((T-1)/2) - 1)/2)``."""
    return conv_out_length(conv_out_length(t))


@dataclass
class FrontendParams:
    c1_w: Tensor  # (3, 3, 1, d)
    c1_b: Tensor
    c2_w: Tensor  # (3, 3, d, d)
    c2_b: Tensor
    proj_w: Tensor  # (F'' * d, d)
    proj_b: Tensor


def init_frontend(n_mels: int, d: int, rng) -> FrontendParams:
    f2 = subsampled_length(n_mels)
    if f2 < 1:
        raise ConfigError(f"n_mels={n_mels} too small for two stride-2 convolutions")
    return FrontendParams(
        parameter(rng.normal(0.0, 1.0 / 3.0, (3, 3, 1, d))), _zeros(d),
        parameter(rng.normal(0.0, 1.0 / math.sqrt(9 * d), (3, 3, d, d))), _zeros(d),
        _dense(rng, f2 * d, d), _zeros(d),
    )


def conv2d_subsample(features: Tensor, p: FrontendParams) -> Tensor:
    """Two conv2d stages (3x3, stride 2, no padding, GELU) then a projection to ``d``.

    ``T x F`` becomes ``subsampled_length(T) x d``.
    """
    if features.ndim != 2:
        raise InputError(f"frontend expects a T x F feature matrix, got {features.shape}")
    t, f = features.shape
    if t < MIN_FRAMES:
        raise InputError(f"need at least {MIN_FRAMES} input frames, got {t}")
    h = ops.reshape(features, (t, f, 1))
    h = ops.gelu(ops.add(ops.conv2d(h, p.c1_w), p.c1_b))
    h = ops.gelu(ops.add(ops.conv2d(h, p.c2_w), p.c2_b))
    n, f2, c = h.shape
    return ops.linear(ops.reshape(h, (n, f2 * c)), p.proj_w, p.proj_b)


def frontend_flops(t: int, f: int, d: int) -> int:
    t1, f1 = conv_out_length(t), conv_out_length(f)
    t2, f2 = conv_out_length(t1), conv_out_length(f1)
    stage1 = 2 * t1 * f1 * 9 * d + 2 * t1 * f1 * d
    stage2 = 2 * t2 * f2 * 9 * d * d + 2 * t2 * f2 * d
    return stage1 + stage2 + 2 * t2 * f2 * d * d + t2 * d


# -- encoder -------------------------------------------------------------


@dataclass
class EncoderParams:
    frontend: FrontendParams
    blocks: list
    final_g: Tensor | None = None
    final_b: Tensor | None = None
    max_len: int = DEFAULT_MAX_LEN

    @property
    def d_model(self) -> int:
        return self.frontend.proj_w.shape[1]


def encoder_layers(x: Tensor, params: EncoderParams, dropout: float = 0.0, rng=None) -> Tensor:
    """Position embeddings, the block stack and (transformer style) the final norm."""
    x = ops.add(x, position_table(x.shape[-2], x.shape[-1], params.max_len))
    for block in params.blocks:
        x = conformer_block(x, block, dropout, rng)
    if params.final_g is not None:
        x = ops.layer_norm(x, -1, params.final_g, params.final_b)
    return x


def encoder_forward(features: Tensor, params: EncoderParams, dropout: float = 0.0, rng=None) -> Tensor:
    """``T x F`` filterbank features to ``N x d`` encodings, ``N = subsampled_length(T)``."""
    return encoder_layers(conv2d_subsample(features, params.frontend), params, dropout, rng)


def init_encoder(cfg, rng: np.random.Generator) -> EncoderParams:
    """Instantiate an encoder from an :class:`~hyperconformer.configs.EncoderConfig`."""
    blocks = []
    for _ in range(cfg.n_layers):
        gi = None
        if cfg.gi_kind != "none":
            gi = init_global_interaction(cfg.gi_kind, cfg.d_model, cfg.k, rng, cfg.d_prime,
                                         cfg.tied_hypernets, cfg.tm_norm, cfg.max_len)
        blocks.append(init_block(cfg.block, cfg.d_model, cfg.d_ffn, cfg.kernel, gi, rng))
    final_g = final_b = None
    if cfg.block == "transformer":
        final_g, final_b = _ones(cfg.d_model), _zeros(cfg.d_model)
    return EncoderParams(init_frontend(cfg.n_mels, cfg.d_model, rng), blocks, final_g, final_b, cfg.max_len)
