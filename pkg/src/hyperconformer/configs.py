"""Encoder configurations, parameter accounting and the FLOP model.

Presets follow the reference setup: 10 encoder layers, 8 heads,
``d_model`` of 144 (small) or 256 (medium), ``d_ffn = d' = 4 * d_model``,
an 80-bin filterbank frontend, a 4-layer decoder and a 5000-unit vocabulary
(the last two only enter parameter accounting).

Full-model parameter accounting adds, on top of the instantiated encoder:

* decoder layers: self-attention ``4d^2 + 4d``, cross-attention
  ``4d^2 + 4d``, feed-forward ``2*d*d_ffn + d + d_ffn``, three layer norms
  ``6d``; plus a final decoder norm ``2d``;
* token embedding ``vocab * d``, tied with the decoder output layer;
* CTC output layer on the encoder, ``d * vocab + vocab``.

Configuration files are flat ``key = value`` lines using the field names of
:class:`EncoderConfig`; ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .conformer import (
    BLOCK_STYLES,
    GI_KINDS,
    block_flops,
    conv_module_flops,
    ffn_flops,
    frontend_flops,
    gi_flops,
    init_encoder,
    subsampled_length,
)
from .errors import ConfigError
from .hypermixer import NORM_CHOICES, mhhm_param_count, mhhm_tokenmix_flops
from .positions import DEFAULT_MAX_LEN
from .tensor import parameters

MODELS = {
    "transformer": ("transformer", "mhsa"),
    "hypermixer": ("transformer", "hypermixer"),
    "conformer": ("conformer", "mhsa"),
    "hyperconformer": ("conformer", "hypermixer"),
    "conv-only": ("conformer", "none"),
}
PRESET_WIDTHS = {"small": 144, "medium": 256}

# Par. [M] column of the reference results table
REFERENCE_PARAMS_M = {
    ("transformer", "small"): 6.1,
    ("hypermixer", "small"): 5.6,
    ("conformer", "small"): 8.7,
    ("hyperconformer", "small"): 7.9,
    ("transformer", "medium"): 16.2,
    ("hypermixer", "medium"): 14.4,
    ("conformer", "medium"): 24.1,
    ("hyperconformer", "medium"): 21.7,
}
REFERENCE_TOLERANCE = 0.10

# single-head -> 8-head parameter reduction, percent
HEAD_REDUCTION_PCT = {"small": 7.1, "medium": 20.8}
HEAD_REDUCTION_TOLERANCE_PP = 2.5


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 144
    n_layers: int = 10
    k: int = 8
    d_ffn: int = 576
    d_prime: int = 576
    kernel: int = 31
    gi_kind: str = "hypermixer"
    block: str = "conformer"
    tied_hypernets: bool = False
    tm_norm: str = "token"
    n_mels: int = 80
    vocab: int = 5000
    n_decoder_layers: int = 4
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self):
        if self.gi_kind not in GI_KINDS:
            raise ConfigError(f"gi_kind must be one of {GI_KINDS}, got {self.gi_kind!r}")
        if self.block not in BLOCK_STYLES:
            raise ConfigError(f"block must be one of {BLOCK_STYLES}, got {self.block!r}")
        if self.block == "transformer" and self.gi_kind == "none":
            raise ConfigError("transformer blocks need a global interaction module")
        if self.tm_norm not in NORM_CHOICES:
            raise ConfigError(f"tm_norm must be one of {NORM_CHOICES}, got {self.tm_norm!r}")
        for name in ("d_model", "n_layers", "k", "d_ffn", "d_prime", "kernel", "n_mels", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.k:
            raise ConfigError(f"k={self.k} must divide d_model={self.d_model}")
        if self.gi_kind == "hypermixer" and self.d_prime % self.k:
            raise ConfigError(f"k={self.k} must divide d_prime={self.d_prime}")
        if self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be odd, got {self.kernel}")
        if subsampled_length(self.n_mels) < 1:
            raise ConfigError(f"n_mels={self.n_mels} too small for the frontend")

    @property
    def model(self) -> str:
        for name, (block, gi) in MODELS.items():
            if (block, gi) == (self.block, self.gi_kind):
                return name
        raise AssertionError("unreachable")


def preset(name: str = "small", model: str = "hyperconformer", **overrides) -> EncoderConfig:
    if name not in PRESET_WIDTHS:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESET_WIDTHS)}")
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}; valid models: {', '.join(MODELS)}")
    d = PRESET_WIDTHS[name]
    block, gi = MODELS[model]
    cfg = EncoderConfig(d_model=d, n_layers=10, k=8, d_ffn=4 * d, d_prime=4 * d, kernel=31,
                        gi_kind=gi, block=block, n_mels=80, vocab=5000, n_decoder_layers=4)
    return replace(cfg, **overrides) if overrides else cfg


def with_model(cfg: EncoderConfig, model: str) -> EncoderConfig:
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}; valid models: {', '.join(MODELS)}")
    block, gi = MODELS[model]
    return replace(cfg, block=block, gi_kind=gi)


# -- config files ----------------------------------------------------------


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{field.name}: expected a boolean, got {raw!r}")
    if field.type in (int, "int"):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{field.name}: expected an integer, got {raw!r}") from None
    return raw


def parse_config(text: str, base: EncoderConfig | None = None) -> EncoderConfig:
    known = {f.name: f for f in fields(EncoderConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(known[key], raw)
    return replace(base or EncoderConfig(), **values)


def load_config(path, base: EncoderConfig | None = None) -> EncoderConfig:
    return parse_config(Path(path).read_text(), base)


def dump_config(cfg: EncoderConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


# -- parameter accounting ----------------------------------------------------


def encoder_param_formula(cfg: EncoderConfig) -> int:
    """Closed-form encoder parameter count (frontend and blocks)."""
    d, f, K = cfg.d_model, cfg.d_ffn, cfg.kernel
    f2 = subsampled_length(cfg.n_mels)
    frontend = (9 * d + d) + (9 * d * d + d) + (f2 * d * d + d)
    ffn = 2 * d + d * f + f + f * d + d
    conv = 3 * d * d + K * d + 8 * d
    if cfg.gi_kind == "mhsa":
        gi = 2 * d + 4 * (d * d + d)
    elif cfg.gi_kind == "hypermixer":
        gi = 2 * d + mhhm_param_count(d, cfg.d_prime, cfg.k, tied=cfg.tied_hypernets)
    else:
        gi = 0
    if cfg.block == "conformer":
        block = 2 * ffn + conv + gi + 2 * d
        tail = 0
    else:
        block = gi + ffn
        tail = 2 * d
    return frontend + cfg.n_layers * block + tail


def decoder_param_formula(cfg: EncoderConfig) -> int:
    """Decoder stack plus its final norm (embedding counted separately)."""
    d, f = cfg.d_model, cfg.d_ffn
    layer = 2 * (4 * d * d + 4 * d) + (2 * d * f + d + f) + 6 * d
    return cfg.n_decoder_layers * layer + 2 * d


def heads_param_formula(cfg: EncoderConfig) -> int:
    """Tied token embedding / decoder output plus the CTC output layer."""
    return cfg.vocab * cfg.d_model + (cfg.d_model * cfg.vocab + cfg.vocab)


def instantiated_encoder_params(cfg: EncoderConfig, seed: int = 0) -> int:
    enc = init_encoder(cfg, np.random.default_rng(seed))
    return sum(p.size for p in parameters(enc))


def count_params(cfg: EncoderConfig, scope: str = "encoder", check: bool = True) -> int:
    """Learnable parameter count.

    ``encoder`` sums every tensor of an instantiated encoder and, with
    ``check``, verifies it against :func:`encoder_param_formula`. ``full``
    adds the decoder, embedding and CTC layer formulas.
    """
    if scope not in ("encoder", "full"):
        raise ConfigError(f"scope must be 'encoder' or 'full', got {scope!r}")
    if check:
        n = instantiated_encoder_params(cfg)
        closed = encoder_param_formula(cfg)
        if n != closed:
            raise AssertionError(f"instantiated count {n} != closed form {closed} for {cfg}")
    else:
        n = encoder_param_formula(cfg)
    if scope == "full":
        n += decoder_param_formula(cfg) + heads_param_formula(cfg)
    return n


def head_reduction(cfg: EncoderConfig, scope: str = "full", k_from: int = 1, check: bool = True) -> float:
    """Percent fewer parameters at ``cfg.k`` heads than at ``k_from`` heads."""
    if cfg.gi_kind != "hypermixer":
        raise ConfigError("head reduction is defined for HyperMixer global interaction")
    many = count_params(cfg, scope, check)
    few = count_params(replace(cfg, k=k_from), scope, check)
    return 100.0 * (1.0 - many / few)


# -- FLOP model --------------------------------------------------------------


def flop_model(cfg: EncoderConfig, n_frames: int, input_frames: int | None = None) -> dict:
    """Closed-form forward FLOPs of :func:`~hyperconformer.conformer.encoder_forward`.

    ``n_frames`` is the length after subsampling; the frontend term uses
    ``input_frames`` (default: the shortest input yielding ``n_frames``,
    ``4 * n_frames + 3``). ``tokenmix`` is the token-mixing part of the
    HyperMixer global interaction, reported separately and already
    contained in ``gi``.
    """
    n, d = n_frames, cfg.d_model
    t = 4 * n + 3 if input_frames is None else input_frames
    if subsampled_length(t) != n:
        raise ConfigError(f"input_frames={t} does not subsample to {n} frames")
    gi_one = None
    if cfg.gi_kind != "none":
        gi_one = gi_flops(cfg.gi_kind, n, d, cfg.k, cfg.d_prime, cfg.tied_hypernets, cfg.tm_norm)
    block = block_flops(cfg.block, n, d, cfg.d_ffn, cfg.kernel, gi_one)
    n_ffn = 2 if cfg.block == "conformer" else 1
    out = {
        "frontend": frontend_flops(t, cfg.n_mels, d),
        "positions": n * d,
        "ffn": cfg.n_layers * n_ffn * ffn_flops(n, d, cfg.d_ffn),
        "gi": cfg.n_layers * (gi_one or 0),
        "conv": cfg.n_layers * (conv_module_flops(n, d, cfg.kernel) if cfg.block == "conformer" else 0),
        "tokenmix": 0,
    }
    if cfg.gi_kind == "hypermixer":
        out["tokenmix"] = cfg.n_layers * mhhm_tokenmix_flops(n, d, cfg.d_prime, cfg.k)
    final = 7 * n * d if cfg.block == "transformer" else 0
    out["residual"] = cfg.n_layers * block + final - out["ffn"] - out["gi"] - out["conv"]
    out["total"] = out["frontend"] + out["positions"] + cfg.n_layers * block + final
    return out
