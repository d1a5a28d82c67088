"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tape, Tensor, backward


# Central differences at h=1e-5 carry about 1e-10 of cancellation noise in
# deep graphs; structurally zero gradients (e.g. attention key biases) would
# otherwise report noise / 1e-6. Below the floor the check is absolute (1e-9).
REL_FLOOR = 1e-5


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, maximised."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _projected_loss(fn, inputs, weights):
    out = fn(*inputs)
    if weights is None:
        return ops.sum(out) if out.size > 1 else out
    return ops.sum(ops.mul(out, weights))


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    *,
    seed: int = 0,
    h: float = 1e-5,
    max_entries: int | None = None,
    project: bool = True,
) -> float:
    """Compare tape gradients of ``fn`` with central differences.

    The output is reduced to a scalar by a fixed random projection so every
    output coordinate contributes. ``inputs`` must be tensors with
    ``requires_grad``; when ``max_entries`` is set, at most that many
    coordinates per input (chosen with ``seed``) are perturbed.
    Returns the maximum relative error over all checked coordinates.
    """
    rng = np.random.default_rng(seed)
    probe = fn(*inputs)
    # unit-scale projection keeps the loss O(1) regardless of output size
    weights = None
    if project and probe.size > 1:
        weights = Tensor(rng.standard_normal(probe.shape) / np.sqrt(probe.size))
    del probe

    saved = [t.grad for t in inputs]
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = _projected_loss(fn, inputs, weights)
    backward(tape, loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad for t in inputs]
    for t, g in zip(inputs, saved):
        t.grad = g
    del tape, loss

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat_idx = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            flat_idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        numeric = np.empty(len(flat_idx))
        t.data.flags.writeable = True
        flat = t.data.reshape(-1)
        try:
            for j, i in enumerate(flat_idx):
                orig = flat[i]
                flat[i] = orig + h
                up = _projected_loss(fn, inputs, weights).item()
                flat[i] = orig - h
                down = _projected_loss(fn, inputs, weights).item()
                flat[i] = orig
                numeric[j] = (up - down) / (2.0 * h)
        finally:
            t.data.flags.writeable = False
        worst = max(worst, max_relative_error(a.reshape(-1)[flat_idx], numeric))
    return worst


# -- named cases -----------------------------------------------------------
#
# Each builder takes a generator and returns ``(fn, inputs, max_entries)``.
# Inputs are small and well-conditioned; log/div inputs stay away from zero.

GRAD_TOLERANCE = 1e-4


def _leaf(rng, *shape, low=None):
    data = rng.standard_normal(shape)
    if low is not None:
        data = np.abs(data) + low
    return Tensor(data, requires_grad=True)


def _binary(op):
    def build(rng):
        return op, [_leaf(rng, 3, 4), _leaf(rng, 4)], None
    return build


def _unary(op, low=None):
    def build(rng):
        return op, [_leaf(rng, 3, 5, low=low)], None
    return build


def _module(forward, init, x_shape, max_entries=None):
    def build(rng):
        from .tensor import parameters

        params = init(rng)
        x = _leaf(rng, *x_shape)
        leaves = [x] + parameters(params)
        return (lambda x, *_: forward(x, params)), leaves, max_entries
    return build


def _toy_encoder(gi_kind):
    def build(rng):
        from .configs import EncoderConfig
        from .conformer import encoder_forward, init_encoder
        from .tensor import parameters

        cfg = EncoderConfig(d_model=8, n_layers=2, k=2, d_ffn=16, d_prime=8, kernel=3, gi_kind=gi_kind,
                            block="conformer", n_mels=11, vocab=4, max_len=64)
        params = init_encoder(cfg, rng)
        x = _leaf(rng, 27, 11)
        return (lambda x, *_: encoder_forward(x, params)), [x] + parameters(params), 4
    return build


def _ctc_case(rng):
    from .ctc import ctc_loss

    return (lambda z: ctc_loss(ops.log_softmax(z, axis=-1), [1, 2, 2])), [_leaf(rng, 6, 4)], None


def _conv2d_case(rng):
    return (lambda x, w: ops.conv2d(x, w, stride=2)), [_leaf(rng, 7, 9, 2), _leaf(rng, 3, 3, 2, 3)], None


def _depthwise_case(rng):
    return ops.conv1d_depthwise, [_leaf(rng, 2, 9, 3), _leaf(rng, 5, 3)], None


def _layer_norm_case(axis):
    def build(rng):
        return (lambda x, g, b: ops.layer_norm(x, axis, g, b)), [
            _leaf(rng, 2, 5, 4), _leaf(rng, 4) if axis == -1 else _leaf(rng, 5, 1),
            _leaf(rng, 4) if axis == -1 else _leaf(rng, 5, 1)], None
    return build


def _attention_case(rng):
    from .attention import attention

    return attention, [_leaf(rng, 5, 3), _leaf(rng, 5, 3), _leaf(rng, 5, 2)], None


def _tm_mlp_case(rng):
    from .hypermixer import tm_mlp

    return (lambda x, w1, w2: tm_mlp(x, w1, w2, "token")), [_leaf(rng, 6, 3), _leaf(rng, 6, 4), _leaf(rng, 6, 4)], None


def _mhsa(rng):
    from .attention import init_mhsa, mhsa_forward

    return _module(lambda x, p: mhsa_forward(x, p, positions=True), lambda r: init_mhsa(6, 2, r), (5, 6))(rng)


def _mhhm(rng):
    from .hypermixer import init_mhhm, mhhm_forward

    return _module(mhhm_forward, lambda r: init_mhhm(6, 4, 2, r), (5, 6))(rng)


def _hypermixer(rng):
    from .hypermixer import hypermixer_forward, init_hypernet_params

    return _module(hypermixer_forward, lambda r: init_hypernet_params(4, 3, r), (5, 4))(rng)


def _hypermixer_tied(rng):
    from .hypermixer import hypermixer_forward, init_hypernet_params

    return _module(hypermixer_forward, lambda r: init_hypernet_params(4, 3, r, tied=True), (5, 4))(rng)


def _ffn(rng):
    from .conformer import ffn_module, init_ffn

    return _module(ffn_module, lambda r: init_ffn(4, 8, r), (5, 4))(rng)


def _conv_module(rng):
    from .conformer import conv_module, init_conv_module

    return _module(conv_module, lambda r: init_conv_module(4, 3, r), (6, 4))(rng)


def _block(gi_kind, style="conformer"):
    def build(rng):
        from .conformer import conformer_block, init_block, init_global_interaction

        def init(r):
            gi = init_global_interaction(gi_kind, 4, 2, r, d_prime=4) if gi_kind != "none" else None
            return init_block(style, 4, 8, 3, gi, r)

        return _module(conformer_block, init, (6, 4), 6)(rng)
    return build


def _frontend(rng):
    from .conformer import conv2d_subsample, init_frontend

    return _module(conv2d_subsample, lambda r: init_frontend(11, 3, r), (15, 11), 8)(rng)


CASES = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "div": lambda rng: (ops.div, [_leaf(rng, 3, 4), _leaf(rng, 4, low=0.5)], None),
    "scale": _unary(lambda x: ops.scale(x, -1.7)),
    "matmul": lambda rng: (ops.matmul, [_leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)], None),
    "linear": lambda rng: (ops.linear, [_leaf(rng, 3, 4), _leaf(rng, 4, 2), _leaf(rng, 2)], None),
    "transpose": _unary(ops.transpose),
    "reshape": _unary(lambda x: ops.reshape(x, (5, 3))),
    "getitem": _unary(lambda x: ops.getitem(x, (np.array([0, 2, 0]), slice(1, 4)))),
    "concat": lambda rng: ((lambda a, b: ops.concat([a, b], axis=-1)), [_leaf(rng, 3, 2), _leaf(rng, 3, 4)], None),
    "sum": _unary(lambda x: ops.sum(x, axis=0)),
    "mean": _unary(lambda x: ops.mean(x, axis=-1, keepdims=True)),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, low=0.5),
    "sigmoid": _unary(ops.sigmoid),
    "gelu": _unary(ops.gelu),
    "swish": _unary(ops.swish),
    "glu": lambda rng: ((lambda x: ops.glu(x, axis=-1)), [_leaf(rng, 3, 6)], None),
    "softmax": _unary(lambda x: ops.softmax(x, axis=-1)),
    "log_softmax": _unary(lambda x: ops.log_softmax(x, axis=-1)),
    "layer_norm": _layer_norm_case(-1),
    "layer_norm_token": _layer_norm_case(-2),
    "dropout": _unary(lambda x: ops.dropout(x, 0.3, np.random.default_rng(1))),
    "conv1d_depthwise": _depthwise_case,
    "conv2d": _conv2d_case,
    "attention": _attention_case,
    "tm_mlp": _tm_mlp_case,
    "mhsa": _mhsa,
    "mhhm": _mhhm,
    "hypermixer": _hypermixer,
    "hypermixer_tied": _hypermixer_tied,
    "ffn": _ffn,
    "conv_module": _conv_module,
    "block_conformer_mhsa": _block("mhsa"),
    "block_conformer_hypermixer": _block("hypermixer"),
    "block_conv_only": _block("none"),
    "block_transformer": _block("mhsa", "transformer"),
    "frontend": _frontend,
    "ctc": _ctc_case,
    "encoder_mhsa": _toy_encoder("mhsa"),
    "encoder_hypermixer": _toy_encoder("hypermixer"),
}


def run_case(name: str, seed: int = 0) -> float:
    """Maximum relative error of the named case at ``seed``."""
    if name not in CASES:
        raise KeyError(f"unknown gradient case {name!r}; valid cases: {', '.join(CASES)}")
    rng = np.random.default_rng([seed, 7])
    fn, inputs, max_entries = CASES[name](rng)
    return gradcheck(fn, inputs, seed=seed, max_entries=max_entries)
