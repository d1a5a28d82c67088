"""Multi-head HyperMixer and HyperConformer encoders on a small numpy autodiff engine."""

from .attention import init_mhsa, mhsa_forward
from .configs import EncoderConfig, count_params, flop_model, head_reduction, load_config, preset
from .conformer import encoder_forward, init_encoder
from .ctc import ctc_loss, greedy_decode
from .hypermixer import hypermixer_forward, init_hypernet_params, init_mhhm, mhhm_forward, tm_mlp
from .tensor import Tape, Tensor, backward, measure, parameter, parameters

__all__ = [
    "EncoderConfig", "Tape", "Tensor", "backward", "count_params", "ctc_loss", "encoder_forward", "flop_model",
    "greedy_decode", "head_reduction", "hypermixer_forward", "init_encoder", "init_hypernet_params", "init_mhhm",
    "init_mhsa", "load_config", "measure", "mhhm_forward", "mhsa_forward", "parameter", "parameters", "preset",
    "tm_mlp",
]
