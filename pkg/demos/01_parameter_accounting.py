"""Where the parameters of each encoder family go.

Counts every tensor of an instantiated encoder, checks it against the closed
form, then adds the decoder and output layers to compare with the reference
table. Finally shows how splitting HyperMixer into 8 heads shrinks the model.
"""

from dataclasses import replace

from hyperconformer.configs import (MODELS, REFERENCE_PARAMS_M, count_params, decoder_param_formula,
                                    heads_param_formula, head_reduction, preset)

for name in ("small", "medium"):
    print(f"\n{name} preset (d_model={preset(name).d_model})")
    print(f"{'model':<16}{'encoder':>12}{'full':>12}{'reference':>12}")
    for model in MODELS:
        cfg = preset(name, model)
        enc = count_params(cfg, "encoder")
        full = enc + decoder_param_formula(cfg) + heads_param_formula(cfg)
        ref = REFERENCE_PARAMS_M.get((model, name))
        print(f"{model:<16}{enc / 1e6:>11.2f}M{full / 1e6:>11.2f}M{(f'{ref}M' if ref else '-'):>12}")

# The hypernetworks of an 8-head HyperMixer are 8x narrower in every
# dimension, so their weight matrices hold 1/8 of the single-head entries.
for name in ("small", "medium"):
    for tied in (False, True):
        cfg = preset(name, tied_hypernets=tied)
        k1 = count_params(replace(cfg, k=1), "full")
        print(f"{name:<7} tied={tied!s:<5} k=1 {k1 / 1e6:.2f}M -> k=8 {count_params(cfg, 'full') / 1e6:.2f}M "
              f"({head_reduction(cfg):.1f}% fewer)")
