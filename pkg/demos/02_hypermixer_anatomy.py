"""A look inside one HyperMixer layer.

The token-mixing weights are not parameters: two small hypernetworks build
them row by row from the tokens themselves, so the layer works for any
sequence length and its cost grows linearly with it.
"""

import numpy as np

from hyperconformer import Tensor, hypermixer_forward, init_hypernet_params, init_mhhm, measure, mhhm_forward
from hyperconformer.attention import init_mhsa, mhsa_forward
from hyperconformer.hypermixer import generate_weights, tm_mlp
from hyperconformer.oracles import mhhm_by_slices, tm_mlp_loop

rng = np.random.default_rng(0)
hn = init_hypernet_params(d=8, d_prime=16, rng=rng)

for n in (5, 11):
    x = Tensor(rng.standard_normal((n, 8)))
    w1, w2 = generate_weights(x, hn)
    print(f"N={n:>2}: generated W1 {w1.shape}, W2 {w2.shape}, output {hypermixer_forward(x, hn).shape}")

# The vectorised token mixing agrees with a scalar loop over features.
x = rng.standard_normal((6, 8))
w1, w2 = generate_weights(Tensor(x), hn)
fast = tm_mlp(Tensor(x), w1, w2).data
print("max |vectorised - loop| =", np.max(np.abs(fast - tm_mlp_loop(x, w1.data, w2.data))))

# Without positions, shuffling tokens shuffles outputs; positions break that.
perm = rng.permutation(6)
for pos in (False, True):
    diff = np.max(np.abs(hypermixer_forward(Tensor(x[perm]), hn, pos).data
                         - hypermixer_forward(Tensor(x), hn, pos).data[perm]))
    print(f"positions={pos!s:<5} equivariance gap {diff:.2e}")

# Heads act on disjoint feature slices; nothing mixes them afterwards.
heads = init_mhhm(8, 16, 4, rng)
print("4 heads == 4 sliced single-head layers:",
      np.array_equal(mhhm_forward(Tensor(x), heads).data, mhhm_by_slices(x, heads)))

# Engine-counted cost against sequence length, next to self-attention.
mixer = init_mhhm(144, 576, 8, rng)
attn = init_mhsa(144, 8, rng)
print(f"\n{'N':>6}{'MHHM GFLOP':>12}{'MHSA GFLOP':>12}{'MHHM MiB':>10}{'MHSA MiB':>10}")
for n in (300, 600, 1200, 2400):
    xs = Tensor(rng.standard_normal((n, 144)))
    _, a = measure(lambda: mhhm_forward(xs, mixer).shape)
    _, b = measure(lambda: mhsa_forward(xs, attn).shape)
    print(f"{n:>6}{a.flops / 1e9:>12.3f}{b.flops / 1e9:>12.3f}{a.peak_bytes / 2**20:>10.1f}"
          f"{b.peak_bytes / 2**20:>10.1f}")
