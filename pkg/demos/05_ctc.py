"""CTC loss checked against brute force, and greedy decoding."""

import itertools

import numpy as np

from hyperconformer import Tensor, ctc_loss, greedy_decode
from hyperconformer.oracles import ctc_enumerate

rng = np.random.default_rng(1)
logits = rng.standard_normal((5, 3))
lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))

for target in ([1], [1, 2], [2, 2], [1, 2, 1]):
    fast = ctc_loss(Tensor(lp), target).item()
    print(f"target {target!s:<10} recursion {fast:.12f}  enumeration {ctc_enumerate(lp, target):.12f}")

print("paths enumerated:", len(list(itertools.product(range(3), repeat=5))))
print("greedy decode:", greedy_decode(Tensor(lp)), "from argmax path", np.argmax(lp, axis=1).tolist())
