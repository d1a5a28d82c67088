"""Oracle-equivalence suites behind the ``verify`` command.

Every suite is seeded and returns plain numbers, so two runs with the same
seed produce identical reports. Timings are deliberately left out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import init_mhsa, mhsa_flops, mhsa_forward
from .conformer import conv_module, init_conv_module
from .ctc import check_feasible, ctc_loss, min_frames
from .errors import InfeasibleTargetError
from .gradcheck import CASES, GRAD_TOLERANCE, run_case
from .hypermixer import (generate_weights, hypermixer_forward, init_hypernet_params, init_mhhm, mhhm_flops,
                         mhhm_forward, tm_mlp)
from .oracles import ctc_enumerate, mhhm_by_slices, tm_mlp_loop
from .tensor import Tensor, measure


@dataclass
class SuiteResult:
    name: str
    passed: bool
    metric: float
    tolerance: float
    cases: int
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"passed": self.passed, "metric": self.metric, "tolerance": self.tolerance,
                "cases": self.cases, **self.detail}


def random_ctc_instance(rng: np.random.Generator, max_n: int = 6, max_v: int = 3, max_l: int = 3):
    """A feasible ``(log_probs, targets)`` pair with ``N <= max_n``, ``V <= max_v``, ``L <= max_l``."""
    while True:
        n = int(rng.integers(1, max_n + 1))
        v = int(rng.integers(1, max_v + 1))
        length = int(rng.integers(0, max_l + 1))
        targets = [int(t) for t in rng.integers(1, v + 1, size=length)]
        if min_frames(targets) <= n:
            break
    logits = rng.standard_normal((n, v + 1)) * 2.0
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return lp, targets


def ctc_suite(seed: int = 0, instances: int = 200) -> SuiteResult:
    rng = np.random.default_rng([seed, 1])
    worst = 0.0
    for _ in range(instances):
        lp, targets = random_ctc_instance(rng)
        fast = ctc_loss(Tensor(lp), targets).item()
        worst = max(worst, abs(fast - ctc_enumerate(lp, targets)))
    return SuiteResult("ctc_enumeration", worst <= 1e-8, worst, 1e-8, instances)


def mhhm_suite(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng([seed, 2])
    identical, cases = True, 0
    for k, positions in ((2, True), (2, False), (4, True)):
        params = init_mhhm(8, 8, k, rng)
        x = rng.standard_normal((6, 8))
        fast = mhhm_forward(Tensor(x), params, positions).data
        identical &= bool(np.array_equal(fast, mhhm_by_slices(x, params, positions)))
        cases += 1
    return SuiteResult("mhhm_slices", identical, 0.0 if identical else 1.0, 0.0, cases)


def tm_mlp_suite(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng([seed, 3])
    worst, cases = 0.0, 0
    for norm in ("token", "feature", "none"):
        for n, d, dp in ((5, 3, 4), (9, 4, 6)):
            x, w1, w2 = rng.standard_normal((n, d)), rng.standard_normal((n, dp)), rng.standard_normal((n, dp))
            fast = tm_mlp(Tensor(x), Tensor(w1), Tensor(w2), norm).data
            worst = max(worst, float(np.max(np.abs(fast - tm_mlp_loop(x, w1, w2, norm)))))
            cases += 1
    return SuiteResult("tm_mlp_loop", worst <= 1e-12, worst, 1e-12, cases)


def equivariance_suite(seed: int = 0, n: int = 7, d: int = 8) -> SuiteResult:
    """Permuting tokens permutes outputs when positions are off; positions on break it."""
    rng = np.random.default_rng([seed, 4])
    x = rng.standard_normal((n, d))
    perm = rng.permutation(n)
    while np.array_equal(perm, np.arange(n)):
        perm = rng.permutation(n)
    mhsa = init_mhsa(d, 2, rng)
    hyper = init_hypernet_params(d, 6, rng)
    fns = {
        "mhsa": lambda t, pos: mhsa_forward(t, mhsa, positions=pos),
        "hypermixer": lambda t, pos: hypermixer_forward(t, hyper, positions=pos),
    }
    off, on = {}, {}
    for name, fn in fns.items():
        base_off = fn(Tensor(x), False).data
        off[name] = float(np.max(np.abs(fn(Tensor(x[perm]), False).data - base_off[perm])))
        base_on = fn(Tensor(x), True).data
        on[name] = float(np.max(np.abs(fn(Tensor(x[perm]), True).data - base_on[perm])))
    worst = max(off.values())
    passed = worst <= 1e-10 and min(on.values()) > 1e-3
    return SuiteResult("permutation_equivariance", passed, worst, 1e-10, len(fns),
                       {"positions_on_change": on})


def locality_suite(seed: int = 0, n: int = 24, d: int = 4, kernel: int = 5) -> SuiteResult:
    """Perturbing one frame leaves conv-module outputs beyond ``(K-1)/2`` frames bit-identical."""
    rng = np.random.default_rng([seed, 5])
    params = init_conv_module(d, kernel, rng)
    x = rng.standard_normal((n, d))
    base = conv_module(Tensor(x), params).data
    radius = (kernel - 1) // 2
    exact, reached = True, True
    for pos in (0, n // 2, n - 1):
        y = x.copy()
        y[pos] += rng.standard_normal(d)
        out = conv_module(Tensor(y), params).data
        far = np.abs(np.arange(n) - pos) > radius
        exact &= bool(np.array_equal(out[far], base[far]))
        reached &= bool(np.all(np.any(out[~far] != base[~far], axis=1)))
    return SuiteResult("conv_locality", exact and reached, 0.0 if exact else 1.0, 0.0, 3,
                       {"radius": radius, "inside_changes": reached})


def flops_suite(seed: int = 0) -> SuiteResult:
    """Engine-counted FLOPs equal the closed forms; head split divides token-mixing cost exactly."""
    rng = np.random.default_rng([seed, 6])
    mismatches, cases = 0, 0
    for n, d, k, dp in ((7, 8, 2, 8), (12, 16, 4, 8), (5, 12, 3, 6)):
        x = Tensor(rng.standard_normal((n, d)))
        mh = init_mhhm(d, dp, k, rng)
        _, st = measure(mhhm_forward, x, mh, True)
        mismatches += st.flops != mhhm_flops(n, d, dp, k)
        sa = init_mhsa(d, k, rng)
        _, st = measure(mhsa_forward, x, sa, False)
        mismatches += st.flops != mhsa_flops(n, d, k)
        cases += 2
    ratio = {}
    for k in (1, 8):
        mh = init_mhhm(16, 16, k, rng)
        x = Tensor(rng.standard_normal((9, 16)))
        total = 0
        for l, head in enumerate(mh.heads):
            xs = x[:, l * (16 // k):(l + 1) * (16 // k)]
            w1, w2 = generate_weights(xs, head)
            total += measure(tm_mlp, xs, w1, w2, "none")[1].flops
        ratio[k] = total
    split_exact = ratio[1] == 8 * ratio[8]
    return SuiteResult("flop_counts", mismatches == 0 and split_exact, float(mismatches), 0.0, cases,
                       {"tokenmix_k1": ratio[1], "tokenmix_k8": ratio[8]})


def gradient_suite(seed: int = 0, names=None) -> SuiteResult:
    names = list(CASES) if names is None else list(names)
    errors = {name: run_case(name, seed) for name in names}
    worst = max(errors.values())
    return SuiteResult("gradients", worst < GRAD_TOLERANCE, worst, GRAD_TOLERANCE, len(names),
                       {"worst_case": max(errors, key=errors.get)})


def infeasible_suite(seed: int = 0) -> SuiteResult:
    """CTC rejects targets that need more frames than available."""
    raised = 0
    for n, targets in ((1, [1, 1]), (2, [1, 2, 3]), (3, [2, 2, 2])):
        try:
            check_feasible(n, targets)
        except InfeasibleTargetError:
            raised += 1
    return SuiteResult("ctc_infeasible", raised == 3, float(3 - raised), 0.0, 3)


SUITES = {
    "ctc_enumeration": ctc_suite,
    "ctc_infeasible": infeasible_suite,
    "mhhm_slices": mhhm_suite,
    "tm_mlp_loop": tm_mlp_suite,
    "permutation_equivariance": equivariance_suite,
    "conv_locality": locality_suite,
    "flop_counts": flops_suite,
    "gradients": gradient_suite,
}


def run_verify(seed: int = 0) -> dict:
    """Run every suite; the report is a pure function of ``seed``."""
    results = {name: fn(seed) for name, fn in SUITES.items()}
    return {
        "seed": seed,
        "passed": all(r.passed for r in results.values()),
        "suites": {name: r.as_dict() for name, r in results.items()},
    }
