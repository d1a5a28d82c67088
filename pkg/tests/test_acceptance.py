"""End-to-end acceptance checks, one test per criterion.

Each test registers a line through the ``criterion`` fixture; the terminal
summary prints PASS/FAIL for every criterion with its measured values.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from hyperconformer.cli import main
from hyperconformer.configs import (HEAD_REDUCTION_PCT, HEAD_REDUCTION_TOLERANCE_PP, REFERENCE_PARAMS_M,
                                    REFERENCE_TOLERANCE, count_params, head_reduction, preset)
from hyperconformer.conformer import conv_module, gi_flops, init_conv_module, init_global_interaction
from hyperconformer.ctc import ctc_loss
from hyperconformer.gradcheck import CASES, GRAD_TOLERANCE, run_case
from hyperconformer.harness import ToyTask, loglog_slope, run_scaling_bench, speedup, summarize, toy_config, train_toy
from hyperconformer.hypermixer import (generate_weights, hypermixer_forward, init_hypernet_params, init_mhhm,
                                       mhhm_forward, tm_mlp)
from hyperconformer.attention import init_mhsa, mhsa_forward
from hyperconformer.oracles import ctc_enumerate, mhhm_by_slices, tm_mlp_loop
from hyperconformer.tensor import Tensor, measure
from hyperconformer.verify import random_ctc_instance

pytestmark = pytest.mark.slow

MODELS4 = ("transformer", "hypermixer", "conformer", "hyperconformer")
ASYMPTOTIC_N = (600, 1200, 1800, 2400, 3000)


def test_parameter_counts(criterion):
    criterion(1, "parameter counts within 10% of the reference table, strict orderings")
    counts = {(m, p): count_params(preset(p, m), "full") for m in MODELS4 for p in ("small", "medium")}
    detail = ", ".join(f"{m}-{p} {n / 1e6:.2f}M" for (m, p), n in counts.items())
    criterion(1, "parameter counts within 10% of the reference table, strict orderings", detail)
    for key, n in counts.items():
        target = REFERENCE_PARAMS_M[key] * 1e6
        assert abs(n - target) <= REFERENCE_TOLERANCE * target, key
    for p in ("small", "medium"):
        assert counts[("hyperconformer", p)] < counts[("conformer", p)]
        assert counts[("hypermixer", p)] < counts[("transformer", p)]


@pytest.mark.parametrize("name", ["small", "medium"])
def test_head_reduction(criterion, name):
    title = f"head reduction k=1 -> k=8, {name} preset, target {HEAD_REDUCTION_PCT[name]}% +/- 2.5 pp"
    got = {tied: head_reduction(preset(name, tied_hypernets=tied)) for tied in (False, True)}
    criterion(f"2{'ab'[name == 'medium']}", title, f"untied {got[False]:.2f}%, tied {got[True]:.2f}%")
    ok = [t for t, v in got.items() if abs(v - HEAD_REDUCTION_PCT[name]) <= HEAD_REDUCTION_TOLERANCE_PP]
    assert ok, f"no hypernetwork setting lands in range: {got}"


def test_asymptotic_flops(criterion):
    rng = np.random.default_rng(0)
    counted = {"hypermixer": [], "mhsa": []}
    for kind in counted:
        gi = init_global_interaction(kind, 144, 8, rng, d_prime=576)
        for n in ASYMPTOTIC_N:
            _, st = measure(lambda x: gi(x).shape, Tensor(rng.standard_normal((n, 144))))
            assert st.flops == gi_flops(kind, n, 144, 8, 576)
            counted[kind].append(st.flops)
    slope_h = loglog_slope(ASYMPTOTIC_N, counted["hypermixer"])
    slope_a = loglog_slope(ASYMPTOTIC_N, counted["mhsa"])

    def tokenmix(k, n):
        params = init_mhhm(144, 576, k, np.random.default_rng(1))
        x = Tensor(np.random.default_rng(2).standard_normal((n, 144)))
        total, w = 0, 144 // k
        for l, head in enumerate(params.heads):
            xs = x[:, l * w:(l + 1) * w]
            w1, w2 = generate_weights(xs, head)
            total += measure(tm_mlp, xs, w1, w2, "none")[1].flops
        return total

    ratios = {n: tokenmix(1, n) / tokenmix(8, n) for n in (600, 3000)}
    criterion(3, "GI FLOP slopes: MHHM <= 1.05, MHSA >= 1.5; token mixing k=8 is exactly 1/8 of k=1",
              f"MHHM {slope_h:.3f}, MHSA {slope_a:.3f}, k1/k8 {ratios}")
    assert slope_h <= 1.05
    assert slope_a >= 1.5
    assert all(r == 8 for r in ratios.values())


@pytest.fixture(scope="module")
def scaling_bench():
    start = time.perf_counter()
    records = run_scaling_bench(("conformer", "hyperconformer"), lengths=(6, 12, 18, 24, 30), seed=0)
    return records, time.perf_counter() - start


def test_wall_time(criterion, scaling_bench):
    records, elapsed = scaling_bench
    s = summarize(records)
    gap18 = speedup(s, "hyperconformer", "conformer", 18.0)
    gap30 = speedup(s, "hyperconformer", "conformer", 30.0)
    secs = [12.0, 18.0, 24.0, 30.0]
    slopes = {m: loglog_slope([s[(m, x)]["n_frames"] for x in secs], [s[(m, x)]["duration_seconds"] for x in secs])
              for m in ("conformer", "hyperconformer")}
    criterion(4, "small preset wall time: HyperConformer faster at 18 s and 30 s, gap widens, < 10 min",
              f"gap18 {gap18:.1%}, gap30 {gap30:.1%}, time slopes (reported) {slopes['conformer']:.2f} / "
              f"{slopes['hyperconformer']:.2f}, bench {elapsed:.0f} s")
    for secs_ in (18.0, 30.0):
        assert s[("hyperconformer", secs_)]["duration_seconds"] < s[("conformer", secs_)]["duration_seconds"]
    assert gap30 > gap18
    assert elapsed < 600


def test_peak_memory(criterion, scaling_bench):
    records, _ = scaling_bench
    s = summarize(records)
    encoder_ok = {x: s[("hyperconformer", x)]["peak_bytes"] < s[("conformer", x)]["peak_bytes"]
                  for x in (12.0, 18.0, 24.0, 30.0)}
    rng = np.random.default_rng(0)
    ratios = {}
    for kind in ("hypermixer", "mhsa"):
        gi = init_global_interaction(kind, 144, 8, rng, d_prime=576, max_len=8192)
        peaks = {}
        for n in (2400, 4800):
            _, st = measure(lambda x: gi(x).shape, Tensor(rng.standard_normal((n, 144))))
            peaks[n] = st.peak_bytes
        ratios[kind] = peaks[4800] / peaks[2400]
    criterion(5, "peak bytes: HyperConformer < Conformer at >= 12 s; GI ratio 2N/N in [1.8, 2.2] vs >= 2.8",
              f"encoder {encoder_ok}, HyperMixer {ratios['hypermixer']:.2f}, MHSA {ratios['mhsa']:.2f}")
    assert all(encoder_ok.values())
    assert 1.8 <= ratios["hypermixer"] <= 2.2
    assert ratios["mhsa"] >= 2.8


def test_gradients(criterion):
    errors = {name: max(run_case(name, seed) for seed in (0, 1, 2)) for name in CASES}
    worst = max(errors, key=errors.get)
    criterion(6, "central-difference gradient checks, every op and both toy encoders, 3 seeds",
              f"{len(errors)} cases, worst {worst} {errors[worst]:.2e}")
    assert "encoder_mhsa" in errors and "encoder_hypermixer" in errors
    assert errors[worst] < GRAD_TOLERANCE


def test_oracles(criterion):
    rng = np.random.default_rng(2024)
    ctc_worst = 0.0
    for _ in range(200):
        lp, targets = random_ctc_instance(rng, max_n=6, max_v=3, max_l=3)
        ctc_worst = max(ctc_worst, abs(ctc_loss(Tensor(lp), targets).item() - ctc_enumerate(lp, targets)))

    params = init_mhhm(8, 8, 2, rng)
    x = rng.standard_normal((7, 8))
    mhhm_same = all(np.array_equal(mhhm_forward(Tensor(x), params, pos).data, mhhm_by_slices(x, params, pos))
                    for pos in (True, False))

    tm_worst = 0.0
    for n, d, dp in ((3, 2, 4), (6, 5, 3), (10, 4, 8)):
        xs, w1, w2 = rng.standard_normal((n, d)), rng.standard_normal((n, dp)), rng.standard_normal((n, dp))
        tm_worst = max(tm_worst, float(np.max(np.abs(tm_mlp(Tensor(xs), Tensor(w1), Tensor(w2)).data
                                                     - tm_mlp_loop(xs, w1, w2)))))
    criterion(7, "oracles: CTC enumeration 1e-8 (200), MHHM k=2 slices bit-identical, TM-MLP loop 1e-12",
              f"ctc {ctc_worst:.1e}, mhhm identical {mhhm_same}, tm-mlp {tm_worst:.1e}")
    assert ctc_worst <= 1e-8
    assert mhhm_same
    assert tm_worst <= 1e-12


def test_equivariance_and_locality(criterion):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((7, 8))
    mhsa = init_mhsa(8, 2, rng)
    hyper = init_hypernet_params(8, 16, rng)
    fns = {"mhsa": lambda t, pos: mhsa_forward(t, mhsa, positions=pos),
           "hypermixer": lambda t, pos: hypermixer_forward(t, hyper, positions=pos)}
    off, on = {}, {}
    for name, fn in fns.items():
        off[name] = max(float(np.max(np.abs(fn(Tensor(x[p]), False).data - fn(Tensor(x), False).data[p])))
                        for p in (rng.permutation(7) for _ in range(5)))
        on[name] = max(float(np.max(np.abs(fn(Tensor(x[p]), True).data - fn(Tensor(x), True).data[p])))
                       for p in (rng.permutation(7) for _ in range(5)))

    kernel = 7
    conv = init_conv_module(8, kernel, rng)
    seq = rng.standard_normal((30, 8))
    base = conv_module(Tensor(seq), conv).data
    local = True
    for pos in (0, 13, 29):
        y = seq.copy()
        y[pos] += rng.standard_normal(8)
        far = np.abs(np.arange(30) - pos) > (kernel - 1) // 2
        local &= bool(np.array_equal(conv_module(Tensor(y), conv).data[far], base[far]))
    criterion(8, "permutation equivariance without positions (1e-10), broken with positions (> 1e-3), conv locality",
              f"off {max(off.values()):.1e}, on min {min(on.values()):.2f}, locality exact {local}")
    assert max(off.values()) <= 1e-10
    assert min(on.values()) > 1e-3
    assert local


def test_toy_learning(criterion):
    task = ToyTask("first-token-match", n_min=32, n_max=64, vocab=2, seed=0)
    start = time.perf_counter()
    final = {}
    for model in ("hyperconformer", "conv-only", "conformer"):
        res = train_toy(task, toy_config(model), epochs=6, steps_per_epoch=50, batch_size=16, lr=3e-3, warmup=50)
        final[model] = res.accuracy[-1]
    elapsed = time.perf_counter() - start
    criterion(9, "first-token-match: HyperConformer and Conformer >= 95%, conv-only <= 70%, < 15 min",
              ", ".join(f"{m} {a:.1%}" for m, a in final.items()) + f", {elapsed:.0f} s")
    assert final["hyperconformer"] >= 0.95
    assert final["conformer"] >= 0.95
    assert final["conv-only"] <= 0.70
    assert elapsed < 900


def test_verify_reproducible(criterion, capsys):
    runs = []
    for _ in range(2):
        code = main(["verify", "--seed", "5", "--json"])
        runs.append((code, capsys.readouterr().out))
    criterion(10, "verify --seed S twice gives bit-identical JSON",
              f"exit codes {runs[0][0]}/{runs[1][0]}, {len(runs[0][1])} bytes")
    assert runs[0][1] == runs[1][1]
    assert json.loads(runs[0][1])["seed"] == 5
