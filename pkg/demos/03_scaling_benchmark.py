"""Forward time and memory of Conformer vs HyperConformer against input length.

A reduced version of the full benchmark (3 lengths, 3 repeats); pass
``--full`` for the standard 6-30 s sweep with 5 repeats. Results land in
``bench/`` as CSV plus an SVG chart.
"""

import sys
from pathlib import Path

from hyperconformer.harness import emit_report, loglog_slope, run_scaling_bench, speedup, summarize

full = "--full" in sys.argv
lengths = (6, 12, 18, 24, 30) if full else (6, 18, 30)
records = run_scaling_bench(("conformer", "hyperconformer"), lengths=lengths, repeats=5 if full else 3,
                            warmup=2 if full else 1)
summary = summarize(records)

for (model, secs), s in summary.items():
    print(f"{model:<15}{secs:>5.0f} s  N={s['n_frames']:<4} {s['duration_seconds']:.3f} s  "
          f"{s['peak_bytes'] / 2**20:7.1f} MiB  {s['flops'] / 1e9:6.2f} GFLOP")

for secs in lengths:
    print(f"HyperConformer saves {speedup(summary, 'hyperconformer', 'conformer', float(secs)):.1%} at {secs} s")

for model in ("conformer", "hyperconformer"):
    n = [summary[(model, float(s))]["n_frames"] for s in lengths]
    f = [summary[(model, float(s))]["flops"] for s in lengths]
    t = [summary[(model, float(s))]["duration_seconds"] for s in lengths]
    print(f"{model}: FLOP slope {loglog_slope(n, f):.3f}, time slope {loglog_slope(n, t):.2f}")

Path("bench").mkdir(exist_ok=True)
print("wrote", *emit_report(records, "bench/scaling-demo", "small preset"))
