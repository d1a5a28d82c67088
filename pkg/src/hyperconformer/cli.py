"""Command-line entry point.

Exit status: 0 on success, 1 when a check fails, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .configs import (HEAD_REDUCTION_PCT, HEAD_REDUCTION_TOLERANCE_PP, MODELS, PRESET_WIDTHS, REFERENCE_PARAMS_M,
                      REFERENCE_TOLERANCE, EncoderConfig, count_params, load_config, preset, with_model)
from .errors import ConfigError, UsageError
from .gradcheck import CASES, GRAD_TOLERANCE, run_case
from .verify import run_verify

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, top: bool) -> None:
    default = None if top else argparse.SUPPRESS
    p.add_argument("--config", metavar="FILE", default=default, help="key = value file overriding the preset")
    p.add_argument("--seed", type=int, default=0 if top else argparse.SUPPRESS)
    p.add_argument("--json", action="store_true", default=False if top else argparse.SUPPRESS,
                   help="print one JSON object instead of text")


def _csv_list(kind):
    def parse(text: str):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hyperconformer", description=__doc__.splitlines()[0])
    _common(parser, True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("bench-scaling", help="forward time and peak memory against input length")
    p.add_argument("--preset", default="small")
    p.add_argument("--models", type=_csv_list(str), default=["conformer", "hyperconformer"])
    p.add_argument("--lengths", type=_csv_list(float), default=list(harness.DEFAULT_LENGTHS))
    p.add_argument("--repeats", type=int, default=harness.DEFAULT_REPEATS)
    p.add_argument("--warmup", type=int, default=harness.DEFAULT_WARMUP)
    p.add_argument("--out", default="bench")

    p = sub.add_parser("bench-heads", help="HyperConformer with 1 and 8 heads")
    p.add_argument("--preset", default="small")
    p.add_argument("--lengths", type=_csv_list(float), default=list(harness.DEFAULT_LENGTHS))
    p.add_argument("--repeats", type=int, default=harness.DEFAULT_REPEATS)
    p.add_argument("--warmup", type=int, default=harness.DEFAULT_WARMUP)
    p.add_argument("--out", default="bench")

    p = sub.add_parser("params", help="parameter count against the reference table")
    p.add_argument("--preset", default="small")
    p.add_argument("--model", default="hyperconformer")
    p.add_argument("--scope", choices=("encoder", "full"), default="full")

    p = sub.add_parser("gradcheck", help="finite-difference check of a named module")
    p.add_argument("--module", required=True)

    p = sub.add_parser("train-toy", help="train a small model on a synthetic task")
    p.add_argument("--task", default="first-token-match")
    p.add_argument("--model", default="hyperconformer")
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--steps", type=int, default=50, help="optimizer steps per epoch")
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--n-min", type=int, default=32)
    p.add_argument("--n-max", type=int, default=64)

    sub.add_parser("verify", help="run every oracle-equivalence suite")

    for p in sub.choices.values():
        _common(p, False)
    return parser


def _check_model(name: str) -> None:
    if name not in MODELS:
        raise ConfigError(f"unknown model {name!r}; valid models: {', '.join(MODELS)}")


def _config(args, model: str) -> EncoderConfig:
    _check_model(model)
    base = preset(getattr(args, "preset", "small"), model)
    if args.config:
        base = with_model(load_config(args.config, base), model)
    return base


def _emit(args, payload: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print("\n".join(lines))


def _summary_rows(records) -> tuple[list, list]:
    summary = harness.summarize(records)
    rows, lines = [], [f"{'model':<22}{'secs':>6}{'frames':>8}{'median_s':>10}{'peak_MiB':>10}{'GFLOP':>9}"]
    for (model, secs), s in summary.items():
        rows.append({"model": model, "seq_seconds": secs, **s})
        lines.append(f"{model:<22}{secs:>6g}{s['n_frames']:>8}{s['duration_seconds']:>10.3f}"
                     f"{s['peak_bytes'] / 2**20:>10.1f}{s['flops'] / 1e9:>9.2f}")
    return rows, lines


def _out_base(directory: str, name: str) -> Path:
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path / name


def cmd_bench_scaling(args) -> int:
    for m in args.models:
        _check_model(m)
    if not args.models:
        raise UsageError("--models needs at least one model")
    models = {m: _config(args, m) for m in args.models}
    records = harness.run_scaling_bench(models, args.lengths, args.repeats, args.warmup, args.seed)
    csv_path, svg_path = harness.emit_report(records, _out_base(args.out, f"scaling-{args.preset}"),
                                             f"{args.preset} preset")
    rows, lines = _summary_rows(records)
    lines += [f"wrote {csv_path} and {svg_path}"]
    _emit(args, {"command": "bench-scaling", "summary": rows, "csv": str(csv_path), "svg": str(svg_path)}, lines)
    return EXIT_OK


def cmd_bench_heads(args) -> int:
    base = _config(args, "hyperconformer")
    counts = {k: count_params(replace(base, k=k), "full") for k in (1, 8)}
    reduction = 100.0 * (counts[1] - counts[8]) / counts[1]
    records = harness.run_head_bench(args.preset, (1, 8), args.lengths, args.repeats, args.warmup, args.seed,
                                     base=base)
    csv_path, svg_path = harness.emit_report(records, _out_base(args.out, f"heads-{args.preset}"),
                                             f"{args.preset} preset, 1 vs 8 heads")
    rows, lines = _summary_rows(records)
    target = HEAD_REDUCTION_PCT.get(args.preset)
    lines = [f"params k=1: {counts[1]}", f"params k=8: {counts[8]}",
             f"reduction: {reduction:.2f}% (reference {target}% +/- {HEAD_REDUCTION_TOLERANCE_PP} pp)"] + lines
    lines += [f"wrote {csv_path} and {svg_path}"]
    _emit(args, {"command": "bench-heads", "params": {str(k): v for k, v in counts.items()},
                 "reduction_pct": reduction, "summary": rows, "csv": str(csv_path), "svg": str(svg_path)}, lines)
    return EXIT_OK


def cmd_params(args) -> int:
    if args.preset not in PRESET_WIDTHS:
        raise ConfigError(f"unknown preset {args.preset!r}; valid presets: {', '.join(PRESET_WIDTHS)}")
    cfg = _config(args, args.model)
    count = count_params(cfg, args.scope)
    target_m = REFERENCE_PARAMS_M.get((args.model, args.preset)) if args.scope == "full" else None
    payload = {"command": "params", "model": args.model, "preset": args.preset, "scope": args.scope,
               "count": count, "target": None, "passed": None}
    lines = [f"{args.model} ({args.preset}, {args.scope}): {count} parameters ({count / 1e6:.2f}M)"]
    status = EXIT_OK
    if target_m is None:
        lines.append("target: none (reference counts cover full models only)")
    else:
        ok = abs(count / 1e6 - target_m) <= REFERENCE_TOLERANCE * target_m
        payload.update(target=target_m * 1e6, passed=ok)
        lines.append(f"target: {target_m}M +/- {REFERENCE_TOLERANCE:.0%}")
        lines.append("PASS" if ok else "FAIL")
        status = EXIT_OK if ok else EXIT_FAIL
    _emit(args, payload, lines)
    return status


def cmd_gradcheck(args) -> int:
    if args.module not in CASES:
        raise UsageError(f"unknown module {args.module!r}; valid modules: {', '.join(CASES)}")
    err = run_case(args.module, args.seed)
    ok = err < GRAD_TOLERANCE
    _emit(args, {"command": "gradcheck", "module": args.module, "seed": args.seed, "max_relative_error": err,
                 "passed": ok},
          [f"{args.module} seed {args.seed}: max relative error {err:.3e}", "PASS" if ok else "FAIL"])
    return EXIT_OK if ok else EXIT_FAIL


def cmd_train_toy(args) -> int:
    _check_model(args.model)
    task = harness.ToyTask(args.task, args.n_min, args.n_max, seed=args.seed)
    cfg = harness.toy_config(args.model)
    if args.config:
        cfg = with_model(load_config(args.config, cfg), args.model)
    res = harness.train_toy(task, cfg, epochs=args.epochs, steps_per_epoch=args.steps, lr=args.lr, seed=args.seed)
    lines = [f"{args.model} on {args.task}: initial frame accuracy {res.initial_accuracy:.3f}"]
    lines += [f"epoch {i + 1}: accuracy {a:.3f}" for i, a in enumerate(res.accuracy)]
    _emit(args, {"command": "train-toy", "task": args.task, "model": args.model, "seed": args.seed,
                 "initial_accuracy": res.initial_accuracy, "accuracy": res.accuracy,
                 "final_loss": res.losses[-1] if res.losses else None}, lines)
    return EXIT_OK


def cmd_verify(args) -> int:
    report = run_verify(args.seed)
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        for name, r in report["suites"].items():
            print(f"{'PASS' if r['passed'] else 'FAIL'} {name}: {r['metric']:.3e} (tolerance {r['tolerance']:g})")
    return EXIT_OK if report["passed"] else EXIT_FAIL


COMMANDS = {
    "bench-scaling": cmd_bench_scaling,
    "bench-heads": cmd_bench_heads,
    "params": cmd_params,
    "gradcheck": cmd_gradcheck,
    "train-toy": cmd_train_toy,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing command; choose one of: {', '.join(COMMANDS)}")
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except AssertionError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
