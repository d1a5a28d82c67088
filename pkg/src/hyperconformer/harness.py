"""Desk-scale efficiency benchmarks, reports and toy training.

Benchmarks feed seeded random ``(100 * seconds) x 80`` feature matrices
through whole encoders, one sequence at a time, and record wall time,
engine-counted peak payload bytes and FLOPs per repeat. Forwards run with an
active tape so activations stay live as they would during training; peak
bytes therefore mirror training memory, not inference memory.

Toy training replaces speech with synthetic labelling tasks whose labels
follow a fixed rule, which is enough to show whether a model can move
information across the whole sequence.
"""

from __future__ import annotations

import csv
import gc
import math
import statistics
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import ops
from .configs import EncoderConfig, count_params, preset
from .conformer import conformer_block, encoder_forward, init_block, init_encoder, init_global_interaction, subsampled_length
from .ctc import ctc_loss
from .errors import ConfigError, DivergenceError, UsageError
from .positions import positions as position_table
from .tensor import Tape, Tensor, backward, measure, parameter, parameters

FRAMES_PER_SECOND = 100
DEFAULT_LENGTHS = (6, 12, 18, 24, 30)
DEFAULT_REPEATS = 5
DEFAULT_WARMUP = 2
CTC_WEIGHT = 0.3

CSV_COLUMNS = ("model", "gi_kind", "heads", "d_model", "seq_seconds", "n_frames",
               "repeat", "duration_seconds", "peak_bytes", "flops")


@dataclass(frozen=True)
class BenchRecord:
    model: str
    gi_kind: str
    heads: int
    d_model: int
    seq_seconds: float
    n_frames: int
    repeat: int
    duration_seconds: float
    peak_bytes: int
    flops: int


def input_frames(seconds: float) -> int:
    return int(round(FRAMES_PER_SECOND * seconds))


def bench_features(seconds: float, n_mels: int = 80, seed: int = 0) -> Tensor:
    """Seeded stand-in for a filterbank matrix of the given duration."""
    rng = np.random.default_rng([seed, input_frames(seconds)])
    return Tensor(rng.standard_normal((input_frames(seconds), n_mels)))


def _forward_training_mode(features, enc):
    with Tape():
        out = encoder_forward(features, enc)
    return out.shape


def _forward_inference(features, enc):
    return encoder_forward(features, enc).shape


def _bench(models: dict, lengths, repeats, warmup, seed, record) -> list[BenchRecord]:
    encoders = {name: init_encoder(cfg, np.random.default_rng(seed)) for name, cfg in models.items()}
    run = _forward_training_mode if record else _forward_inference
    records = []
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for seconds in lengths:
            x = bench_features(seconds, next(iter(models.values())).n_mels, seed)
            n = subsampled_length(x.shape[0])
            for r in range(warmup + repeats):
                # interleave models so slow drift hits all of them alike
                for name, cfg in models.items():
                    _, st = measure(run, x, encoders[name])
                    if r < warmup:
                        continue
                    records.append(BenchRecord(
                        model=name, gi_kind=cfg.gi_kind, heads=cfg.k, d_model=cfg.d_model,
                        seq_seconds=float(seconds), n_frames=n, repeat=r - warmup,
                        duration_seconds=st.duration_seconds, peak_bytes=st.peak_bytes, flops=st.flops,
                    ))
            gc.collect()
    finally:
        if was_enabled:
            gc.enable()
    return records


def run_scaling_bench(
    models: dict | Sequence[str] = ("conformer", "hyperconformer"),
    lengths: Iterable[float] = DEFAULT_LENGTHS,
    repeats: int = DEFAULT_REPEATS,
    warmup: int = DEFAULT_WARMUP,
    seed: int = 0,
    preset_name: str = "small",
    record: bool = True,
) -> list[BenchRecord]:
    """Encoder forward cost per model and input duration.

    ``models`` maps names to configs, or lists model names of ``preset_name``.
    Warmup runs are executed and discarded. With ``record`` the forward runs
    under a tape (training-mode memory).
    """
    if not isinstance(models, dict):
        models = {m: preset(preset_name, m) for m in models}
    return _bench(models, list(lengths), repeats, warmup, seed, record)


def run_head_bench(
    preset_name: str = "small",
    ks: Sequence[int] = (1, 8),
    lengths: Iterable[float] = DEFAULT_LENGTHS,
    repeats: int = DEFAULT_REPEATS,
    warmup: int = DEFAULT_WARMUP,
    seed: int = 0,
    record: bool = True,
    base: EncoderConfig | None = None,
) -> list[BenchRecord]:
    """HyperConformer with different head counts, identical seeds."""
    base = base or preset(preset_name, "hyperconformer")
    models = {f"hyperconformer-k{k}": replace(base, k=k) for k in ks}
    return _bench(models, list(lengths), repeats, warmup, seed, record)


def head_param_counts(preset_name: str = "small", ks: Sequence[int] = (1, 8), scope: str = "full") -> dict:
    base = preset(preset_name, "hyperconformer")
    return {k: count_params(replace(base, k=k), scope) for k in ks}


# -- summaries ---------------------------------------------------------------


def summarize(records: Iterable[BenchRecord]) -> dict:
    """Medians per ``(model, seq_seconds)``."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.model, rec.seq_seconds), []).append(rec)
    out = {}
    for key, recs in groups.items():
        out[key] = {
            "duration_seconds": statistics.median(r.duration_seconds for r in recs),
            "peak_bytes": statistics.median(r.peak_bytes for r in recs),
            "flops": statistics.median(r.flops for r in recs),
            "n_frames": recs[0].n_frames,
            "repeats": len(recs),
        }
    return out


def speedup(summary: dict, fast: str, slow: str, seconds: float) -> float:
    """Relative time saved by ``fast`` over ``slow``: ``1 - t_fast / t_slow``."""
    return 1.0 - summary[(fast, seconds)]["duration_seconds"] / summary[(slow, seconds)]["duration_seconds"]


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


# -- reports -----------------------------------------------------------------


def write_csv(records: Sequence[BenchRecord], path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for rec in records:
                row = asdict(rec)
                writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
    return path


def read_csv(path) -> list[BenchRecord]:
    types = {f.name: f.type for f in fields(BenchRecord)}
    casts = {"str": str, "int": int, "float": float}
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(BenchRecord(**{k: casts[types[k]](row[k]) for k in CSV_COLUMNS}))
    return out


def write_svg(records: Sequence[BenchRecord], path, title: str = "") -> Path:
    """Median time per model against input length; peak bytes as markers on a second axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    summary = summarize(records)
    models = list(dict.fromkeys(r.model for r in records))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax2 = ax.twinx()
    for i, model in enumerate(models):
        secs = sorted(s for (m, s) in summary if m == model)
        color = f"C{i}"
        ax.plot(secs, [summary[(model, s)]["duration_seconds"] for s in secs], "-", color=color, label=model)
        ax2.plot(secs, [summary[(model, s)]["peak_bytes"] / 2**20 for s in secs], "o", color=color)
    ax.set_xlabel("input length [s]")
    ax.set_ylabel("median forward time [s] (lines)")
    ax2.set_ylabel("peak payload [MiB] (markers)")
    ax.legend(loc="upper left")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg")
    except OSError as exc:
        raise OSError(f"cannot write chart {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def emit_report(records: Sequence[BenchRecord], out_base, title: str = "") -> tuple[Path, Path]:
    """Write ``<out_base>.csv`` and ``<out_base>.svg``."""
    records = list(records)
    if not records:
        raise UsageError("no benchmark records to report")
    base = Path(out_base)
    if base.suffix in (".csv", ".svg"):
        base = base.with_suffix("")
    return write_csv(records, base.with_suffix(".csv")), write_svg(records, base.with_suffix(".svg"), title)


# -- toy tasks -----------------------------------------------------------------

TASK_KINDS = ("first-token-match", "global-majority", "ctc-strings")


@dataclass(frozen=True)
class ToyTask:
    """A synthetic sequence labelling task.

    * ``first-token-match``: tokens uniform over ``vocab`` ids; frame label is
      1 when the frame's id equals frame 0's id, else 0.
    * ``global-majority``: binary ids; every frame is labelled with the id
      that occurs more often (lengths are odd, per-sequence rates are drawn
      from [0.2, 0.4] or [0.6, 0.8]).
    * ``ctc-strings``: a random string over ``1..vocab`` rendered as frames,
      each symbol held for 1-3 frames with blanks (id 0) in between where
      needed or drawn at random; the CTC target is the string and the frame
      label is the frame's own id.
    """

    kind: str = "first-token-match"
    n_min: int = 32
    n_max: int = 64
    vocab: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task {self.kind!r}; valid tasks: {', '.join(TASK_KINDS)}")
        if not 2 <= self.n_min <= self.n_max:
            raise ConfigError("need 2 <= n_min <= n_max")

    @property
    def input_vocab(self) -> int:
        return self.vocab + 1 if self.kind == "ctc-strings" else self.vocab

    @property
    def n_classes(self) -> int:
        if self.kind == "first-token-match":
            return 2
        return self.vocab + 1 if self.kind == "ctc-strings" else self.vocab


@dataclass
class ToyBatch:
    ids: np.ndarray
    labels: np.ndarray
    targets: list | None = None


def make_batch(task: ToyTask, batch_size: int, rng: np.random.Generator) -> ToyBatch:
    n = int(rng.integers(task.n_min, task.n_max + 1))
    if task.kind == "first-token-match":
        ids = rng.integers(0, task.vocab, size=(batch_size, n))
        return ToyBatch(ids, (ids == ids[:, :1]).astype(np.int64))
    if task.kind == "global-majority":
        n -= 1 - n % 2
        n = max(n, 3)
        lo = rng.uniform(0.2, 0.4, size=(batch_size, 1))
        rate = np.where(rng.random((batch_size, 1)) < 0.5, lo, 1.0 - lo)
        ids = (rng.random((batch_size, n)) < rate).astype(np.int64)
        if task.vocab != 2:
            raise ConfigError("global-majority uses a binary vocabulary")
        major = (ids.sum(axis=1, keepdims=True) * 2 > n).astype(np.int64)
        return ToyBatch(ids, np.broadcast_to(major, ids.shape).copy())
    ids = np.zeros((batch_size, n), dtype=np.int64)
    targets = []
    for b in range(batch_size):
        frames, string, prev = [], [], None
        while True:
            sym = int(rng.integers(1, task.vocab + 1))
            hold = int(rng.integers(1, 4))
            gap = 1 if sym == prev else int(rng.integers(0, 2))
            if len(frames) + gap + hold > n:
                break
            frames += [0] * gap + [sym] * hold
            string.append(sym)
            prev = sym
        frames += [0] * (n - len(frames))
        ids[b] = frames
        targets.append(string)
    return ToyBatch(ids, ids.copy(), targets)


@dataclass
class ToyModel:
    embed: Tensor
    blocks: list
    head_w: Tensor
    head_b: Tensor
    max_len: int


def toy_config(model: str = "hyperconformer", d_model: int = 32, n_layers: int = 2, k: int = 2,
               kernel: int = 7, **overrides) -> EncoderConfig:
    cfg = preset("small", model)
    return replace(cfg, d_model=d_model, n_layers=n_layers, k=k, d_ffn=2 * d_model, d_prime=2 * d_model,
                   kernel=kernel, max_len=1024, **overrides)


def init_toy_model(task: ToyTask, cfg: EncoderConfig, seed: int = 0) -> ToyModel:
    if cfg.d_model > 64 or cfg.n_layers > 2:
        raise ConfigError("toy models are limited to d_model <= 64 and n_layers <= 2")
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    blocks = []
    for _ in range(cfg.n_layers):
        gi = None
        if cfg.gi_kind != "none":
            gi = init_global_interaction(cfg.gi_kind, d, cfg.k, rng, cfg.d_prime, cfg.tied_hypernets,
                                         cfg.tm_norm, cfg.max_len)
        blocks.append(init_block(cfg.block, d, cfg.d_ffn, cfg.kernel, gi, rng))
    return ToyModel(
        embed=parameter(rng.normal(0.0, 1.0, (task.input_vocab, d))),
        blocks=blocks,
        head_w=parameter(rng.normal(0.0, 1.0 / math.sqrt(d), (d, task.n_classes))),
        head_b=parameter(np.zeros(task.n_classes)),
        max_len=cfg.max_len,
    )


def toy_forward(model: ToyModel, ids: np.ndarray, dropout: float = 0.0, rng=None) -> Tensor:
    """Logits ``(B, N, classes)`` for integer ids ``(B, N)``."""
    x = ops.getitem(model.embed, np.asarray(ids))
    x = ops.add(x, position_table(ids.shape[-1], x.shape[-1], model.max_len))
    for block in model.blocks:
        x = conformer_block(x, block, dropout, rng)
    return ops.linear(x, model.head_w, model.head_b)


def frame_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    lp = ops.log_softmax(logits, axis=-1)
    b, n = labels.shape
    picked = ops.getitem(lp, (np.arange(b)[:, None], np.arange(n)[None, :], labels))
    return ops.scale(ops.mean(picked), -1.0)


def joint_loss(ctc: Tensor, aux: Tensor, alpha: float = CTC_WEIGHT) -> Tensor:
    """``alpha * ctc + (1 - alpha) * aux``."""
    return ops.add(ops.scale(ctc, alpha), ops.scale(aux, 1.0 - alpha))


def toy_loss(model: ToyModel, task: ToyTask, batch: ToyBatch, alpha: float = CTC_WEIGHT) -> Tensor:
    logits = toy_forward(model, batch.ids)
    frame = frame_cross_entropy(logits, batch.labels)
    if task.kind != "ctc-strings":
        return frame
    lp = ops.log_softmax(logits, axis=-1)
    per_seq = [ctc_loss(lp[b], tgt) for b, tgt in enumerate(batch.targets)]
    ctc = ops.scale(ops.sum(ops.concat([ops.reshape(c, (1,)) for c in per_seq], axis=0)), 1.0 / len(per_seq))
    return joint_loss(ctc, frame, alpha)


def frame_accuracy(model: ToyModel, batches: Sequence[ToyBatch]) -> float:
    hits = total = 0
    for batch in batches:
        pred = np.argmax(toy_forward(model, batch.ids).data, axis=-1)
        hits += int((pred == batch.labels).sum())
        total += batch.labels.size
    return hits / total


# -- optimisation --------------------------------------------------------------


def warmup_lr(step: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` over ``warmup`` steps, then inverse-square-root decay."""
    if warmup <= 0:
        return peak
    step = max(step, 1)
    return peak * min(step / warmup, math.sqrt(warmup / step))


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.98), eps: float = 1e-9):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if lr == 0.0:
                continue
            p.data.flags.writeable = True
            try:
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            finally:
                p.data.flags.writeable = False


def clip_grad_norm(params, max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))
    if max_norm and total > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * (max_norm / total)
    return total


@dataclass
class TrainResult:
    accuracy: list
    losses: list
    initial_accuracy: float
    steps: int
    model: ToyModel | None = None


def train_toy(
    task: ToyTask,
    cfg: EncoderConfig,
    epochs: int = 8,
    steps_per_epoch: int = 50,
    batch_size: int = 16,
    lr: float = 3e-3,
    warmup: int = 50,
    seed: int = 0,
    alpha: float = CTC_WEIGHT,
    eval_batches: int = 8,
    clip: float = 5.0,
) -> TrainResult:
    """Train a toy model with Adam and a warmup schedule.

    Returns held-out frame accuracy after every epoch. The loss is
    ``alpha * CTC + (1 - alpha) * frame cross-entropy`` for ``ctc-strings``
    and frame cross-entropy otherwise.
    """
    model = init_toy_model(task, cfg, seed)
    params = parameters(model)
    opt = Adam(params, lr)
    data_rng = np.random.default_rng([task.seed, seed, 1])
    eval_rng = np.random.default_rng([task.seed, seed, 2])
    held_out = [make_batch(task, batch_size, eval_rng) for _ in range(eval_batches)]
    initial = frame_accuracy(model, held_out)
    accuracy, losses = [], []
    step = 0
    for _ in range(epochs):
        for _ in range(steps_per_epoch):
            step += 1
            batch = make_batch(task, batch_size, data_rng)
            opt.zero_grad()
            with Tape() as tape:
                loss = toy_loss(model, task, batch, alpha)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(step, value)
            backward(tape, loss)
            del tape, loss
            clip_grad_norm(params, clip)
            opt.step(warmup_lr(step, lr, warmup))
            losses.append(value)
        accuracy.append(frame_accuracy(model, held_out))
    return TrainResult(accuracy, losses, initial, step, model)
