import math

import numpy as np
import pytest

from hyperconformer import harness
from hyperconformer.configs import EncoderConfig, flop_model
from hyperconformer.conformer import subsampled_length
from hyperconformer.errors import ConfigError, DivergenceError, UsageError
from hyperconformer.harness import (CSV_COLUMNS, Adam, BenchRecord, ToyTask, emit_report, frame_accuracy,
                                    init_toy_model, joint_loss, loglog_slope, make_batch, read_csv,
                                    run_head_bench, run_scaling_bench, summarize, toy_config, train_toy, warmup_lr)
from hyperconformer.tensor import Tensor, parameter, parameters


def fake_records(models=("a", "b"), lengths=(6, 12, 18, 24, 30), repeats=3):
    out = []
    for m in models:
        for s in lengths:
            for r in range(repeats):
                out.append(BenchRecord(m, "hypermixer", 8, 144, float(s), subsampled_length(100 * s), r,
                                       0.1 * s + 0.01 * r + (0.5 if m == "b" else 0.0), 1000 * s, 10**6 * s))
    return out


def tiny_models():
    base = dict(d_model=8, n_layers=1, k=2, d_ffn=16, d_prime=8, kernel=3, n_mels=16, vocab=4)
    return {"conformer": EncoderConfig(gi_kind="mhsa", **base),
            "hyperconformer": EncoderConfig(gi_kind="hypermixer", **base)}


class TestReport:
    def test_row_count_and_header(self, tmp_path):
        csv_path, svg_path = emit_report(fake_records(), tmp_path / "bench")
        raw = csv_path.read_bytes()
        assert b"\r" not in raw
        lines = raw.decode().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 31
        assert svg_path.suffix == ".svg" and svg_path.read_text().lstrip().startswith("<?xml")
        assert svg_path.stem == csv_path.stem

    def test_round_trip(self, tmp_path):
        records = fake_records()
        csv_path, _ = emit_report(records, tmp_path / "bench.csv")
        assert read_csv(csv_path) == records

    def test_empty_writes_nothing(self, tmp_path):
        with pytest.raises(UsageError):
            emit_report([], tmp_path / "bench")
        assert list(tmp_path.iterdir()) == []

    def test_write_failure_names_path(self, tmp_path):
        target = tmp_path / "missing" / "bench"
        with pytest.raises(OSError, match="missing"):
            emit_report(fake_records(), target)


class TestSummaries:
    def test_medians(self):
        s = summarize(fake_records())
        assert s[("a", 6.0)]["duration_seconds"] == pytest.approx(0.61)
        assert s[("b", 30.0)]["repeats"] == 3

    def test_speedup(self):
        s = summarize(fake_records())
        assert harness.speedup(s, "a", "b", 30.0) > 0

    def test_slope(self):
        n = np.array([600, 1200, 1800])
        assert loglog_slope(n, 3.0 * n**2) == pytest.approx(2.0)
        assert loglog_slope(n, 5.0 * n) == pytest.approx(1.0)


class TestBench:
    def test_records(self):
        recs = run_scaling_bench(tiny_models(), lengths=(0.2, 0.4), repeats=2, warmup=1, seed=3)
        assert len(recs) == 2 * 2 * 2
        for r in recs:
            assert r.n_frames == subsampled_length(round(100 * r.seq_seconds))
            assert r.peak_bytes > 0 and r.flops > 0 and r.duration_seconds > 0
            cfg = tiny_models()[r.model]
            assert r.flops == flop_model(cfg, r.n_frames, round(100 * r.seq_seconds))["total"]

    def test_peaks_deterministic(self):
        a = run_scaling_bench(tiny_models(), lengths=(0.3,), repeats=2, warmup=0, seed=1)
        b = run_scaling_bench(tiny_models(), lengths=(0.3,), repeats=2, warmup=0, seed=1)
        assert [(r.peak_bytes, r.flops) for r in a] == [(r.peak_bytes, r.flops) for r in b]

    def test_features_seeded(self):
        assert np.array_equal(harness.bench_features(0.5, seed=2).data, harness.bench_features(0.5, seed=2).data)
        assert harness.bench_features(0.5).shape == (50, 80)

    def test_head_bench(self):
        base = tiny_models()["hyperconformer"]
        recs = run_head_bench(ks=(1, 2), lengths=(0.3,), repeats=1, warmup=0, base=base)
        by_model = {r.model: r for r in recs}
        assert set(by_model) == {"hyperconformer-k1", "hyperconformer-k2"}
        assert by_model["hyperconformer-k2"].flops < by_model["hyperconformer-k1"].flops

    def test_head_param_counts(self):
        counts = harness.head_param_counts("small")
        assert counts[8] < counts[1]


class TestTasks:
    def test_first_token_rule(self):
        task = ToyTask("first-token-match", 10, 20, vocab=3)
        b = make_batch(task, 4, np.random.default_rng(0))
        assert np.array_equal(b.labels, (b.ids == b.ids[:, :1]).astype(int))
        assert np.all(b.labels[:, 0] == 1)

    def test_majority_rule(self):
        task = ToyTask("global-majority", 9, 31)
        b = make_batch(task, 8, np.random.default_rng(1))
        n = b.ids.shape[1]
        assert n % 2 == 1
        for ids, labels in zip(b.ids, b.labels):
            assert np.all(labels == int(ids.sum() * 2 > n))

    def test_ctc_strings_rule(self):
        from hyperconformer.ctc import collapse

        task = ToyTask("ctc-strings", 12, 20, vocab=3)
        b = make_batch(task, 6, np.random.default_rng(2))
        for ids, target in zip(b.ids, b.targets):
            assert collapse(ids.tolist()) == target
        assert np.array_equal(b.ids, b.labels)

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            ToyTask("copy")

    def test_toy_width_limit(self):
        with pytest.raises(ConfigError):
            init_toy_model(ToyTask(), toy_config(d_model=128))


class TestTraining:
    def test_warmup_schedule(self):
        assert warmup_lr(5, 1.0, 10) == pytest.approx(0.5)
        assert warmup_lr(10, 1.0, 10) == pytest.approx(1.0)
        assert warmup_lr(40, 1.0, 10) == pytest.approx(0.5)

    def test_joint_loss(self):
        out = joint_loss(Tensor(2.0), Tensor(10.0))
        assert out.item() == pytest.approx(0.3 * 2.0 + 0.7 * 10.0)

    def test_adam_first_step(self):
        p = parameter(np.array([1.0, -2.0]))
        p.grad = np.array([0.5, -4.0])
        Adam([p], lr=0.1).step()
        # bias-corrected first step moves each coordinate by lr * sign(grad)
        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-8)

    def test_lr_zero_changes_nothing(self):
        task = ToyTask("first-token-match", 8, 12)
        cfg = toy_config("hyperconformer", d_model=8, n_layers=1, k=2, kernel=3)
        init = init_toy_model(task, cfg, seed=4)
        res = train_toy(task, cfg, epochs=2, steps_per_epoch=3, batch_size=4, lr=0.0, seed=4)
        for a, b in zip(parameters(init), parameters(res.model)):
            assert np.array_equal(a.data, b.data)
        assert res.accuracy == [res.initial_accuracy] * 2

    def test_reproducible(self):
        task = ToyTask("ctc-strings", 10, 14, vocab=3)
        cfg = toy_config("conformer", d_model=8, n_layers=1, k=2, kernel=3)
        a = train_toy(task, cfg, epochs=1, steps_per_epoch=3, batch_size=3, seed=1)
        b = train_toy(task, cfg, epochs=1, steps_per_epoch=3, batch_size=3, seed=1)
        assert a.losses == b.losses and a.accuracy == b.accuracy

    def test_divergence_reports_step(self, monkeypatch):
        real = harness.toy_loss
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            loss = real(*args, **kwargs)
            return Tensor(math.nan) if calls["n"] == 3 else loss

        monkeypatch.setattr(harness, "toy_loss", flaky)
        task = ToyTask("first-token-match", 8, 10)
        with pytest.raises(DivergenceError, match="step 3"):
            train_toy(task, toy_config(d_model=8, n_layers=1, k=2, kernel=3), epochs=1, steps_per_epoch=5,
                      batch_size=2)

    def test_learns_quickly_with_global_mixing(self):
        task = ToyTask("first-token-match", 16, 24)
        res = train_toy(task, toy_config("hyperconformer", d_model=16, n_layers=1, k=2, kernel=3), epochs=3,
                        steps_per_epoch=30, batch_size=8)
        assert res.accuracy[-1] > res.initial_accuracy
        assert res.losses[-1] < res.losses[0]

    @pytest.mark.slow
    @pytest.mark.parametrize("model", ["hyperconformer", "conformer"])
    def test_global_majority_learned(self, model):
        task = ToyTask("global-majority", n_min=32, n_max=64, vocab=2, seed=0)
        res = train_toy(task, toy_config(model), epochs=6, steps_per_epoch=50)
        assert res.accuracy[-1] >= 0.95

    def test_frame_accuracy_bounds(self):
        task = ToyTask("global-majority", 9, 11)
        model = init_toy_model(task, toy_config(d_model=8, n_layers=1, k=2, kernel=3))
        acc = frame_accuracy(model, [make_batch(task, 4, np.random.default_rng(0))])
        assert 0.0 <= acc <= 1.0
