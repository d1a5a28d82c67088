from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperconformer.configs import (MODELS, REFERENCE_PARAMS_M, REFERENCE_TOLERANCE, EncoderConfig, count_params,
                                    decoder_param_formula, dump_config, encoder_param_formula, flop_model,
                                    head_reduction, heads_param_formula, instantiated_encoder_params, load_config,
                                    parse_config, preset, with_model)
from hyperconformer.errors import ConfigError


class TestPresets:
    @pytest.mark.parametrize("name,d", [("small", 144), ("medium", 256)])
    def test_fields(self, name, d):
        cfg = preset(name)
        assert (cfg.d_model, cfg.n_layers, cfg.k, cfg.d_ffn, cfg.d_prime) == (d, 10, 8, 4 * d, 4 * d)
        assert (cfg.n_decoder_layers, cfg.vocab, cfg.n_mels) == (4, 5000, 80)

    def test_model_names_round_trip(self):
        for m in MODELS:
            assert preset("small", m).model == m
            assert with_model(preset("small"), m).model == m

    def test_unknown(self):
        with pytest.raises(ConfigError, match="valid models"):
            preset("small", "lstm")
        with pytest.raises(ConfigError):
            preset("huge")

    @pytest.mark.parametrize("bad", [dict(k=5), dict(kernel=4), dict(gi_kind="rnn"), dict(d_prime=20, k=8),
                                     dict(block="transformer", gi_kind="none"), dict(n_mels=4)])
    def test_validation(self, bad):
        with pytest.raises(ConfigError):
            replace(preset("small"), **bad)


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        cfg = preset("medium", "conformer", tied_hypernets=True)
        path = tmp_path / "c.cfg"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    def test_overrides_base(self):
        cfg = parse_config("# comment\nk = 4\ntm_norm = feature  # inline\n", preset("small"))
        assert cfg.k == 4 and cfg.tm_norm == "feature" and cfg.d_model == 144

    @pytest.mark.parametrize("text", ["heads = 4", "k = four", "tied_hypernets = maybe", "k 4"])
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)


class TestParamCounts:
    @settings(max_examples=6, deadline=None)
    @given(st.sampled_from([4, 8, 12]), st.integers(1, 3), st.sampled_from([1, 2, 4]), st.sampled_from([3, 5]),
           st.sampled_from(list(MODELS)), st.booleans())
    def test_closed_form_equals_instantiated(self, d, layers, k, kernel, model, tied):
        cfg = with_model(EncoderConfig(d_model=d, n_layers=layers, k=k, d_ffn=2 * d, d_prime=d, kernel=kernel,
                                       tied_hypernets=tied, n_mels=16, vocab=7), model)
        assert instantiated_encoder_params(cfg) == encoder_param_formula(cfg)

    @pytest.mark.parametrize("name", ["small", "medium"])
    def test_presets_exact(self, name):
        for m in MODELS:
            cfg = preset(name, m)
            assert instantiated_encoder_params(cfg) == encoder_param_formula(cfg)

    def test_full_scope_adds_formulas(self):
        cfg = preset("small", "conformer")
        assert count_params(cfg, "full") == (count_params(cfg, "encoder") + decoder_param_formula(cfg)
                                             + heads_param_formula(cfg))

    def test_decoder_formula(self):
        cfg = EncoderConfig(d_model=4, d_ffn=8, k=1, d_prime=4, n_decoder_layers=2, vocab=3)
        per_layer = 2 * (4 * 16 + 16) + (2 * 4 * 8 + 4 + 8) + 24
        assert decoder_param_formula(cfg) == 2 * per_layer + 8

    @pytest.mark.parametrize("key", sorted(REFERENCE_PARAMS_M))
    def test_table_targets(self, key):
        model, name = key
        target = REFERENCE_PARAMS_M[key] * 1e6
        assert abs(count_params(preset(name, model), "full") - target) <= REFERENCE_TOLERANCE * target

    @pytest.mark.parametrize("name", ["small", "medium"])
    def test_orderings(self, name):
        n = {m: count_params(preset(name, m), "full") for m in MODELS}
        assert n["hyperconformer"] < n["conformer"]
        assert n["hypermixer"] < n["transformer"]

    def test_independent_of_length(self):
        cfg = preset("small")
        assert count_params(cfg) == count_params(replace(cfg, max_len=8192))


class TestHeadReduction:
    def test_identity(self):
        assert head_reduction(preset("small", k=1)) == 0.0

    def test_more_heads_fewer_params(self):
        for name in ("small", "medium"):
            for tied in (False, True):
                assert head_reduction(preset(name, tied_hypernets=tied)) > 0

    def test_needs_hypermixer(self):
        with pytest.raises(ConfigError):
            head_reduction(preset("small", "conformer"))


class TestFlopModel:
    def test_keys_and_total(self):
        out = flop_model(preset("small"), 100)
        parts = ("frontend", "positions", "ffn", "gi", "conv", "residual")
        assert out["total"] == sum(out[p] for p in parts)
        assert 0 < out["tokenmix"] < out["gi"]

    def test_mhsa_quadratic(self):
        cfg = preset("small", "conformer")
        assert flop_model(cfg, 4096)["gi"] / flop_model(cfg, 2048)["gi"] >= 3.5

    def test_tokenmix_over_heads(self):
        one, eight = flop_model(preset("small", k=1), 600), flop_model(preset("small", k=8), 600)
        assert one["tokenmix"] == 8 * eight["tokenmix"]

    def test_inconsistent_input_frames(self):
        with pytest.raises(ConfigError):
            flop_model(preset("small"), 100, input_frames=100)
