# backend/tests/test_analysis.py
from dataclasses import replace

import numpy as np
import pytest

from models import DmoeModel, FeatureSet, Regime, SweepRow, TrainingConfig
from services.analysis import (
    EXTRA_EXPERT_TOLERANCE, gating_stats, expert_probe, band_profile, predict_spp, expert_sweep, sweep_summary
)
from services.evaluation import evaluate_condition
from services.mixture import create_dmoe, final_spp, gate_dist, train
from utils.exceptions import ConfigurationError, MissingRegimeTagsError


@pytest.fixture
def symmetric_model(synthetic_features):
    params = create_dmoe(synthetic_features.expert_dim, synthetic_features.gate_dim,
                         synthetic_features.num_bins, num_experts=2, hidden_sizes=(8,), seed=1)
    return params


class TestGatingStats:
    def test_uniform_gate(self, symmetric_model, synthetic_features):
        """Test an untrained symmetric gate routes evenly with maximal entropy"""
        stats = gating_stats(symmetric_model, synthetic_features)
        assert stats.regimes == [int(Regime.VOICED), int(Regime.UNVOICED)]
        assert sum(stats.frame_counts) == len(synthetic_features)
        np.testing.assert_allclose(stats.mean_gate, 0.5, atol=1e-12)
        assert stats.routing_entropy == pytest.approx(np.log(2.0), abs=1e-9)
        assert stats.mean_frame_entropy == pytest.approx(np.log(2.0), abs=1e-9)

    def test_rows_are_distributions(self, synthetic_features):
        params = create_dmoe(synthetic_features.expert_dim, synthetic_features.gate_dim,
                             synthetic_features.num_bins, num_experts=3, hidden_sizes=(8,), seed=2,
                             symmetric_gate=False)
        stats = gating_stats(DmoeModel(params), synthetic_features)
        np.testing.assert_allclose(stats.mean_gate.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(stats.hard_fraction.sum(axis=1), 1.0, atol=1e-12)
        assert len(stats.majority_experts()) == 2

    def test_single_expert(self, synthetic_features):
        params = create_dmoe(synthetic_features.expert_dim, synthetic_features.gate_dim,
                             synthetic_features.num_bins, num_experts=1, hidden_sizes=(8,))
        stats = gating_stats(params, synthetic_features)
        np.testing.assert_array_equal(stats.mean_gate, np.ones((2, 1)))
        assert stats.routing_entropy == 0.0

    def test_shared_gate_input_routes_on_expert_features(self, synthetic_features):
        """Test a shared-input model gates on the stacked expert features"""
        params = create_dmoe(synthetic_features.expert_dim, synthetic_features.expert_dim,
                             synthetic_features.num_bins, num_experts=2, hidden_sizes=(8,), seed=4,
                             symmetric_gate=False)
        stats = gating_stats(DmoeModel(params, shared_gate_input=True), synthetic_features)
        gates = gate_dist(params, synthetic_features.expert_inputs)
        for index, regime in enumerate(stats.regimes):
            rows = synthetic_features.regime_tags == regime
            np.testing.assert_allclose(stats.mean_gate[index], gates[rows].mean(axis=0), atol=1e-12)

    def test_missing_tags(self, symmetric_model, synthetic_features):
        untagged = FeatureSet(synthetic_features.expert_inputs, synthetic_features.gate_inputs,
                              synthetic_features.labels)
        with pytest.raises(MissingRegimeTagsError):
            gating_stats(symmetric_model, untagged)


class TestExpertProbe:
    def test_single_expert_is_constant(self, synthetic_features):
        """Test with one expert every frame gets the same probe output"""
        params = create_dmoe(synthetic_features.expert_dim, synthetic_features.gate_dim,
                             synthetic_features.num_bins, num_experts=1, hidden_sizes=(8,), seed=3)
        probe = expert_probe(params, synthetic_features)
        np.testing.assert_allclose(probe.spp, np.tile(probe.templates[0], (len(synthetic_features), 1)),
                                   atol=1e-12)

    def test_probe_ignores_expert_inputs(self, synthetic_features, rng):
        """Test shuffling expert inputs leaves the probe unchanged"""
        params = create_dmoe(synthetic_features.expert_dim, synthetic_features.gate_dim,
                             synthetic_features.num_bins, num_experts=2, hidden_sizes=(8,), seed=4,
                             symmetric_gate=False)
        shuffled = FeatureSet(rng.permutation(synthetic_features.expert_inputs), synthetic_features.gate_inputs,
                              synthetic_features.labels, synthetic_features.regime_tags)
        np.testing.assert_array_equal(expert_probe(params, synthetic_features).spp,
                                      expert_probe(params, shuffled).spp)

    def test_probe_equals_final_spp_of_ones(self, synthetic_features):
        params = create_dmoe(synthetic_features.expert_dim, synthetic_features.gate_dim,
                             synthetic_features.num_bins, num_experts=2, hidden_sizes=(8,), seed=5,
                             symmetric_gate=False)
        probe = expert_probe(params, synthetic_features.take(np.arange(5)))
        ones = np.ones((5, synthetic_features.expert_dim))
        expected = final_spp(params, ones, synthetic_features.gate_inputs[:5])
        np.testing.assert_allclose(probe.spp, expected, atol=1e-12)

    def test_band_profile(self, small_config):
        spp = np.zeros((4, small_config.num_bins))
        spp[:2, :16] = 1.0   # bins below 2 kHz at 125 Hz spacing
        profile = band_profile(spp, np.array([0, 0, 1, 1]), small_config)
        assert profile[0] == {'low': 1.0, 'high': 0.0}
        assert profile[1] == {'low': 0.0, 'high': 0.0}
        with pytest.raises(MissingRegimeTagsError):
            band_profile(spp, None, small_config)


class TestExpertSweep:
    def test_rows_per_expert_count(self, synthetic_features, small_config):
        """Test one deterministic row per expert count"""
        cfg = TrainingConfig(hidden_sizes=(8,), epochs=1, batch_size=64, seed=2)
        rows = expert_sweep(synthetic_features, [1, 2], cfg, feature_config=small_config)
        assert [row.num_experts for row in rows] == [1, 2]
        for row in rows:
            assert 0.0 <= row.mask_accuracy <= 1.0
            assert np.isfinite(row.final_mean_log_likelihood)
            assert row.ssnr_db is None
        again = expert_sweep(synthetic_features, [1, 2], cfg, feature_config=small_config, parallel=True, threads=2)
        assert again == rows

    def test_segmental_snr_per_expert_count(self, synthetic_features, synthetic_utterances, small_config):
        """Test each row carries the segmental SNR of its own model on the given utterances"""
        cfg = TrainingConfig(hidden_sizes=(8,), epochs=1, batch_size=64, dropout=0.0, seed=2)
        utterances = synthetic_utterances[:2]
        rows = expert_sweep(synthetic_features, [1, 2], cfg, feature_config=small_config,
                            eval_utterances=utterances, snr_db=5.0, noise_kind='pink')
        for row in rows:
            point_cfg = replace(cfg, num_experts=row.num_experts)
            params, _ = train(synthetic_features, point_cfg)
            model = DmoeModel(params, small_config, point_cfg.to_dict())
            expected = evaluate_condition(model, utterances, 5.0, 'pink', seed=cfg.seed, threads=1).ssnr_db
            assert np.isfinite(row.ssnr_db)
            assert row.ssnr_db == pytest.approx(expected, abs=1e-12)

    def test_summary_records_tolerance(self):
        """Test the summary reports the one-to-two gain and the band check for larger counts"""
        rows = [SweepRow(1, 0.80, 0.8, -1.0), SweepRow(2, 0.90, 0.9, -0.9),
                SweepRow(4, 0.91, 0.9, -0.9), SweepRow(8, 0.85, 0.9, -0.9)]
        summary = sweep_summary(rows)
        assert summary['tolerance'] == EXTRA_EXPERT_TOLERANCE
        assert summary['gain_one_to_two'] == pytest.approx(0.10)
        assert summary['within_tolerance_of_two'] == {'4': True, '8': False}
        assert sweep_summary(rows[:1])['gain_one_to_two'] is None

    def test_predict_spp_shape(self, symmetric_model, synthetic_features):
        spp = predict_spp(symmetric_model, synthetic_features)
        assert spp.shape == (len(synthetic_features), synthetic_features.num_bins)

    def test_invalid_counts(self, synthetic_features):
        with pytest.raises(ConfigurationError):
            expert_sweep(synthetic_features, [0, 2], TrainingConfig(hidden_sizes=(8,), epochs=1))
