# backend/tests/test_enhancement.py

import numpy as np
import pytest

from models import DmoeModel, EnhanceConfig, FeatureConfig, MixSpec, Waveform
from services.corpus import make_noise, mix_at_snr, synth_utterance
from services.enhancement import (
    check_feature_config, compute_spp_track, enhance_utterance, enhance_batch, peak_normalize,
    oracle_enhance, oracle_from_components, oracle_mask
)
from services.corpus import extract_features
from services.evaluation import segmental_snr
from services.mixture import create_dmoe
from utils.exceptions import FeatureConfigMismatchError

NO_PEAK = EnhanceConfig(beta=1.1513, peak_normalize=False)


def constant_model(feature_config, logit_value, seed=0):
    """Model whose experts emit the same SPP for every bin and frame"""
    params = create_dmoe(feature_config.expert_dim, feature_config.gate_dim, feature_config.num_bins,
                         num_experts=2, hidden_sizes=(8,), seed=seed)
    for expert in params.experts:
        expert.layers[-1].weights[:] = 0.0
        expert.layers[-1].bias[:] = logit_value
    return DmoeModel(params, feature_config)


@pytest.fixture
def noisy(rng):
    return Waveform(0.1 * rng.standard_normal(2000), 16000)


def covered(feature_config, num_samples):
    frames = (num_samples - feature_config.frame_len) // feature_config.hop + 1
    return (frames - 1) * feature_config.hop + feature_config.frame_len


class TestEnhanceUtterance:
    def test_full_presence_is_identity(self, small_config, noisy):
        """Test SPP 1 everywhere reproduces the noisy signal"""
        enhanced, track = enhance_utterance(constant_model(small_config, 50.0), noisy, NO_PEAK)
        assert len(enhanced) == len(noisy)
        assert np.all(track == 1.0)
        span = covered(small_config, len(noisy))
        np.testing.assert_allclose(enhanced.samples[:span], noisy.samples[:span], atol=1e-6)

    def test_zero_presence_attenuates_by_beta(self, small_config, noisy):
        """Test SPP 0 everywhere scales the signal by exp(-beta)"""
        enhanced, _ = enhance_utterance(constant_model(small_config, -50.0), noisy, NO_PEAK)
        span = covered(small_config, len(noisy))
        np.testing.assert_allclose(enhanced.samples[:span], np.exp(-1.1513) * noisy.samples[:span], atol=1e-6)

    def test_track_shape_and_range(self, small_config, noisy):
        model = DmoeModel(create_dmoe(small_config.expert_dim, small_config.gate_dim, small_config.num_bins,
                                      hidden_sizes=(8,), seed=3), small_config)
        _, track = enhance_utterance(model, noisy)
        assert track.shape == ((2000 - 128) // 64 + 1, 65)
        assert np.all((track >= 0) & (track <= 1))

    def test_feature_config_mismatch(self, small_config, noisy):
        """Test a pipeline configured differently from the model is refused"""
        model = constant_model(small_config, 0.0)
        other = FeatureConfig(**{**small_config.to_dict(), 'context': 2})
        with pytest.raises(FeatureConfigMismatchError) as info:
            enhance_utterance(model, noisy, NO_PEAK, other)
        assert info.value.field_name == 'context'
        check_feature_config(small_config, FeatureConfig(**small_config.to_dict()))

    def test_shared_gate_input(self, small_config, noisy):
        params = create_dmoe(small_config.expert_dim, small_config.expert_dim, small_config.num_bins,
                             hidden_sizes=(8,), seed=2)
        model = DmoeModel(params, small_config, shared_gate_input=True)
        features = extract_features(noisy, small_config)
        track = compute_spp_track(model, features.expert_input, features.gate_input)
        assert track.shape == (features.num_frames, small_config.num_bins)

    def test_batch_keeps_order(self, small_config, rng):
        model = constant_model(small_config, -50.0)
        waves = [Waveform(0.1 * rng.standard_normal(n), 16000) for n in (1000, 1500, 2000)]
        results = enhance_batch(model, waves, NO_PEAK, threads=2)
        assert [len(w) for w, _ in results] == [1000, 1500, 2000]


class TestPeakNormalize:
    def test_only_scales_when_clipping(self):
        quiet = Waveform(np.array([0.5, -1.0, 0.25]), 16000)
        assert peak_normalize(quiet) is quiet
        loud = peak_normalize(Waveform(np.array([2.0, -4.0]), 16000))
        np.testing.assert_allclose(loud.samples, [0.5, -1.0])


class TestOracle:
    def test_zero_beta_is_identity(self, small_config, rng):
        clean = Waveform(0.1 * rng.standard_normal(2000), 16000)
        scaled_noise = Waveform(0.1 * rng.standard_normal(2000), 16000)
        enhanced = oracle_from_components(clean, scaled_noise, EnhanceConfig(0.0, False), small_config)
        noisy = clean.samples + scaled_noise.samples
        span = covered(small_config, 2000)
        np.testing.assert_allclose(enhanced.samples[:span], noisy[:span], atol=1e-6)

    def test_mask_matches_labels(self, small_config, rng):
        clean = Waveform(rng.standard_normal(1000), 16000)
        scaled_noise = Waveform(0.01 * rng.standard_normal(1000), 16000)
        mask = oracle_mask(clean, scaled_noise, small_config)
        assert mask.mean() > 0.9

    def test_oracle_beats_noisy_at_zero_db(self):
        """Test the true mask improves segmental SNR on a 0 dB white-noise mixture"""
        cfg = FeatureConfig()
        clean = synth_utterance(8).clean
        noise = make_noise('white', len(clean), clean.sample_rate, seed=2)
        spec = MixSpec(0.0, 'white', 3)
        noisy, _ = mix_at_snr(clean, noise, spec.snr_db, spec.seed)
        enhanced = oracle_enhance(clean, noise, spec, NO_PEAK, cfg)
        assert segmental_snr(clean, enhanced) > segmental_snr(clean, noisy)

    def test_high_snr_oracle(self):
        clean = synth_utterance(9).clean
        noise = make_noise('white', len(clean), clean.sample_rate, seed=4)
        enhanced = oracle_enhance(clean, noise, MixSpec(200.0, 'white', 1), NO_PEAK, FeatureConfig())
        assert segmental_snr(clean, enhanced) > 30.0
