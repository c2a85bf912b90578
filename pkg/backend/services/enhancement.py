# backend/services/enhancement.py
"""
Enhancement pipeline: noisy waveform -> features -> mixture SPP -> soft
attenuation of the log-magnitudes -> overlap-add with the noisy phase.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np
import structlog

from models import Waveform, Stft, DmoeModel, EnhanceConfig, FeatureConfig, MixSpec
from services.corpus import extract_features, mix_at_snr
from services.masking import soft_attenuate, hard_mask_apply, max_mask
from services.mixture import final_spp
from services.signal_processing import stft, istft, log_spectrum
from utils.exceptions import FeatureConfigMismatchError
from utils.helpers import chunk_ranges, worker_count

logger = structlog.get_logger(__name__)

SPP_CHUNK = 2048


def check_feature_config(model_config: FeatureConfig, pipeline_config: FeatureConfig):
    for item in fields(FeatureConfig):
        model_value = getattr(model_config, item.name)
        pipeline_value = getattr(pipeline_config, item.name)
        if model_value != pipeline_value:
            raise FeatureConfigMismatchError(item.name, model_value, pipeline_value)


def compute_spp_track(model: DmoeModel, expert_input, gate_input):
    """Final SPP per frame (frames x bins)"""
    if model.shared_gate_input:
        gate_input = expert_input
    track = np.empty((expert_input.shape[0], model.params.num_bins))
    for start, stop in chunk_ranges(expert_input.shape[0], SPP_CHUNK):
        track[start:stop] = final_spp(model.params, expert_input[start:stop], gate_input[start:stop])
    # rounding in the convex combination can leave [0, 1] by an ulp
    return np.clip(track, 0.0, 1.0)


def center_frames(stacked, num_bins, context):
    """Current-frame slice of context-stacked rows"""
    return stacked[:, context * num_bins:(context + 1) * num_bins]


def resynthesize(noisy_stft: Stft, enhanced_log, num_samples):
    """Enhanced log-magnitudes recombined with the noisy phase"""
    enhanced = Stft(np.exp(enhanced_log), noisy_stft.frame_len, noisy_stft.hop, noisy_stft.window,
                    num_samples=num_samples, sample_rate=noisy_stft.sample_rate)
    return istft(enhanced, phase_source=noisy_stft, num_samples=num_samples)


def peak_normalize(waveform: Waveform):
    """Scale to unit peak only when a sample leaves [-1, 1]"""
    peak = float(np.max(np.abs(waveform.samples))) if len(waveform) else 0.0
    if peak <= 1.0:
        return waveform
    return Waveform(waveform.samples / peak, waveform.sample_rate)


def enhance_utterance(model: DmoeModel, noisy: Waveform, cfg: EnhanceConfig = None,
                      feature_config: FeatureConfig = None):
    """Returns (enhanced waveform, SPP track frames x bins)"""
    cfg = cfg or EnhanceConfig()
    feature_config = feature_config or model.feature_config
    check_feature_config(model.feature_config, feature_config)

    features = extract_features(noisy, feature_config)
    spp_track = compute_spp_track(model, features.expert_input, features.gate_input)

    # attenuation works on de-normalized log-magnitudes
    normalized = center_frames(features.expert_input, features.stft.num_bins, feature_config.context)
    raw_log = features.log_stats.invert(normalized)
    enhanced_log = soft_attenuate(raw_log, spp_track, cfg.beta)

    enhanced = resynthesize(features.stft, enhanced_log, len(noisy))
    if cfg.peak_normalize:
        enhanced = peak_normalize(enhanced)
    logger.debug("utterance_enhanced", frames=features.num_frames, mean_spp=float(spp_track.mean()))
    return enhanced, spp_track


def enhance_batch(model: DmoeModel, waveforms, cfg: EnhanceConfig = None, feature_config=None, threads=None):
    """Independent utterances in parallel; output order follows input order"""
    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        return list(pool.map(lambda w: enhance_utterance(model, w, cfg, feature_config), waveforms))


def oracle_mask(clean: Waveform, scaled_noise: Waveform, feature_config: FeatureConfig):
    cfg = feature_config
    speech_log = log_spectrum(stft(clean, cfg.frame_len, cfg.hop, cfg.window)).frames
    noise_log = log_spectrum(stft(scaled_noise, cfg.frame_len, cfg.hop, cfg.window)).frames
    return max_mask(speech_log, noise_log)


def oracle_from_components(clean: Waveform, scaled_noise: Waveform, cfg: EnhanceConfig = None,
                           feature_config: FeatureConfig = None):
    """Attenuation driven by the true binary mask of an already scaled pair"""
    cfg = cfg or EnhanceConfig()
    feature_config = feature_config or FeatureConfig()
    noisy = Waveform(clean.samples + scaled_noise.samples, clean.sample_rate)
    noisy_stft = stft(noisy, feature_config.frame_len, feature_config.hop, feature_config.window)
    mask = oracle_mask(clean, scaled_noise, feature_config)
    enhanced_log = hard_mask_apply(log_spectrum(noisy_stft).frames, mask, cfg.beta)
    enhanced = resynthesize(noisy_stft, enhanced_log, len(noisy))
    return peak_normalize(enhanced) if cfg.peak_normalize else enhanced


def oracle_enhance(clean: Waveform, noise: Waveform, spec: MixSpec, cfg: EnhanceConfig = None,
                   feature_config: FeatureConfig = None):
    _, scaled_noise = mix_at_snr(clean, noise, spec.snr_db, spec.seed)
    return oracle_from_components(clean, scaled_noise, cfg, feature_config)
