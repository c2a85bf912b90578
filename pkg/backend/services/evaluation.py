# backend/services/evaluation.py
"""Objective metrics: segmental SNR, mask accuracy / AUC and log-spectral distortion."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import structlog
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from models import (
    Waveform, LogSpectrum, MixSpec, EnhanceConfig, EvalConfig, EvalReport, UtteranceScore,
    SynthUtterance, DmoeModel
)
from services.corpus import mix_at_snr, make_noise
from services.enhancement import enhance_utterance, oracle_mask, oracle_from_components
from services.signal_processing import stft, log_spectrum
from utils.exceptions import MetricError, ShapeMismatchError, InvalidValueError, SignalTooShortError
from utils.helpers import derive_seed, worker_count

logger = structlog.get_logger(__name__)


def frame_snrs(reference: Waveform, test: Waveform, cfg: EvalConfig = None):
    """Clamped per-frame SNRs (dB) of the non-silent frames"""
    cfg = cfg or EvalConfig()
    if reference.sample_rate != test.sample_rate:
        raise ShapeMismatchError(
            f"sample rates differ: reference {reference.sample_rate} Hz, test {test.sample_rate} Hz"
        )
    if len(reference) != len(test):
        raise ShapeMismatchError(f"length mismatch: reference {len(reference)}, test {len(test)} samples")
    if len(reference) < cfg.frame_len:
        raise SignalTooShortError(f"segmental SNR needs at least {cfg.frame_len} samples")

    ref_frames = sliding_window_view(reference.samples, cfg.frame_len)[::cfg.hop]
    err_frames = ref_frames - sliding_window_view(test.samples, cfg.frame_len)[::cfg.hop]
    ref_energy = np.sum(ref_frames ** 2, axis=1)
    err_energy = np.sum(err_frames ** 2, axis=1)

    active = ref_energy >= cfg.silence_ratio * np.mean(ref_energy)
    active &= ref_energy > 0.0
    if not np.any(active):
        raise MetricError("segmental SNR is undefined: every reference frame is silent")
    with np.errstate(divide='ignore'):
        snr = 10.0 * np.log10(ref_energy[active] / err_energy[active])
    return np.clip(snr, cfg.min_db, cfg.max_db)


def segmental_snr(reference: Waveform, test: Waveform, cfg: EvalConfig = None):
    """Mean clamped per-frame SNR; directional (reference first)"""
    return float(np.mean(frame_snrs(reference, test, cfg)))


def mask_auc(predicted, truth):
    """Rank-statistic AUC over all bins; 0.5 when one class is absent"""
    scores = np.ravel(predicted)
    positive = np.ravel(truth) == 1.0
    n_pos = int(np.sum(positive))
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    return float((np.sum(ranks[positive]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mask_metrics(predicted, truth):
    """(accuracy with the 0.5 threshold, AUC)"""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ShapeMismatchError(f"predicted {predicted.shape} and truth {truth.shape} are not aligned")
    if predicted.size == 0:
        raise MetricError("mask metrics need at least one bin")
    if not np.all((truth == 0.0) | (truth == 1.0)):
        raise InvalidValueError("truth mask holds values other than 0 and 1")
    if not np.all(np.isfinite(predicted)):
        raise InvalidValueError("predicted SPPs contain NaN or Inf")
    accuracy = float(np.mean((predicted >= 0.5) == (truth == 1.0)))
    return accuracy, mask_auc(predicted, truth)


def log_spectral_distortion(a, b):
    a = a.frames if isinstance(a, LogSpectrum) else np.asarray(a, dtype=np.float64)
    b = b.frames if isinstance(b, LogSpectrum) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"log-spectra shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _log_spec(waveform, feature_config):
    return log_spectrum(stft(waveform, feature_config.frame_len, feature_config.hop, feature_config.window))


def evaluate_mixture(model: DmoeModel, clean: Waveform, noise: Waveform, spec: MixSpec, index=0,
                     enhance_cfg: EnhanceConfig = None, eval_cfg: EvalConfig = None):
    """Model, noisy baseline and oracle scores on one mixture"""
    feature_config = model.feature_config
    enhance_cfg = replace(enhance_cfg or EnhanceConfig(), peak_normalize=False)
    noisy, scaled_noise = mix_at_snr(clean, noise, spec.snr_db, spec.seed)
    enhanced, spp_track = enhance_utterance(model, noisy, enhance_cfg)
    oracle = oracle_from_components(clean, scaled_noise, enhance_cfg, feature_config)
    accuracy, auc = mask_metrics(spp_track, oracle_mask(clean, scaled_noise, feature_config))
    return UtteranceScore(
        index=index,
        ssnr_db=segmental_snr(clean, enhanced, eval_cfg),
        noisy_ssnr_db=segmental_snr(clean, noisy, eval_cfg),
        oracle_ssnr_db=segmental_snr(clean, oracle, eval_cfg),
        mask_accuracy=accuracy,
        mask_auc=auc,
        lsd=log_spectral_distortion(_log_spec(clean, feature_config), _log_spec(enhanced, feature_config)),
    )


def _clean_waveform(item):
    return item.clean if isinstance(item, SynthUtterance) else item


def evaluate_condition(model: DmoeModel, utterances, snr_db, noise_kind='white', noise: Waveform = None,
                       seed=0, enhance_cfg=None, eval_cfg=None, threads=None) -> EvalReport:
    """One (noise kind, SNR) condition over every utterance"""
    cleans = [_clean_waveform(item) for item in utterances]
    if not cleans:
        raise MetricError("evaluation needs at least one utterance")

    def score(index):
        clean = cleans[index]
        source = noise if noise is not None else make_noise(
            noise_kind, len(clean), clean.sample_rate, derive_seed(seed, 'eval-noise', noise_kind, index))
        spec = MixSpec(snr_db, noise_kind, derive_seed(seed, 'eval-mix', noise_kind, snr_db, index))
        return evaluate_mixture(model, clean, source, spec, index, enhance_cfg, eval_cfg)

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        scores = list(pool.map(score, range(len(cleans))))

    def mean(name):
        return float(np.mean([getattr(s, name) for s in scores]))

    report = EvalReport(
        snr_db=float(snr_db), noise_kind=noise_kind,
        ssnr_db=mean('ssnr_db'), noisy_ssnr_db=mean('noisy_ssnr_db'), oracle_ssnr_db=mean('oracle_ssnr_db'),
        mask_accuracy=mean('mask_accuracy'), mask_auc=mean('mask_auc'), lsd=mean('lsd'),
        utterances=scores,
    )
    logger.info("condition_evaluated", snr_db=snr_db, noise_kind=noise_kind, utterances=len(scores),
                ssnr_db=report.ssnr_db, noisy_ssnr_db=report.noisy_ssnr_db, mask_accuracy=report.mask_accuracy)
    return report


def evaluate_model(model: DmoeModel, utterances, snr_list=(-5.0, 0.0, 5.0, 10.0, 15.0), noise_kinds=('white',),
                   noise: Waveform = None, seed=0, enhance_cfg=None, eval_cfg=None, threads=None):
    """One EvalReport per (noise kind, SNR); a noise recording overrides the generators"""
    kinds = ['file'] if noise is not None else list(noise_kinds)
    return [
        evaluate_condition(model, utterances, snr_db, kind, noise, seed, enhance_cfg, eval_cfg, threads)
        for kind in kinds
        for snr_db in snr_list
    ]
