# backend/services/corpus.py
"""
Training and evaluation corpora: SNR mixing, context-stacked features with
oracle mask labels, noise generators and the synthetic two-regime corpus.
"""
from concurrent.futures import ThreadPoolExecutor
import json
import os

import numpy as np
import scipy.signal
import structlog
from numpy.lib.stride_tricks import sliding_window_view

from models import (
    Waveform, FeatureSet, FeatureConfig, MixSpec, SynthUtterance, NoiseKind, Regime
)
from services.signal_processing import stft, log_spectrum, mfcc, cmvn_stats, num_frames_for
from services.masking import max_mask
from utils.exceptions import (
    ConfigurationError, CorpusFormatError, MixingError, ShapeMismatchError, SignalTooShortError
)
from utils.helpers import derive_seed, dumps_json, file_sha256, worker_count

logger = structlog.get_logger(__name__)

CORPUS_SCHEMA = 'dmoe-corpus/1'

# Synthetic generator settings
SEGMENT_SECONDS = (0.08, 0.25)
SEGMENTS_PER_UTTERANCE = (4, 8)
F0_RANGE_HZ = (100.0, 250.0)
HARMONIC_CEILING_HZ = 1800.0
HISS_CUTOFF_HZ = 2500.0
FADE_SECONDS = 0.005
BABBLE_TALKERS = 6


def stack_context(frames, context):
    """Concatenate frames t-C..t+C per row, replicating the edge frames"""
    frames = np.asarray(frames, dtype=np.float64)
    if context == 0:
        return frames.copy()
    padded = np.pad(frames, ((context, context), (0, 0)), mode='edge')
    windows = sliding_window_view(padded, 2 * context + 1, axis=0)  # T x D x (2C+1)
    return np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(frames.shape[0], -1)


def mean_power(samples):
    return float(np.mean(np.square(samples)))


def snr_gain(clean_power, noise_power, snr_db):
    """Noise gain giving 10*log10(P_clean / (g^2 * P_noise)) = snr_db"""
    return float(np.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db, seed=0):
    """
    Cut a seeded random segment of `noise`, scale it to `snr_db` against `clean`
    and add. Returns (noisy, scaled_noise).
    """
    if not np.isfinite(snr_db):
        raise MixingError(f"snr_db must be finite, got {snr_db}")
    if clean.sample_rate != noise.sample_rate:
        raise MixingError(f"sample rates differ: clean {clean.sample_rate} Hz, noise {noise.sample_rate} Hz")
    if len(noise) < len(clean):
        raise MixingError(f"noise ({len(noise)} samples) is shorter than clean speech ({len(clean)} samples)")

    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(noise) - len(clean) + 1))
    segment = noise.samples[offset:offset + len(clean)]

    clean_power, noise_power = mean_power(clean.samples), mean_power(segment)
    if clean_power == 0.0:
        raise MixingError("clean signal has zero power")
    if noise_power == 0.0:
        raise MixingError("noise segment has zero power")

    scaled = segment * snr_gain(clean_power, noise_power, snr_db)
    return (Waveform(clean.samples + scaled, clean.sample_rate),
            Waveform(scaled, clean.sample_rate))


class NoisyFeatures:
    """Features of one noisy utterance plus what is needed to undo CMVN and resynthesize"""

    def __init__(self, spectrum, log_spec, expert_input, gate_input, log_stats):
        self.stft = spectrum
        self.log_spectrum = log_spec
        self.expert_input = expert_input
        self.gate_input = gate_input
        self.log_stats = log_stats

    @property
    def num_frames(self):
        return self.stft.num_frames


def extract_features(noisy: Waveform, feature_config: FeatureConfig, context=None) -> NoisyFeatures:
    context = feature_config.context if context is None else int(context)
    cfg = feature_config
    if noisy.sample_rate != cfg.sample_rate:
        raise ConfigurationError(
            f"waveform is {noisy.sample_rate} Hz but the feature configuration expects {cfg.sample_rate} Hz"
        )
    spectrum = stft(noisy, cfg.frame_len, cfg.hop, cfg.window)
    if spectrum.num_frames < 2:
        raise SignalTooShortError(
            f"utterance yields {spectrum.num_frames} frame(s); per-utterance normalization needs 2"
        )
    log_spec = log_spectrum(spectrum)
    cepstra = mfcc(spectrum, cfg.num_filters, cfg.num_ceps, cfg.fmin, cfg.fmax)

    log_stats = cmvn_stats(log_spec.frames)
    expert_input = stack_context(log_stats.apply(log_spec.frames), context)
    gate_input = stack_context(cmvn_stats(cepstra.frames).apply(cepstra.frames), context)
    return NoisyFeatures(spectrum, log_spec, expert_input, gate_input, log_stats)


def frame_regime_tags(sample_tags, num_samples, frame_len, hop):
    """Tag of each STFT frame, read at the frame's center sample"""
    count = num_frames_for(num_samples, frame_len, hop)
    centers = np.arange(count) * hop + frame_len // 2
    return np.asarray(sample_tags, dtype=np.int64)[centers]


def pairs_from_components(clean: Waveform, scaled_noise: Waveform, feature_config: FeatureConfig,
                          context=None, regime_tags=None) -> FeatureSet:
    """Features of clean + scaled_noise with labels from the clean vs noise log-spectra"""
    if len(clean) != len(scaled_noise):
        raise ShapeMismatchError("clean and scaled noise must have equal lengths")
    noisy = Waveform(clean.samples + scaled_noise.samples, clean.sample_rate)
    features = extract_features(noisy, feature_config, context)

    cfg = feature_config
    speech_log = log_spectrum(stft(clean, cfg.frame_len, cfg.hop, cfg.window)).frames
    noise_log = log_spectrum(stft(scaled_noise, cfg.frame_len, cfg.hop, cfg.window)).frames
    labels = max_mask(speech_log, noise_log)

    if regime_tags is not None and len(regime_tags) != features.num_frames:
        raise ShapeMismatchError(
            f"{len(regime_tags)} regime tags for {features.num_frames} frames"
        )
    return FeatureSet(features.expert_input, features.gate_input, labels, regime_tags)


def build_pairs(clean: Waveform, noise: Waveform, spec: MixSpec, feature_config: FeatureConfig,
                context=None, regime_tags=None) -> FeatureSet:
    _, scaled_noise = mix_at_snr(clean, noise, spec.snr_db, spec.seed)
    return pairs_from_components(clean, scaled_noise, feature_config, context, regime_tags)


def _fade(segment, sample_rate):
    length = min(int(FADE_SECONDS * sample_rate), segment.size // 2)
    if length > 0:
        ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, length))
        segment[:length] *= ramp
        segment[-length:] *= ramp[::-1]
    return segment


def _voiced_segment(rng, num_samples, sample_rate):
    f0 = rng.uniform(*F0_RANGE_HZ)
    t = np.arange(num_samples) / sample_rate
    harmonics = np.arange(1, int(HARMONIC_CEILING_HZ // f0) + 1)
    phases = rng.uniform(0.0, 2.0 * np.pi, harmonics.size)
    segment = np.sum(np.sin(2.0 * np.pi * f0 * harmonics[:, None] * t + phases[:, None]) / harmonics[:, None],
                     axis=0)
    return segment / np.sqrt(mean_power(segment))


def _hiss_segment(rng, num_samples, sample_rate):
    sos = scipy.signal.butter(8, HISS_CUTOFF_HZ, btype='highpass', fs=sample_rate, output='sos')
    segment = scipy.signal.sosfilt(sos, rng.standard_normal(num_samples))
    return segment / np.sqrt(mean_power(segment))


def _synth_samples(rng, sample_rate):
    """Alternating voiced-like / unvoiced-like segments and their per-sample regime"""
    count = int(rng.integers(SEGMENTS_PER_UTTERANCE[0], SEGMENTS_PER_UTTERANCE[1] + 1))
    regime = Regime(int(rng.integers(0, 2)))
    pieces, tags = [], []
    for _ in range(count):
        length = int(rng.uniform(*SEGMENT_SECONDS) * sample_rate)
        if regime is Regime.VOICED:
            segment = _voiced_segment(rng, length, sample_rate)
        else:
            segment = _hiss_segment(rng, length, sample_rate)
        level = rng.uniform(0.05, 0.15)
        pieces.append(_fade(segment * level, sample_rate))
        tags.append(np.full(length, int(regime), dtype=np.int64))
        regime = Regime.UNVOICED if regime is Regime.VOICED else Regime.VOICED
    return np.concatenate(pieces), np.concatenate(tags)


def synth_utterance(seed, feature_config: FeatureConfig = None) -> SynthUtterance:
    cfg = feature_config or FeatureConfig()
    samples, sample_tags = _synth_samples(np.random.default_rng(seed), cfg.sample_rate)
    tags = frame_regime_tags(sample_tags, samples.size, cfg.frame_len, cfg.hop)
    return SynthUtterance(Waveform(samples, cfg.sample_rate), tags)


def synth_corpus(num_utterances, seed=0, feature_config: FeatureConfig = None):
    if num_utterances < 1:
        raise ConfigurationError(f"num_utterances must be at least 1, got {num_utterances}")
    return [synth_utterance(derive_seed(seed, 'utterance', index), feature_config)
            for index in range(num_utterances)]


def make_noise(kind, num_samples, sample_rate=16000, seed=0):
    """Unit-power synthetic noise of the given kind"""
    kind = NoiseKind(kind)
    rng = np.random.default_rng(seed)
    if kind is NoiseKind.WHITE:
        noise = rng.standard_normal(num_samples)
    elif kind is NoiseKind.PINK:
        spectrum = np.fft.rfft(rng.standard_normal(num_samples))
        freqs = np.fft.rfftfreq(num_samples, d=1.0 / sample_rate)
        freqs[0] = freqs[1] if freqs.size > 1 else 1.0
        noise = np.fft.irfft(spectrum / np.sqrt(freqs), n=num_samples)
    elif kind is NoiseKind.SPEECH_SHAPED:
        sos = scipy.signal.butter(2, [100.0, 1000.0], btype='bandpass', fs=sample_rate, output='sos')
        noise = scipy.signal.sosfilt(sos, rng.standard_normal(num_samples)) + \
            0.1 * rng.standard_normal(num_samples)
    elif kind is NoiseKind.BABBLE:
        noise = np.zeros(num_samples)
        for talker in range(BABBLE_TALKERS):
            talker_rng = np.random.default_rng(derive_seed(seed, 'babble', talker))
            samples = np.zeros(0)
            while samples.size < num_samples:
                samples = np.concatenate([samples, _synth_samples(talker_rng, sample_rate)[0]])
            noise += samples[:num_samples]
    else:
        raise ConfigurationError("noise kind 'file' needs a noise recording, not a generator")
    return Waveform(noise / np.sqrt(mean_power(noise)), sample_rate)


def split_holdout(features: FeatureSet, fraction, seed=0):
    """Split whole utterances into (train, held-out); at least one of each when fraction > 0"""
    if not 0.0 <= fraction < 1.0:
        raise ConfigurationError(f"holdout fraction must be in [0, 1), got {fraction}")
    count = features.num_utterances
    held = int(round(fraction * count))
    if fraction > 0.0:
        held = min(max(held, 1), count - 1)
    if held <= 0:
        return features, None
    order = np.random.default_rng(derive_seed(seed, 'holdout')).permutation(count)
    return features.utterances(np.sort(order[held:])), features.utterances(np.sort(order[:held]))


def _utterance_job(args):
    index, clean, regime_tags, noise, spec, feature_config = args
    if noise is None:
        noise = make_noise(spec.noise_kind, len(clean), clean.sample_rate,
                           derive_seed(spec.seed, 'noise', index))
    pairs = build_pairs(clean, noise,
                        MixSpec(spec.snr_db, spec.noise_kind, derive_seed(spec.seed, 'mix', index)),
                        feature_config, regime_tags=regime_tags)
    logger.debug("utterance_built", index=index, frames=len(pairs), snr_db=spec.snr_db)
    return pairs


def build_corpus(utterances, spec: MixSpec, feature_config: FeatureConfig, noise: Waveform = None,
                 threads=None) -> FeatureSet:
    """
    Mix and featurize every utterance. `utterances` holds Waveforms or
    SynthUtterances; with no `noise` recording a generator of `spec.noise_kind`
    supplies per-utterance noise. Output order follows input order.
    """
    jobs = []
    for index, item in enumerate(utterances):
        if isinstance(item, SynthUtterance):
            jobs.append((index, item.clean, item.regime_tags, noise, spec, feature_config))
        else:
            jobs.append((index, item, None, noise, spec, feature_config))
    if not jobs:
        raise ConfigurationError("no utterances to build a corpus from")

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        sets = list(pool.map(_utterance_job, jobs))
    corpus = FeatureSet.concatenate(sets)
    logger.info("corpus_built", utterances=len(sets), frames=len(corpus),
                snr_db=spec.snr_db, noise_kind=spec.noise_kind)
    return corpus


class CorpusStore:
    """Frame records as little-endian float32 plus a JSON sidecar"""

    @staticmethod
    def sidecar_path(path):
        return f"{path}.json"

    @staticmethod
    def export_corpus(features: FeatureSet, path, feature_config: FeatureConfig, provenance=None):
        columns = [features.expert_inputs, features.gate_inputs, features.labels]
        has_tags = features.regime_tags is not None
        if has_tags:
            columns.append(features.regime_tags[:, None].astype(np.float64))
        records = np.concatenate(columns, axis=1).astype('<f4')

        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'wb') as handle:
            handle.write(records.tobytes())

        sidecar = {
            'schema': CORPUS_SCHEMA,
            'num_frames': len(features),
            'expert_dim': features.expert_dim,
            'gate_dim': features.gate_dim,
            'num_bins': features.num_bins,
            'has_regime_tags': has_tags,
            'utterance_bounds': [int(b) for b in features.utterance_bounds],
            'feature_config': feature_config.to_dict(),
            'provenance': provenance or {},
            'sha256': file_sha256(path),
        }
        with open(CorpusStore.sidecar_path(path), 'w', encoding='utf-8') as handle:
            handle.write(dumps_json(sidecar))
        logger.info("corpus_exported", path=str(path), frames=len(features))
        return sidecar

    @staticmethod
    def read_sidecar(path):
        sidecar_path = CorpusStore.sidecar_path(path)
        if not os.path.isfile(sidecar_path):
            raise CorpusFormatError(f"corpus manifest not found: {sidecar_path}")
        try:
            with open(sidecar_path, 'r', encoding='utf-8') as handle:
                sidecar = json.load(handle)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"corpus manifest {sidecar_path} is not valid JSON: {exc.msg}")
        if sidecar.get('schema') != CORPUS_SCHEMA:
            raise CorpusFormatError(
                f"corpus schema {sidecar.get('schema')!r} is not supported; expected {CORPUS_SCHEMA!r}"
            )
        return sidecar

    @staticmethod
    def import_corpus(path):
        """Returns (FeatureSet, FeatureConfig, sidecar dict)"""
        sidecar = CorpusStore.read_sidecar(path)
        if not os.path.isfile(path):
            raise CorpusFormatError(f"corpus feature file not found: {path}")
        if sidecar.get('sha256') and file_sha256(path) != sidecar['sha256']:
            raise CorpusFormatError(f"corpus feature file {path} does not match its manifest checksum")

        try:
            expert_dim, gate_dim, num_bins = sidecar['expert_dim'], sidecar['gate_dim'], sidecar['num_bins']
            num_frames, has_tags = sidecar['num_frames'], sidecar['has_regime_tags']
            bounds = sidecar['utterance_bounds']
            feature_config = FeatureConfig.from_dict(sidecar['feature_config'])
        except (KeyError, TypeError) as exc:
            raise CorpusFormatError(f"corpus manifest is missing field {exc}")

        width = expert_dim + gate_dim + num_bins + (1 if has_tags else 0)
        flat = np.fromfile(path, dtype='<f4')
        if flat.size != num_frames * width:
            raise CorpusFormatError(
                f"corpus feature file holds {flat.size} values, manifest implies {num_frames * width}"
            )
        records = flat.reshape(num_frames, width).astype(np.float64)
        gate_end = expert_dim + gate_dim
        tags = records[:, -1].astype(np.int64) if has_tags else None
        features = FeatureSet(records[:, :expert_dim], records[:, expert_dim:gate_end],
                              records[:, gate_end:gate_end + num_bins], tags,
                              np.asarray(bounds, dtype=np.int64))
        return features, feature_config, sidecar
