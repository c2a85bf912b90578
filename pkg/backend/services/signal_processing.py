# backend/services/signal_processing.py
"""
Time-frequency front end: STFT/ISTFT, log-spectrum, mel filterbank, MFCC,
per-utterance CMVN and WAV file access.

Every function here is pure; nothing holds module-level mutable state.
"""
import os

import numpy as np
import scipy.fft
import scipy.signal
import soundfile as sf
import structlog
from numpy.lib.stride_tricks import sliding_window_view

from models import (
    Waveform, Stft, LogSpectrum, MfccFrames, CmvnStats, LOG_FLOOR
)
from utils.exceptions import (
    ConfigurationError, ShapeMismatchError, SignalTooShortError, WavFormatError
)

logger = structlog.get_logger(__name__)

PCM16_SCALE = 32768.0

_WINDOW_ALIASES = {
    'rectangular': 'boxcar',
    'rect': 'boxcar',
    'hann': 'hann',
    'hanning': 'hann',
    'hamming': 'hamming',
}


def analysis_window(name, frame_len):
    """Periodic (DFT-even) analysis window"""
    try:
        return scipy.signal.get_window(_WINDOW_ALIASES.get(name, name), frame_len, fftbins=True)
    except ValueError as exc:
        raise ConfigurationError(f"unknown analysis window '{name}': {exc}")


def is_cola(window, frame_len, hop):
    return bool(scipy.signal.check_COLA(analysis_window(window, frame_len), frame_len, frame_len - hop))


def num_frames_for(num_samples, frame_len, hop):
    if num_samples < frame_len:
        return 0
    return (num_samples - frame_len) // hop + 1


def stft(waveform: Waveform, frame_len=512, hop=256, window='hamming'):
    if frame_len <= 0 or frame_len % 2:
        raise ConfigurationError(f"frame_len must be even and positive, got {frame_len}")
    if not 0 < hop <= frame_len:
        raise ConfigurationError(f"hop must be in (0, frame_len], got {hop}")
    if len(waveform) < frame_len:
        raise SignalTooShortError(
            f"signal too short: {len(waveform)} samples, need at least one frame of {frame_len}"
        )
    frames = sliding_window_view(waveform.samples, frame_len)[::hop]
    coefficients = scipy.fft.rfft(frames * analysis_window(window, frame_len), axis=1)
    return Stft(coefficients, frame_len, hop, window,
                num_samples=len(waveform), sample_rate=waveform.sample_rate)


def istft(spectrum: Stft, phase_source: Stft = None, num_samples=None):
    """
    Overlap-add reconstruction from the magnitudes of `spectrum` and the phases
    of `phase_source` (defaults to `spectrum` itself).

    Frames are summed and divided by the summed analysis window, so the
    analysis/synthesis pair is exact wherever the window envelope is non-zero.
    """
    phase_source = spectrum if phase_source is None else phase_source
    if not spectrum.same_framing(phase_source):
        raise ShapeMismatchError(
            f"magnitude grid {spectrum.frames.shape} and phase grid {phase_source.frames.shape} "
            "do not share framing"
        )
    frame_len, hop = spectrum.frame_len, spectrum.hop
    if not is_cola(spectrum.window, frame_len, hop):
        raise ConfigurationError(
            f"window '{spectrum.window}' with frame_len {frame_len} and hop {hop} "
            "is not constant-overlap-add"
        )

    combined = np.abs(spectrum.frames) * np.exp(1j * np.angle(phase_source.frames))
    frames = scipy.fft.irfft(combined, n=frame_len, axis=1)

    window = analysis_window(spectrum.window, frame_len)
    covered = (spectrum.num_frames - 1) * hop + frame_len
    signal = np.zeros(covered)
    envelope = np.zeros(covered)
    for index, frame in enumerate(frames):
        start = index * hop
        signal[start:start + frame_len] += frame
        envelope[start:start + frame_len] += window
    nonzero = envelope > 1e-10
    signal[nonzero] /= envelope[nonzero]
    signal[~nonzero] = 0.0

    target = num_samples or spectrum.num_samples or covered
    if target > covered:
        signal = np.concatenate([signal, np.zeros(target - covered)])
    return Waveform(signal[:target], spectrum.sample_rate)


def log_spectrum(spectrum: Stft, floor=LOG_FLOOR):
    magnitude = np.abs(spectrum.frames)
    with np.errstate(divide='ignore'):
        values = np.maximum(np.log(magnitude), floor)
    return LogSpectrum(values)


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_filters, frame_len, sample_rate, fmin=0.0, fmax=None):
    """
    Triangular filters equally spaced on the mel scale, evaluated at the
    rfft bin frequencies. Shape: num_filters x (frame_len/2 + 1).
    """
    if num_filters < 2:
        raise ConfigurationError(f"num_filters must be at least 2, got {num_filters}")
    fmax = sample_rate / 2.0 if fmax is None else float(fmax)
    if not 0.0 <= fmin < fmax <= sample_rate / 2.0:
        raise ConfigurationError(f"mel band [{fmin}, {fmax}] Hz is invalid for {sample_rate} Hz")

    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_filters + 2))
    bin_freqs = np.arange(frame_len // 2 + 1) * sample_rate / frame_len
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs - lower) / (center - lower)
    falling = (upper - bin_freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_filter_energies(spectrum: Stft, num_filters=26, fmin=0.0, fmax=None, floor=LOG_FLOOR):
    bank = mel_filterbank(num_filters, spectrum.frame_len, spectrum.sample_rate, fmin, fmax)
    energies = (np.abs(spectrum.frames) ** 2) @ bank.T
    with np.errstate(divide='ignore'):
        return np.maximum(np.log(energies), floor)


def mfcc(spectrum: Stft, num_filters=26, num_ceps=13, fmin=0.0, fmax=None):
    if num_filters < 2:
        raise ConfigurationError(f"num_filters must be at least 2, got {num_filters}")
    if not 1 <= num_ceps <= num_filters:
        raise ConfigurationError(f"num_ceps must be in [1, {num_filters}], got {num_ceps}")
    log_energies = log_filter_energies(spectrum, num_filters, fmin, fmax)
    cepstra = scipy.fft.dct(log_energies, type=2, norm='ortho', axis=1)
    return MfccFrames(cepstra[:, :num_ceps])


def cmvn_stats(frames):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeMismatchError(f"CMVN expects a frames x dims grid, got shape {frames.shape}")
    if frames.shape[0] < 2:
        raise SignalTooShortError("CMVN needs at least 2 frames; variance is undefined for one")
    constant = np.ptp(frames, axis=0) == 0.0
    return CmvnStats(frames.mean(axis=0), frames.std(axis=0), constant)


def cmvn(frames):
    """Zero mean, unit population variance per dimension; constant dimensions become zero"""
    return cmvn_stats(frames).apply(frames)


def resample_linear(samples, from_rate, to_rate):
    samples = np.asarray(samples, dtype=np.float64)
    if from_rate == to_rate or samples.size == 0:
        return samples.copy()
    count = int(round(samples.size * to_rate / from_rate))
    source_times = np.arange(samples.size) / from_rate
    target_times = np.arange(count) / to_rate
    return np.interp(target_times, source_times, samples)


def read_wav(path, sample_rate=None, resample=False):
    """Load a 16-bit PCM mono WAV as samples in [-1, 1)"""
    if not os.path.isfile(path):
        raise WavFormatError(f"WAV file not found: {path}")
    try:
        info = sf.info(path)
        if info.channels != 1:
            raise WavFormatError(f"{path}: expected mono audio, got {info.channels} channels")
        if info.subtype != 'PCM_16':
            raise WavFormatError(f"{path}: expected 16-bit PCM, got {info.subtype}")
        data, rate = sf.read(path, dtype='int16', always_2d=False)
    except sf.SoundFileError as exc:
        raise WavFormatError(f"{path}: unreadable WAV file ({exc})")

    samples = data.astype(np.float64) / PCM16_SCALE
    if sample_rate is not None and rate != sample_rate:
        if not resample:
            raise WavFormatError(
                f"{path}: sample rate {rate} Hz differs from {sample_rate} Hz; pass --resample to convert"
            )
        logger.info("wav_resampled", path=str(path), from_rate=rate, to_rate=sample_rate)
        samples = resample_linear(samples, rate, sample_rate)
        rate = sample_rate
    return Waveform(samples, rate)


def write_wav(path, waveform: Waveform):
    """Write as 16-bit PCM; samples outside [-1, 1) are clipped"""
    scaled = np.round(waveform.samples * PCM16_SCALE)
    pcm = np.clip(scaled, -PCM16_SCALE, PCM16_SCALE - 1).astype(np.int16)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    sf.write(path, pcm, waveform.sample_rate, subtype='PCM_16')
    return path
