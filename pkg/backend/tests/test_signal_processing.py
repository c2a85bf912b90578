# backend/tests/test_signal_processing.py

import numpy as np
import pytest
import soundfile as sf

from models import Waveform, Stft, LOG_FLOOR
from services.corpus import synth_utterance, make_noise, mix_at_snr
from services.evaluation import segmental_snr
from services.signal_processing import (
    analysis_window, is_cola, num_frames_for, stft, istft, log_spectrum,
    hz_to_mel, mel_to_hz, mel_filterbank, log_filter_energies, mfcc,
    cmvn_stats, cmvn, read_wav, write_wav
)
from utils.exceptions import (
    ConfigurationError, ShapeMismatchError, SignalTooShortError, WavFormatError
)


def naive_dft_frames(samples, frame_len, hop, window):
    """Direct O(L^2) DFT of each windowed frame, positive bins only"""
    n = np.arange(frame_len)
    k = np.arange(frame_len // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * n / frame_len)
    count = (len(samples) - frame_len) // hop + 1
    rows = []
    for t in range(count):
        frame = samples[t * hop:t * hop + frame_len] * window
        rows.append(basis @ frame)
    return np.array(rows)


class TestStft:
    def test_zero_signal(self):
        """Test an all-zero waveform gives an all-zero grid"""
        spectrum = stft(Waveform(np.zeros(16), 8000), frame_len=8, hop=4, window='rectangular')
        assert spectrum.frames.shape == (3, 5)
        assert np.all(spectrum.frames == 0)

    def test_constant_signal_rectangular(self):
        """Test a DC signal puts all energy in bin 0"""
        spectrum = stft(Waveform(np.ones(16), 8000), frame_len=8, hop=4, window='rectangular')
        np.testing.assert_allclose(spectrum.frames[:, 0], 8.0, atol=1e-12)
        np.testing.assert_allclose(np.abs(spectrum.frames[:, 1:]), 0.0, atol=1e-12)

    def test_matches_naive_dft(self, rng):
        """Test the grid agrees with a direct DFT for every window"""
        samples = rng.standard_normal(200)
        for window in ('hamming', 'hann', 'rectangular'):
            spectrum = stft(Waveform(samples, 16000), frame_len=32, hop=16, window=window)
            expected = naive_dft_frames(samples, 32, 16, analysis_window(window, 32))
            np.testing.assert_allclose(spectrum.frames, expected, atol=1e-9)

    def test_sinusoid_peak_bin(self):
        """Test a sinusoid on bin 4 peaks at bin 4 in every frame"""
        samples = np.sin(2 * np.pi * 4 * np.arange(128) / 32)
        spectrum = stft(Waveform(samples, 16000), frame_len=32, hop=16, window='hamming')
        assert np.all(np.argmax(np.abs(spectrum.frames), axis=1) == 4)

    def test_frame_count(self):
        """Test the number of frames is floor((N - L) / H) + 1"""
        for n in (512, 513, 767, 768, 1000):
            spectrum = stft(Waveform(np.zeros(n), 16000), frame_len=512, hop=256)
            assert spectrum.num_frames == (n - 512) // 256 + 1 == num_frames_for(n, 512, 256)
        assert num_frames_for(100, 512, 256) == 0

    def test_parseval_rectangular(self, rng):
        """Test per-frame energy is preserved under a rectangular window"""
        samples = rng.standard_normal(64)
        spectrum = stft(Waveform(samples, 16000), frame_len=16, hop=16, window='rectangular')
        for t, row in enumerate(spectrum.frames):
            power = np.abs(row) ** 2
            spectral = (power[0] + 2 * power[1:-1].sum() + power[-1]) / 16
            assert spectral == pytest.approx(np.sum(samples[t * 16:(t + 1) * 16] ** 2), rel=1e-10)

    def test_too_short(self):
        """Test a signal shorter than one frame is rejected"""
        with pytest.raises(SignalTooShortError):
            stft(Waveform(np.zeros(100), 16000), frame_len=512, hop=256)

    def test_invalid_framing(self):
        """Test odd frame lengths and oversized hops are configuration errors"""
        with pytest.raises(ConfigurationError):
            stft(Waveform(np.zeros(100), 16000), frame_len=31, hop=16)
        with pytest.raises(ConfigurationError):
            stft(Waveform(np.zeros(100), 16000), frame_len=32, hop=40)

    def test_unknown_window(self):
        with pytest.raises(ConfigurationError):
            analysis_window('nonexistent', 32)


class TestIstft:
    def test_round_trip(self, rng):
        """Test analysis then synthesis recovers the signal over the covered span"""
        samples = rng.standard_normal(16000)
        spectrum = stft(Waveform(samples, 16000), frame_len=512, hop=256, window='hamming')
        rebuilt = istft(spectrum)
        covered = (spectrum.num_frames - 1) * 256 + 512
        assert len(rebuilt) == 16000
        assert np.max(np.abs(rebuilt.samples[:covered] - samples[:covered])) < 1e-6

    def test_round_trip_all_windows(self, rng):
        samples = rng.standard_normal(1024)
        for window in ('hann', 'rectangular'):
            spectrum = stft(Waveform(samples, 16000), frame_len=64, hop=32, window=window)
            np.testing.assert_allclose(istft(spectrum).samples[1:], samples[1:], atol=1e-9)

    def test_zero_grid(self):
        """Test an all-zero grid resynthesizes to silence"""
        spectrum = Stft(np.zeros((5, 33)), 64, 32, 'hamming', num_samples=192)
        rebuilt = istft(spectrum)
        assert len(rebuilt) == 192
        assert np.all(rebuilt.samples == 0)

    def test_mismatched_phase_grid(self):
        """Test magnitude and phase grids must share framing"""
        magnitude = Stft(np.ones((5, 33)), 64, 32, 'hamming')
        phase = Stft(np.ones((4, 33)), 64, 32, 'hamming')
        with pytest.raises(ShapeMismatchError):
            istft(magnitude, phase)

    def test_non_cola_rejected(self):
        """Test a window/hop pair without constant overlap-add is rejected"""
        assert not is_cola('hamming', 512, 200)
        assert is_cola('hamming', 512, 256)
        spectrum = Stft(np.ones((3, 257)), 512, 200, 'hamming')
        with pytest.raises(ConfigurationError):
            istft(spectrum)

    def test_clean_magnitude_with_noisy_phase(self):
        """Test clean magnitudes on noisy phases beat the noisy signal at 20 dB"""
        clean = synth_utterance(3).clean
        noise = make_noise('white', len(clean), clean.sample_rate, seed=4)
        noisy, _ = mix_at_snr(clean, noise, 20.0, seed=5)
        clean_stft = stft(clean)
        noisy_stft = stft(noisy)
        rebuilt = istft(clean_stft, noisy_stft, num_samples=len(clean))
        assert segmental_snr(clean, rebuilt) > segmental_snr(clean, noisy)


class TestLogSpectrum:
    def test_known_magnitudes(self):
        """Test unit magnitudes give 0, e gives 1 and zero hits the floor"""
        frames = np.zeros((3, 5), dtype=complex)
        frames[0] = 1.0
        frames[1] = -np.e
        spectrum = Stft(frames, 8, 4, 'hamming')
        values = log_spectrum(spectrum).frames
        np.testing.assert_allclose(values[0], 0.0, atol=1e-15)
        np.testing.assert_allclose(values[1], 1.0, atol=1e-12)
        np.testing.assert_allclose(values[2], LOG_FLOOR)
        assert LOG_FLOOR == pytest.approx(-46.05)

    def test_floor_is_lower_bound(self, rng):
        spectrum = Stft(rng.standard_normal((6, 17)) * 1e-30, 32, 16, 'hamming')
        assert np.all(log_spectrum(spectrum).frames >= LOG_FLOOR)


class TestMfcc:
    def test_mel_round_trip(self):
        freqs = np.array([0.0, 100.0, 700.0, 4000.0, 8000.0])
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(freqs)), freqs, atol=1e-9)
        assert hz_to_mel(700.0) == pytest.approx(2595.0 * np.log10(2.0))

    def test_filterbank_shape_and_range(self):
        bank = mel_filterbank(26, 512, 16000)
        assert bank.shape == (26, 257)
        assert np.all(bank >= 0) and np.all(bank <= 1)
        assert np.all(bank.sum(axis=1) > 0)

    def test_matches_oracle(self, rng):
        """Test MFCCs agree with an explicit filterbank and DCT-II computation"""
        num_filters, num_ceps, frame_len, rate = 12, 6, 64, 16000
        frames = rng.standard_normal((4, 33)) + 1j * rng.standard_normal((4, 33))
        spectrum = Stft(frames, frame_len, 32, 'hamming', sample_rate=rate)

        edges_mel = np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2), num_filters + 2)
        edges = 700.0 * (10.0 ** (edges_mel / 2595.0) - 1.0)
        bank = np.zeros((num_filters, 33))
        for j in range(num_filters):
            for k in range(33):
                f = k * rate / frame_len
                if edges[j] <= f <= edges[j + 1]:
                    bank[j, k] = (f - edges[j]) / (edges[j + 1] - edges[j])
                elif edges[j + 1] < f <= edges[j + 2]:
                    bank[j, k] = (edges[j + 2] - f) / (edges[j + 2] - edges[j + 1])
        log_energy = np.log((np.abs(frames) ** 2) @ bank.T)
        dct = np.zeros((num_filters, num_filters))
        for n in range(num_filters):
            scale = np.sqrt(1.0 / num_filters) if n == 0 else np.sqrt(2.0 / num_filters)
            for j in range(num_filters):
                dct[n, j] = scale * np.cos(np.pi * n * (2 * j + 1) / (2 * num_filters))
        expected = log_energy @ dct.T

        result = mfcc(spectrum, num_filters=num_filters, num_ceps=num_ceps).frames
        np.testing.assert_allclose(result, expected[:, :num_ceps], atol=1e-10)

    def test_silent_frame(self):
        """Test a silent frame gives c0 = sqrt(F) * floor and zero elsewhere"""
        spectrum = Stft(np.zeros((2, 33)), 64, 32, 'hamming')
        result = mfcc(spectrum, num_filters=10, num_ceps=5).frames
        np.testing.assert_allclose(result[:, 0], np.sqrt(10) * LOG_FLOOR, rtol=1e-12)
        np.testing.assert_allclose(result[:, 1:], 0.0, atol=1e-9)

    def test_single_bin_energies(self):
        """Test one active bin feeds each filter by its weight"""
        frames = np.zeros((1, 33), dtype=complex)
        frames[0, 7] = 3.0
        spectrum = Stft(frames, 64, 32, 'hamming')
        bank = mel_filterbank(10, 64, 16000)
        energies = log_filter_energies(spectrum, num_filters=10)
        weights = bank[:, 7]
        expected = np.full(10, LOG_FLOOR)
        expected[weights > 0] = np.maximum(np.log(9.0 * weights[weights > 0]), LOG_FLOOR)
        np.testing.assert_allclose(energies[0], expected, atol=1e-10)

    def test_invalid_sizes(self):
        spectrum = Stft(np.ones((2, 33)), 64, 32, 'hamming')
        with pytest.raises(ConfigurationError):
            mfcc(spectrum, num_filters=8, num_ceps=9)
        with pytest.raises(ConfigurationError):
            mfcc(spectrum, num_filters=1, num_ceps=1)


class TestCmvn:
    def test_zero_mean_unit_variance(self, rng):
        """Test every non-constant dimension is standardized"""
        frames = rng.standard_normal((50, 7)) * 3.0 + 2.0
        normalized = cmvn(frames)
        np.testing.assert_allclose(normalized.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(normalized.var(axis=0), 1.0, atol=1e-10)

    def test_idempotent(self, rng):
        frames = rng.standard_normal((20, 4))
        np.testing.assert_allclose(cmvn(cmvn(frames)), cmvn(frames), atol=1e-12)

    def test_constant_dimension(self, rng):
        """Test constant dimensions normalize to zero"""
        frames = rng.standard_normal((10, 3))
        frames[:, 1] = 5.0
        normalized = cmvn(frames)
        assert np.all(normalized[:, 1] == 0.0)
        assert np.all(np.isfinite(normalized))

    def test_invert(self, rng):
        frames = rng.standard_normal((10, 3))
        frames[:, 2] = -1.5
        stats = cmvn_stats(frames)
        np.testing.assert_allclose(stats.invert(stats.apply(frames)), frames, atol=1e-12)

    def test_single_frame_rejected(self):
        with pytest.raises(SignalTooShortError):
            cmvn(np.ones((1, 4)))


class TestWavIo:
    def test_write_then_read(self, tmp_path, rng):
        """Test PCM16 files round-trip within one quantization step"""
        waveform = Waveform(rng.uniform(-0.9, 0.9, 800), 16000)
        path = str(tmp_path / 'out' / 'tone.wav')
        write_wav(path, waveform)
        loaded = read_wav(path, sample_rate=16000)
        assert loaded.sample_rate == 16000
        assert np.max(np.abs(loaded.samples - waveform.samples)) <= 0.5 / 32768 + 1e-12

    def test_clipping(self, tmp_path):
        path = str(tmp_path / 'loud.wav')
        write_wav(path, Waveform(np.array([2.0, -2.0, 0.0]), 8000))
        loaded = read_wav(path)
        assert loaded.samples.max() < 1.0
        assert loaded.samples.min() == -1.0

    def test_stereo_rejected(self, tmp_path):
        path = str(tmp_path / 'stereo.wav')
        sf.write(path, np.zeros((100, 2), dtype=np.int16), 16000, subtype='PCM_16')
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_float_subtype_rejected(self, tmp_path):
        path = str(tmp_path / 'float.wav')
        sf.write(path, np.zeros(100, dtype=np.float32), 16000, subtype='FLOAT')
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_sample_rate_mismatch(self, tmp_path):
        """Test a rate mismatch fails unless resampling is requested"""
        path = str(tmp_path / 'eight.wav')
        write_wav(path, Waveform(np.zeros(800), 8000))
        with pytest.raises(WavFormatError):
            read_wav(path, sample_rate=16000)
        resampled = read_wav(path, sample_rate=16000, resample=True)
        assert resampled.sample_rate == 16000
        assert len(resampled) == 1600

    def test_missing_and_garbage(self, tmp_path):
        with pytest.raises(WavFormatError):
            read_wav(str(tmp_path / 'missing.wav'))
        garbage = tmp_path / 'garbage.wav'
        garbage.write_bytes(b'not a wav file at all')
        with pytest.raises(WavFormatError):
            read_wav(str(garbage))
