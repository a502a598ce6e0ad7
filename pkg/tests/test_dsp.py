import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aaii import dsp
from aaii.dataset import AudioClip
from aaii.dsp import (ClipTooShort, MelSpectrogram, apply_mel, clip_to_log_mel, hz_to_mel,
                      log_compress, median_noise_reduce, mel_filterbank, stft_magnitude)


def clip(x, rate=44100):
    return AudioClip(np.asarray(x, dtype=np.float64), rate, "test")


def mel(frames):
    return MelSpectrogram(np.asarray(frames, dtype=np.float64), 512 / 44100)


class TestStft:
    def test_frame_count_one_second(self):
        S = stft_magnitude(clip(np.zeros(44100)))
        assert S.shape == (85, 513)

    @given(st.integers(1024, 20000))
    @settings(max_examples=30, deadline=None)
    def test_shape_law(self, n):
        S = stft_magnitude(clip(np.ones(n) * 0.1))
        assert S.shape == ((n - 1024) // 512 + 1, 513)

    def test_zero_clip(self):
        assert not stft_magnitude(clip(np.zeros(5000))).any()

    def test_too_short(self):
        with pytest.raises(ClipTooShort, match="test"):
            stft_magnitude(clip(np.zeros(1023)))

    @pytest.mark.parametrize("k", [5, 100, 300])
    def test_bin_centred_sinusoid_closed_form(self, k):
        # periodic Hamming = 0.54 - 0.46 cos(2 pi n / N): its DFT has taps only at
        # offsets 0 and +-1, so a bin-centred cosine of amplitude A gives
        # |X[k]| = 0.27 A N, |X[k+-1]| = 0.115 A N and exactly zero elsewhere.
        N, A = 1024, 0.8
        n = np.arange(N)
        S = stft_magnitude(clip(A * np.cos(2 * np.pi * k * n / N)))[0]
        expected = np.zeros(513)
        expected[k] = 0.27 * A * N
        expected[k - 1] = expected[k + 1] = 0.115 * A * N
        np.testing.assert_allclose(S, expected, atol=1e-9)
        assert np.argmax(S) == k
        assert np.all(S[np.abs(np.arange(513) - k) > 4] < 1e-9)

    def test_energy_quadratic_in_amplitude(self):
        t = np.arange(20000) / 44100
        e = [np.sum(stft_magnitude(clip(a * np.sin(2 * np.pi * 1234.5 * t))) ** 2) for a in (0.5, 1.0)]
        assert e[1] / e[0] == pytest.approx(4.0, rel=1e-6)

    def test_deterministic(self):
        x = np.random.default_rng(0).uniform(-1, 1, 30000)
        a = clip_to_log_mel(clip(x)).frames
        b = clip_to_log_mel(clip(x.copy())).frames
        assert a.tobytes() == b.tobytes()


class TestFilterbank:
    @pytest.mark.parametrize("rate", [22050, 44100, 48000])
    def test_invariants(self, rate):
        fb = mel_filterbank(rate)
        assert fb.weights.shape == (40, 513)
        assert (fb.weights >= 0).all()
        assert ((fb.weights > 0).sum(axis=1) >= 1).all()
        assert np.all(np.diff(hz_to_mel(fb.center_frequencies())) > 0)
        # peak bin of each band increases with band index
        assert np.all(np.diff(np.argmax(fb.weights, axis=1)) >= 0)

    def test_too_many_bands_for_rate(self):
        with pytest.raises(ValueError, match="cover no FFT bin"):
            mel_filterbank(2000, n_mels=1000)


class TestApplyMel:
    fb = mel_filterbank(44100)

    def test_zero(self):
        out = apply_mel(np.zeros((3, 513)), self.fb)
        assert out.frames.shape == (3, 40) and not out.frames.any()

    def test_impulse_selects_column(self):
        for j in (7, 200, 512):
            spec = np.zeros((1, 513))
            spec[0, j] = 1.0
            np.testing.assert_array_equal(apply_mel(spec, self.fb).frames[0], self.fb.weights[:, j])

    def test_flat_frame_gives_weight_sums(self):
        out = apply_mel(np.ones((2, 513)), self.fb).frames
        np.testing.assert_allclose(out[0], self.fb.weights.sum(axis=1), rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_mel(np.zeros((3, 512)), self.fb)


class TestMedianNoiseReduce:
    def test_constant(self):
        assert not median_noise_reduce(mel(np.full((7, 40), 3.3))).frames.any()

    def test_worked_band(self):
        frames = np.ones((4, 40))
        frames[:, 0] = [1, 1, 1, 5]
        out = median_noise_reduce(mel(frames)).frames
        np.testing.assert_array_equal(out[:, 0], [0, 0, 0, 4])

    def test_single_frame(self):
        x = np.random.default_rng(0).uniform(0, 1, (1, 40))
        assert not median_noise_reduce(mel(x)).frames.any()

    @given(hnp.arrays(np.float64, st.tuples(st.integers(0, 10).map(lambda k: 2 * k + 1), st.just(40)),
                      elements=st.floats(0, 100)))
    @settings(max_examples=50, deadline=None)
    def test_idempotent_for_odd_length(self, frames):
        once = median_noise_reduce(mel(frames))
        twice = median_noise_reduce(once)
        np.testing.assert_array_equal(once.frames, twice.frames)
        assert (once.frames >= 0).all()


class TestLogCompress:
    def test_values(self):
        out = log_compress(mel([[0.0, 1.0]])).frames[0]
        assert out[0] == pytest.approx(np.log(1e-8))
        assert out[0] == pytest.approx(-18.42, abs=0.01)
        assert out[1] == pytest.approx(0.0, abs=1e-7)

    @given(st.floats(0, 1e6), st.floats(0, 1e6))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        out = log_compress(mel([[lo, hi]])).frames[0]
        assert out[0] <= out[1]

    def test_strictly_increasing_on_grid(self):
        x = np.concatenate([[0.0], np.logspace(-6, 6, 200)])
        assert np.all(np.diff(log_compress(mel([x])).frames[0]) > 0)


def test_full_chain_shape_and_sign():
    x = np.random.default_rng(3).uniform(-0.5, 0.5, 22050)
    m = dsp.clip_to_mel(clip(x))
    assert m.frames.shape == ((22050 - 1024) // 512 + 1, 40)
    assert (m.frames >= 0).all()
    assert m.hop_s == pytest.approx(512 / 44100)
