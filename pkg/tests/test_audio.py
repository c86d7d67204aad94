import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sepderev.audio import (
    AudioClip, Spectrogram, StftParams, convolve_rir, gain_for_snr, istft, rms, snr_db, stft,
)

SR = 16000


def clip(x, sr=SR):
    return AudioClip(np.asarray(x, dtype=np.float64), sr)


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- AudioClip ---------------------------------------------------------------

def test_clip_rejects_nonfinite_and_bad_rate():
    with pytest.raises(ValueError):
        clip([0.0, np.nan])
    with pytest.raises(ValueError):
        clip([0.0, np.inf])
    with pytest.raises(ValueError):
        AudioClip(np.zeros(4), 0)


def test_clip_arithmetic_checks_compatibility():
    a, b = clip(np.ones(4)), clip(np.ones(5))
    with pytest.raises(ValueError):
        a + b
    with pytest.raises(ValueError):
        a + AudioClip(np.ones(4), 8000)
    np.testing.assert_array_equal((a + a).samples, 2 * np.ones(4))
    assert clip(np.zeros(8000)).duration == 0.5


# -- STFT --------------------------------------------------------------------

def test_stft_bin_count_for_three_seconds():
    spec = stft(clip(np.random.default_rng(0).standard_normal(48000)), StftParams())
    assert spec.bins.shape[0] == 257
    assert spec.bins.shape[1] == StftParams().n_frames(48000)


def test_stft_roundtrip():
    x = np.random.default_rng(1).standard_normal(48000)
    y = istft(stft(clip(x), StftParams())).samples
    assert len(y) == len(x)
    assert rel_err(y, x) < 1e-6


def test_sine_peaks_at_bin_32():
    t = np.arange(SR) / SR
    spec = stft(clip(np.sin(2 * np.pi * 1000 * t)), StftParams())
    energy = (np.abs(spec.bins) ** 2).sum(axis=1)
    assert int(np.argmax(energy)) == 32


def test_zero_spectrogram_gives_zero_waveform():
    p = StftParams()
    spec = Spectrogram(np.zeros((257, p.n_frames(4000)), dtype=complex), p, 4000)
    assert np.all(istft(spec).samples == 0)


def test_stft_of_istft_is_stable():
    p = StftParams()
    s1 = stft(clip(np.random.default_rng(2).standard_normal(8000)), p)
    s2 = stft(istft(s1), p)
    assert rel_err(s2.bins, s1.bins) < 1e-9


def test_stft_rejects_short_signal_and_bad_hop():
    with pytest.raises(ValueError, match="too short"):
        stft(clip(np.zeros(100)), StftParams())
    with pytest.raises(ValueError):
        StftParams(512, 200)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(256, 3000), hop=st.sampled_from([64, 128]), seed=st.integers(0, 2**32 - 1))
def test_roundtrip_property(n, hop, seed):
    p = StftParams(256, hop, sample_rate=8000)
    x = np.random.default_rng(seed).standard_normal(n)
    assert rel_err(istft(stft(clip(x, 8000), p)).samples, x) < 1e-6


def test_torch_stft_matches_numpy():
    import torch
    from sepderev import tf

    p = StftParams(256, 128, sample_rate=8000)
    x = np.random.default_rng(3).standard_normal(1000)
    ref = stft(clip(x, 8000), p).bins
    got = tf.stft(torch.tensor(x), p).numpy()
    np.testing.assert_allclose(got, ref, atol=1e-10)
    back = tf.istft(torch.tensor(ref), p, len(x)).numpy()
    np.testing.assert_allclose(back, x, atol=1e-10)


# -- rms / gain --------------------------------------------------------------

@pytest.mark.parametrize("x, expected", [([0.5] * 10, 0.5), ([0.0] * 10, 0.0), ([1, -1, 1, -1], 1.0)])
def test_rms_examples(x, expected):
    assert rms(clip(x)) == pytest.approx(expected, abs=1e-15)


def test_gain_examples():
    rng = np.random.default_rng(4)
    t = rng.standard_normal(1000)
    i = rng.standard_normal(1000)
    t_clip = clip(0.1 * t / np.sqrt(np.mean(t ** 2)))
    i_clip = clip(0.2 * i / np.sqrt(np.mean(i ** 2)))
    g = gain_for_snr(t_clip, i_clip, 0.0)
    assert g == pytest.approx(0.5, rel=1e-12)
    assert snr_db(t_clip, i_clip.scaled(g)) == pytest.approx(0.0, abs=1e-9)
    assert gain_for_snr(t_clip, t_clip, 0.0) == pytest.approx(1.0, rel=1e-12)
    assert gain_for_snr(t_clip, t_clip, 20.0) == pytest.approx(0.1, rel=1e-12)


def test_gain_rejects_silence():
    with pytest.raises(ValueError, match="silent interferer"):
        gain_for_snr(clip(np.ones(8)), clip(np.zeros(8)), 0.0)
    with pytest.raises(ValueError):
        gain_for_snr(clip(np.zeros(8)), clip(np.ones(8)), 0.0)


signals = arrays(np.float64, 64, elements=st.floats(-1, 1, allow_subnormal=False))


@settings(max_examples=200, deadline=None)
@given(t=signals, i=signals, snr=st.floats(-60, 60))
def test_snr_exactness(t, i, snr):
    if rms(clip(t)) < 1e-3 or rms(clip(i)) < 1e-3:
        return
    g = gain_for_snr(clip(t), clip(i), snr)
    assert abs(snr_db(clip(t), clip(i).scaled(g)) - snr) < 1e-9


# -- convolution -------------------------------------------------------------

def direct_convolution(x, h):
    y = np.zeros(len(x))
    for n in range(len(x)):
        for k in range(min(n + 1, len(h))):
            y[n] += h[k] * x[n - k]
    return y


def test_convolve_identity_and_scale():
    x = np.random.default_rng(5).standard_normal(500)
    np.testing.assert_array_equal(convolve_rir(clip(x), clip([1.0])).samples, x)
    np.testing.assert_allclose(convolve_rir(clip(x), clip([0.5])).samples, 0.5 * x, atol=1e-15)


def test_convolve_impulse_returns_rir():
    rng = np.random.default_rng(6)
    h = np.concatenate([[1.0], 0.3 * rng.standard_normal(99)])
    x = np.zeros(300)
    x[0] = 1.0
    y = convolve_rir(clip(x), clip(h)).samples
    np.testing.assert_allclose(y[:100], h, atol=1e-12)
    np.testing.assert_allclose(y, direct_convolution(x, h), atol=1e-12)


def test_convolve_matches_direct_sum():
    rng = np.random.default_rng(7)
    h = np.concatenate([[1.0], 0.2 * rng.standard_normal(40)])
    x = rng.standard_normal(200)
    np.testing.assert_allclose(convolve_rir(clip(x), clip(h)).samples, direct_convolution(x, h), atol=1e-12)


def test_convolve_aligns_peak_to_lag_zero():
    h = np.array([0.1, 0.2, 1.0, 0.5, 0.25])
    x = np.random.default_rng(8).standard_normal(64)
    y = convolve_rir(clip(x), clip(h)).samples
    np.testing.assert_allclose(y, direct_convolution(x, h[2:]), atol=1e-12)


def test_convolve_rate_mismatch():
    with pytest.raises(ValueError):
        convolve_rir(clip(np.ones(10)), AudioClip(np.ones(3), 8000))


@settings(max_examples=50, deadline=None)
@given(x=signals, y=signals, a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_convolution_linearity(x, y, a, b, seed):
    h = clip(np.concatenate([[1.0], 0.3 * np.random.default_rng(seed).standard_normal(20)]))
    lhs = convolve_rir(clip(a * x + b * y), h).samples
    rhs = a * convolve_rir(clip(x), h).samples + b * convolve_rir(clip(y), h).samples
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
