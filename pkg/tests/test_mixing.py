import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sepderev.audio import AudioClip, rms, snr_db
from sepderev.metrics import sisdr
from sepderev.mixing.manifest import read_features, read_manifest, write_features, write_manifest
from sepderev.mixing.music import MusicConfig, synth_music
from sepderev.mixing.rir import RirConfig, synth_rir
from sepderev.mixing.sample import (
    MixConfig, SourceBank, build_ladder, build_sample, gen_visual_features, generate_samples, sample_rng,
)
from sepderev.wavio import write_wav


@pytest.fixture(scope="module")
def bank8k():
    return SourceBank.synthetic(3, sample_rate=8000, n_target_speakers=3, n_interferer_speakers=3,
                                utterances_per_speaker=2, duration=2.0)


@pytest.fixture(scope="module")
def bank16k():
    return SourceBank.synthetic(4, sample_rate=16000, n_target_speakers=2, n_interferer_speakers=2,
                                utterances_per_speaker=1, duration=3.5)


# -- RIR ---------------------------------------------------------------------

@pytest.mark.parametrize("t60", [0.25, 0.4, 0.6])
def test_rir_decay_matches_t60(t60):
    sr = 16000
    cfg = RirConfig(t60_range=(t60, t60), rir_length=0.8)
    rir = synth_rir(cfg, np.random.default_rng(0), sr, t60=t60, drr_db=3.0).samples
    tail = rir[1:] ** 2
    # Smooth the squared tail over 10 ms blocks, then fit a line to the dB curve.
    block = sr // 100
    n = len(tail) // block
    energy = tail[: n * block].reshape(n, block).mean(axis=1)
    t = (np.arange(n) + 0.5) * block / sr + 1 / sr
    keep = t < t60
    slope = np.polyfit(t[keep], 10 * np.log10(energy[keep]), 1)[0]
    assert abs(slope * t60 + 60.0) < 1.0


def test_rir_drr_and_degenerate_cases():
    sr = 8000
    cfg = RirConfig()
    rir = synth_rir(cfg, np.random.default_rng(1), sr, t60=0.3, drr_db=4.0).samples
    assert rir[0] == 1.0
    assert 10 * np.log10(1.0 / np.sum(rir[1:] ** 2)) == pytest.approx(4.0, abs=1e-9)
    pure = synth_rir(cfg, np.random.default_rng(1), sr, t60=0.3, drr_db=np.inf).samples
    assert pure[0] == 1.0 and np.all(pure[1:] == 0)


def test_rir_determinism():
    a = synth_rir(RirConfig(), np.random.default_rng(5), 8000).samples
    b = synth_rir(RirConfig(), np.random.default_rng(5), 8000).samples
    np.testing.assert_array_equal(a, b)


def test_rir_config_validation():
    with pytest.raises(ValueError):
        RirConfig(t60_range=(0.5, 0.2))
    with pytest.raises(ValueError):
        RirConfig(t60_range=(0.2, 0.9), rir_length=0.6)


# -- music -------------------------------------------------------------------

def test_music_partials():
    sr = 16000
    cfg = MusicConfig(n_partials_range=(3, 3), fundamental_hz_range=(220.0, 220.0))
    x = synth_music(cfg, 2.0, np.random.default_rng(0), sr).samples
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    freqs = np.fft.rfftfreq(len(x), 1 / sr)
    top = []
    for i in np.argsort(spec)[::-1]:
        if all(abs(freqs[i] - f) > 20 for f in top):
            top.append(freqs[i])
        if len(top) == 3:
            break
    np.testing.assert_allclose(sorted(top), [220, 440, 660], atol=1.0)


def test_music_silence_and_determinism():
    silent = synth_music(MusicConfig(n_partials_range=(0, 0)), 1.0, np.random.default_rng(0), 8000)
    assert np.all(silent.samples == 0)
    a = synth_music(MusicConfig(), 1.0, np.random.default_rng(9), 8000).samples
    b = synth_music(MusicConfig(), 1.0, np.random.default_rng(9), 8000).samples
    np.testing.assert_array_equal(a, b)


# -- ladder ------------------------------------------------------------------

def _pair(seed=0, n=8000):
    rng = np.random.default_rng(seed)
    return AudioClip(rng.standard_normal(n), 8000), AudioClip(rng.standard_normal(n), 8000)


def test_ladder_snrs():
    t, i = _pair()
    i = i.scaled(10 ** (18 / 20) * rms(t) / rms(i))  # mixture at -18 dB
    lad = build_ladder(t, i, -18.0, 5.0, 6)
    assert lad.entry_snrs() == [-13.0, -8.0, -3.0, 2.0, 7.0]
    measured = [snr_db(t, e - t) for e in lad.targets[:-1]]
    np.testing.assert_allclose(measured, [-13, -8, -3, 2, 7], atol=1e-6)
    assert np.all((lad.targets[-1] - t).samples == 0)


def test_ladder_k1():
    t, i = _pair()
    lad = build_ladder(t, i, 0.0, 5.0, 1)
    assert len(lad) == 1 and lad[0] is t


def test_ladder_approaches_target():
    t, i = _pair(1)
    lad = build_ladder(t, i, -10.0, 5.0, 6)
    scores = [sisdr(e, t) for e in lad.targets]
    assert all(a < b for a, b in zip(scores, scores[1:]))


# -- build_sample ------------------------------------------------------------

def test_build_sample_example(bank16k):
    s = build_sample(bank16k, -18.0, 3.0, 1, False, 6, np.random.default_rng(0))
    assert len(s.mixture) == 48000
    assert s.visual.n_frames == 75
    assert s.ladder.entry_snrs() == [-13.0, -8.0, -3.0, 2.0, 7.0]
    assert np.array_equal(s.ladder[5].samples, s.reverberant_target.samples)
    s.validate()


def test_build_sample_errors(bank8k):
    rng = np.random.default_rng(0)
    cfg = MixConfig(sample_rate=8000, chunk_seconds=1.0)
    with pytest.raises(ValueError, match="no interference"):
        build_sample(bank8k, 0.0, 1.0, 0, False, 2, rng, cfg)
    with pytest.raises(ValueError):
        build_sample(bank8k, 12.0, 1.0, 1, False, 2, rng, cfg)


def test_generated_draws_are_exact(bank8k):
    cfg = MixConfig(sample_rate=8000, chunk_seconds=0.4, num_layers=3)
    for s in generate_samples(bank8k, cfg, 200, seed=11):
        s.validate(snr_tol_db=1e-6, add_tol=1e-9)


@settings(max_examples=30, deadline=None)
@given(snr=st.floats(-18, 6), n_int=st.sampled_from([0, 1, 2]), music=st.booleans(),
       k=st.sampled_from([1, 2, 6]), seed=st.integers(0, 2**31))
def test_build_sample_property(bank8k, snr, n_int, music, k, seed):
    if n_int == 0 and not music:
        return
    cfg = MixConfig(sample_rate=8000, chunk_seconds=1.0, num_layers=k)
    s = build_sample(bank8k, snr, 1.0, n_int, music, k, np.random.default_rng(seed), cfg)
    s.validate()
    assert np.max(np.abs(s.mixture.samples - s.reverberant_target.samples - s.interference_sum.samples)) <= 1e-9


def test_generation_is_deterministic(bank8k):
    cfg = MixConfig(sample_rate=8000, chunk_seconds=1.0, num_layers=2)
    a = generate_samples(bank8k, cfg, 5, seed=3, epoch=2)
    b = generate_samples(bank8k, cfg, 5, seed=3, epoch=2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.mixture.samples, y.mixture.samples)
        np.testing.assert_array_equal(x.visual.stacked(), y.visual.stacked())
        assert x.meta == y.meta
    c = generate_samples(bank8k, cfg, 5, seed=3, epoch=3)
    assert not np.array_equal(a[0].mixture.samples, c[0].mixture.samples)


def test_sample_rng_streams_independent():
    assert sample_rng(1, 0, 0).random() != sample_rng(1, 0, 1).random()
    assert sample_rng(1, 0, 0).random() == sample_rng(1, 0, 0).random()


def test_mixture_vs_anechoic_offset(bank8k):
    cfg = MixConfig(sample_rate=8000, chunk_seconds=1.0, num_layers=2)
    samples = generate_samples(bank8k, cfg, 60, seed=5)
    gap = np.mean([sisdr(s.mixture, s.anechoic_target) - s.meta["snr_db"] for s in samples])
    assert abs(gap) < 3.0


# -- visual features ---------------------------------------------------------

def test_visual_frames_and_correlation(bank16k):
    s = build_sample(bank16k, 0.0, 3.0, 1, False, 2, np.random.default_rng(1))
    v = s.visual
    assert v.lip.shape == (75, 16) and v.expression.shape == (75, 8)
    frames = s.anechoic_target.samples.reshape(75, -1)
    frame_rms = np.sqrt(np.mean(frames ** 2, axis=1))
    assert np.corrcoef(v.lip[:, 0], frame_rms)[0, 1] > 0.99


def test_visual_silent_target():
    v = gen_visual_features(AudioClip(np.zeros(8000), 8000), rng=np.random.default_rng(0))
    assert np.all(v.lip[:, 0] == 0.0)
    assert np.all(v.lip[:, 1] == v.lip[0, 1])


def test_visual_rejects_fractional_frames():
    with pytest.raises(ValueError):
        gen_visual_features(AudioClip(np.zeros(8001), 8000))


# -- manifest ----------------------------------------------------------------

def test_manifest_roundtrip(tmp_path, bank8k):
    cfg = MixConfig(sample_rate=8000, chunk_seconds=1.0, num_layers=3)
    samples = generate_samples(bank8k, cfg, 4, seed=2)
    write_manifest(samples, tmp_path)
    back = read_manifest(tmp_path)
    assert len(back) == 4
    for a, b in zip(samples, back):
        assert json.loads(json.dumps(a.meta)) == b.meta
        np.testing.assert_array_equal(a.mixture.samples, b.mixture.samples)
        np.testing.assert_array_equal(a.anechoic_target.samples, b.anechoic_target.samples)
        for x, y in zip(a.ladder.targets, b.ladder.targets):
            np.testing.assert_array_equal(x.samples, y.samples)
        np.testing.assert_allclose(a.visual.stacked(), b.visual.stacked(), rtol=1e-6, atol=1e-7)


def test_manifest_missing_wav_names_path(tmp_path, bank8k):
    cfg = MixConfig(sample_rate=8000, chunk_seconds=1.0, num_layers=2)
    write_manifest(generate_samples(bank8k, cfg, 2, seed=2), tmp_path)
    victim = sorted((tmp_path / "wav").glob("*_anech.wav"))[0]
    victim.unlink()
    with pytest.raises(FileNotFoundError, match=victim.name):
        read_manifest(tmp_path)


def test_manifest_detects_tampering(tmp_path, bank8k):
    cfg = MixConfig(sample_rate=8000, chunk_seconds=1.0, num_layers=2)
    samples = generate_samples(bank8k, cfg, 1, seed=2)
    write_manifest(samples, tmp_path)
    sid = samples[0].meta["id"]
    write_wav(tmp_path / "wav" / f"{sid}_mix.wav", samples[0].mixture.scaled(1.01), "float64")
    with pytest.raises(ValueError, match=sid):
        read_manifest(tmp_path)


def test_feature_file_header(tmp_path):
    v = gen_visual_features(AudioClip(np.random.default_rng(0).standard_normal(8000), 8000),
                            rng=np.random.default_rng(0))
    p = tmp_path / "x.f32"
    write_features(p, v)
    raw = p.read_bytes()
    assert raw[:4] == b"SDVF"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [25, 16, 8]
    assert len(raw) == 16 + 25 * 24 * 4
    back = read_features(p)
    np.testing.assert_allclose(back.lip, v.lip.astype(np.float32))
    p.write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        read_features(p)
