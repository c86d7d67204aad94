"""Dynamic mixture simulation and progressive target ladders."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sepderev.audio import AudioClip, convolve_rir, gain_for_snr, rms, snr_db
from sepderev.metrics import sisdr
from sepderev.mixing.music import MusicConfig, synth_music
from sepderev.mixing.rir import RirConfig, synth_rir
from sepderev.mixing.speech import SpeakerProfile, synth_utterance

SILENCE_RMS = 1e-6
MAX_OFFSET_TRIES = 10


@dataclass
class SourceBank:
    """Dry utterances plus the procedures that synthesise music and rooms."""

    target_utterances: list
    interferer_utterances: list
    music_generator_config: MusicConfig = field(default_factory=MusicConfig)
    rir_config: RirConfig = field(default_factory=RirConfig)
    seed: int = 0
    target_ids: list | None = None
    interferer_ids: list | None = None

    def __post_init__(self):
        if not self.target_utterances or not self.interferer_utterances:
            raise ValueError("SourceBank needs at least one target and one interferer utterance")
        rates = {c.sample_rate for c in self.target_utterances + self.interferer_utterances}
        if len(rates) != 1:
            raise ValueError(f"all bank clips must share one sample rate, got {sorted(rates)}")
        if self.target_ids is None:
            self.target_ids = [f"t{i:04d}" for i in range(len(self.target_utterances))]
        if self.interferer_ids is None:
            self.interferer_ids = [f"i{i:04d}" for i in range(len(self.interferer_utterances))]

    @property
    def sample_rate(self) -> int:
        return self.target_utterances[0].sample_rate

    @classmethod
    def synthetic(cls, seed: int, sample_rate: int = 16000, n_target_speakers: int = 8,
                  n_interferer_speakers: int = 8, utterances_per_speaker: int = 4,
                  duration: float = 4.0, music: MusicConfig | None = None,
                  rir: RirConfig | None = None) -> "SourceBank":
        """Bank of synthetic speakers; different seeds give disjoint speaker sets."""
        rng = np.random.default_rng([seed, 0x5BEEC])
        targets, interferers, t_ids, i_ids = [], [], [], []
        for pool, ids, n_spk, tag in ((targets, t_ids, n_target_speakers, "t"),
                                      (interferers, i_ids, n_interferer_speakers, "i")):
            for s in range(n_spk):
                speaker = SpeakerProfile.draw(rng)
                for u in range(utterances_per_speaker):
                    pool.append(synth_utterance(speaker, duration, sample_rate, rng))
                    ids.append(f"{tag}{seed}-s{s:02d}-u{u:02d}")
        return cls(targets, interferers, music or MusicConfig(), rir or RirConfig(), seed, t_ids, i_ids)

    @classmethod
    def from_dirs(cls, target_dir, interferer_dir, **kwargs) -> "SourceBank":
        from sepderev.wavio import read_wav

        def load(d):
            paths = sorted(Path(d).glob("*.wav"))
            if not paths:
                raise ValueError(f"no WAV files in {d}")
            return [read_wav(p, channel=0) for p in paths], [p.stem for p in paths]

        t, t_ids = load(target_dir)
        i, i_ids = load(interferer_dir)
        return cls(t, i, target_ids=t_ids, interferer_ids=i_ids, **kwargs)


@dataclass
class ProgressiveLadder:
    """Per-block targets: K-1 progressively cleaner mixtures, then the reverberant target."""

    initial_snr_db: float
    step_db: float
    num_layers: int
    targets: list

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, k: int) -> AudioClip:
        return self.targets[k]

    def entry_snrs(self) -> list[float]:
        return [self.initial_snr_db + k * self.step_db for k in range(1, self.num_layers)]


@dataclass
class VisualFeatureSequence:
    lip: np.ndarray
    expression: np.ndarray
    fps: int = 25

    def __post_init__(self):
        self.lip = np.asarray(self.lip, dtype=np.float64)
        self.expression = np.asarray(self.expression, dtype=np.float64)
        if self.lip.shape[0] != self.expression.shape[0]:
            raise ValueError("lip and expression streams must have the same number of frames")
        if not (np.all(np.isfinite(self.lip)) and np.all(np.isfinite(self.expression))):
            raise ValueError("visual features must be finite")

    @property
    def n_frames(self) -> int:
        return self.lip.shape[0]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.lip, self.expression], axis=1)


@dataclass
class MixtureSample:
    mixture: AudioClip
    reverberant_target: AudioClip
    anechoic_target: AudioClip
    interference_sum: AudioClip
    ladder: ProgressiveLadder
    visual: VisualFeatureSequence
    meta: dict

    def validate(self, snr_tol_db: float = 1e-6, add_tol: float = 1e-9, name: str = "") -> None:
        """Check the mixing invariants; raises ValueError naming the sample."""
        label = name or self.meta.get("id", "<sample>")

        def fail(msg):
            raise ValueError(f"sample {label}: {msg}")

        sr = self.mixture.sample_rate
        n = len(self.mixture)
        expected_len = int(round(self.meta["chunk_seconds"] * sr))
        if n != expected_len:
            fail(f"mixture has {n} samples, expected {expected_len}")
        for clip, what in ((self.reverberant_target, "reverberant target"),
                           (self.anechoic_target, "anechoic target"),
                           (self.interference_sum, "interference"), *((c, "ladder entry") for c in self.ladder.targets)):
            if len(clip) != n or clip.sample_rate != sr:
                fail(f"{what} does not match the mixture's length/sample rate")
        resid = self.mixture.samples - (self.reverberant_target.samples + self.interference_sum.samples)
        if np.max(np.abs(resid)) > add_tol:
            fail(f"mixture != target + interference (max error {np.max(np.abs(resid)):.3g})")
        measured = snr_db(self.reverberant_target, self.interference_sum)
        if abs(measured - self.meta["snr_db"]) > snr_tol_db:
            fail(f"measured SNR {measured:.9f} dB != requested {self.meta['snr_db']:.9f} dB")
        lad = self.ladder
        if len(lad) != lad.num_layers:
            fail(f"ladder has {len(lad)} entries, expected {lad.num_layers}")
        if not np.array_equal(lad.targets[-1].samples, self.reverberant_target.samples):
            fail("last ladder entry is not the reverberant target")
        for k, want in enumerate(lad.entry_snrs(), start=1):
            got = snr_db(self.reverberant_target, lad.targets[k - 1] - self.reverberant_target)
            if abs(got - want) > snr_tol_db:
                fail(f"ladder entry {k} at {got:.9f} dB, expected {want:.9f} dB")
        fps = self.visual.fps
        n_v = int(round(self.meta["chunk_seconds"] * fps))
        if self.visual.n_frames != n_v:
            fail(f"visual stream has {self.visual.n_frames} frames, expected {n_v}")


def build_ladder(reverberant_target: AudioClip, interference_sum: AudioClip, s0: float,
                 step: float = 5.0, K: int = 6) -> ProgressiveLadder:
    """Intermediate targets for progressive training.

    Entry k (1 <= k <= K-1) is the target plus the interference rescaled to
    SNR ``s0 + k * step``; the target waveform itself is never touched. Entry
    K is the reverberant target alone.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if rms(interference_sum) <= 0.0:
        raise ValueError("cannot build a ladder from silent interference")
    targets = []
    for k in range(1, K):
        g = 10.0 ** (-k * step / 20.0)
        targets.append(reverberant_target + interference_sum.scaled(g))
    targets.append(reverberant_target)
    return ProgressiveLadder(float(s0), float(step), K, targets)


def gen_visual_features(anechoic_target: AudioClip, fps: int = 25, d_lip: int = 16, d_expr: int = 8,
                        rng: np.random.Generator | None = None, noise_std: float = 0.05) -> VisualFeatureSequence:
    """Surrogate lip/expression streams derived from the dry target.

    Lip channels per video frame: [0] frame RMS relative to the chunk peak,
    [1] floored log-energy, [2:] log band energies of the frame spectrum with
    small seeded noise. Expression channels are a slow seeded random walk
    unrelated to the audio.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    sr = anechoic_target.sample_rate
    if sr % fps:
        raise ValueError(f"sample rate {sr} is not a whole number of samples per video frame at {fps} fps")
    if d_lip < 2:
        raise ValueError("d_lip must be >= 2 (energy and log-energy channels)")
    spf = sr // fps
    n_v = len(anechoic_target) // spf
    if n_v * spf != len(anechoic_target):
        raise ValueError(f"{len(anechoic_target)} samples is not a whole number of {spf}-sample video frames")
    frames = anechoic_target.samples.reshape(n_v, spf)
    frame_rms = np.sqrt(np.mean(frames ** 2, axis=1))
    peak = frame_rms.max()
    rel = frame_rms / peak if peak > 0 else np.zeros(n_v)
    floor = 1e-4
    lip = np.empty((n_v, d_lip))
    lip[:, 0] = rel
    lip[:, 1] = np.log10(rel ** 2 + floor) / 4.0
    n_bands = d_lip - 2
    if n_bands:
        power = np.abs(np.fft.rfft(frames * np.hanning(spf)[None, :], axis=1)) ** 2
        edges = np.linspace(0, power.shape[1], n_bands + 1).astype(int)
        bands = np.stack([power[:, a:b].sum(axis=1) for a, b in zip(edges[:-1], edges[1:])], axis=1)
        ref = bands.max() if bands.max() > 0 else 1.0
        lip[:, 2:] = np.log10(bands / ref + floor) / 4.0 + noise_std * rng.standard_normal((n_v, n_bands))
    start = 0.5 * rng.standard_normal(d_expr)
    walk = np.cumsum(0.05 * rng.standard_normal((n_v, d_expr)), axis=0)
    expression = start[None, :] + walk
    return VisualFeatureSequence(lip, expression, fps)


@dataclass(frozen=True)
class MixConfig:
    """Knobs of the dynamic mixing recipe."""

    sample_rate: int = 16000
    chunk_seconds: float = 3.0
    snr_range: tuple[float, float] = (-18.0, 6.0)
    num_layers: int = 6
    step_db: float = 5.0
    fps: int = 25
    d_lip: int = 16
    d_expr: int = 8
    interferer_counts: tuple[int, ...] = (1, 2)
    music_prob: float = 0.5
    music_level_db: tuple[float, float] = (-6.0, 0.0)

    @property
    def visual_dim(self) -> int:
        return self.d_lip + self.d_expr

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MixConfig":
        d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**d)


def _chunk_offset(n_avail: int, n_chunk: int, rng: np.random.Generator) -> int:
    if n_avail < n_chunk:
        raise ValueError(f"source of {n_avail} samples is shorter than the {n_chunk}-sample chunk")
    return int(rng.integers(0, n_avail - n_chunk + 1))


def _draw_chunk(clip: AudioClip, n_chunk: int, rng: np.random.Generator, what: str) -> tuple[int, AudioClip]:
    for _ in range(MAX_OFFSET_TRIES):
        off = _chunk_offset(len(clip), n_chunk, rng)
        seg = clip.segment(off, n_chunk)
        if rms(seg) >= SILENCE_RMS:
            return off, seg
    raise ValueError(f"unusable source: {what} gave silent chunks in {MAX_OFFSET_TRIES} tries")


def build_sample(bank: SourceBank, snr_db: float, chunk_seconds: float, num_interfering_speakers: int,
                 include_music: bool, K: int, rng: np.random.Generator, cfg: MixConfig | None = None) -> MixtureSample:
    """Simulate one reverberant mixture with its progressive ladder.

    The target and every interferer get their own impulse response drawn for
    one shared room (common T60). Interferer chunks are level-normalised,
    summed (music at a random relative level), and the sum is scaled so the
    reverberant target sits at exactly ``snr_db`` above it.
    """
    cfg = cfg or MixConfig(sample_rate=bank.sample_rate, chunk_seconds=chunk_seconds, num_layers=K)
    lo, hi = cfg.snr_range
    if not lo <= snr_db <= hi:
        raise ValueError(f"snr_db {snr_db} outside configured range [{lo}, {hi}]")
    if K < 1:
        raise ValueError("K must be >= 1")
    if num_interfering_speakers <= 0 and not include_music:
        raise ValueError("no interference: need at least one interfering speaker or music")
    sr = bank.sample_rate
    n_chunk = int(round(chunk_seconds * sr))
    if n_chunk <= 0:
        raise ValueError("chunk_seconds must be positive")
    rcfg = bank.rir_config
    t60 = rcfg.draw_t60(rng)

    t_idx = int(rng.integers(len(bank.target_utterances)))
    dry = bank.target_utterances[t_idx]
    drr = rcfg.draw_drr(rng)
    target_rir = synth_rir(rcfg, rng, sr, t60=t60, drr_db=drr)
    wet = convolve_rir(dry, target_rir)
    offset, anech = _draw_chunk(dry, n_chunk, rng, f"target {bank.target_ids[t_idx]}")
    rev = wet.segment(offset, n_chunk)

    interference = np.zeros(n_chunk)
    i_ids = []
    for _ in range(num_interfering_speakers):
        i_idx = int(rng.integers(len(bank.interferer_utterances)))
        i_wet = convolve_rir(bank.interferer_utterances[i_idx], synth_rir(rcfg, rng, sr, t60=t60))
        _, seg = _draw_chunk(i_wet, n_chunk, rng, f"interferer {bank.interferer_ids[i_idx]}")
        interference += seg.samples / rms(seg)
        i_ids.append(bank.interferer_ids[i_idx])
    if include_music:
        music = synth_music(bank.music_generator_config, chunk_seconds, rng, sr)
        music = convolve_rir(music, synth_rir(rcfg, rng, sr, t60=t60))
        if rms(music) > 0:
            level = 10.0 ** (rng.uniform(*cfg.music_level_db) / 20.0)
            interference += level * music.samples / rms(music)
    interf = AudioClip(interference, sr)
    g = gain_for_snr(rev, interf, snr_db)
    interf = interf.scaled(g)
    mixture = rev + interf

    ladder = build_ladder(rev, interf, snr_db, cfg.step_db, K)
    visual = gen_visual_features(anech, cfg.fps, cfg.d_lip, cfg.d_expr, rng)
    meta = {
        "snr_db": float(snr_db),
        "t60": t60,
        "drr_db": drr,
        "target_id": bank.target_ids[t_idx],
        "interferer_ids": i_ids,
        "music": bool(include_music),
        "chunk_offset": offset,
        "chunk_seconds": float(chunk_seconds),
        "sample_rate": sr,
        "num_layers": K,
        "step_db": float(cfg.step_db),
    }
    return MixtureSample(mixture, rev, anech, interf, ladder, visual, meta)


def draw_sample(bank: SourceBank, cfg: MixConfig, rng: np.random.Generator) -> MixtureSample:
    """One dynamic-mixing draw: random SNR, interferer count, and music on/off."""
    snr = float(rng.uniform(*cfg.snr_range))
    n_int = int(rng.choice(cfg.interferer_counts))
    music = bool(rng.random() < cfg.music_prob)
    return build_sample(bank, snr, cfg.chunk_seconds, n_int, music, cfg.num_layers, rng, cfg)


def sample_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator per (seed, epoch, index, ...) so draws do not depend on order."""
    return np.random.default_rng([seed, *stream])


def generate_samples(bank: SourceBank, cfg: MixConfig, n: int, seed: int, epoch: int = 0) -> list[MixtureSample]:
    samples = []
    for i in range(n):
        s = draw_sample(bank, cfg, sample_rng(seed, epoch, i))
        s.meta["id"] = f"s{seed}-e{epoch}-{i:05d}"
        samples.append(s)
    return samples


def ladder_sisdr_profile(ladder: ProgressiveLadder, reverberant_target: AudioClip) -> list[float]:
    return [sisdr(entry, reverberant_target) for entry in ladder.targets]
