import json

import numpy as np
import pytest
import torch

from sepderev.mixing.sample import generate_samples
from sepderev.models.checkpoint import load_checkpoint, load_dereverb, load_separator, save_model
from sepderev.models.dereverb import Dereverberator
from sepderev.models.separator import Separator
from sepderev.training import PlateauSchedule, TrainConfig
from sepderev.training.trainer import (
    DataSource, EPOCH_LOG, STEP_LOG, collate, param_digest, pretrain_dereverb, run_cascade, run_derev_first,
    separator_losses, train_joint, train_separator,
)


def tiny_cfg(**kw):
    base = dict(sample_rate=8000, fft_size=256, hop=128, chunk_seconds=1.0, K=2, channels=4, visual_channels=4,
                block_hidden=4, derev_channels=4, samples_per_epoch=4, val_samples=2, bank_speakers=2,
                bank_utterances=1, bank_duration=2.0, batch_size=2, seed=3)
    return TrainConfig(**{**base, **kw})


# -- schedule ----------------------------------------------------------------

def drive(sched, losses):
    out = []
    for v in losses:
        out.append(sched.step(v))
        if sched.stopped:
            break
    return out


@pytest.mark.parametrize("halve,stop", [(3, 10), (15, 30)])
def test_schedule_plateau_law(halve, stop):
    s = PlateauSchedule(1e-3, halve, stop)
    events = drive(s, [1.0] + [1.0] * 100)
    assert events[0] == ["improved"]
    halved_at = [i for i, e in enumerate(events[1:], 1) if e == ["halved"]]
    assert halved_at == list(range(halve, stop, halve))
    assert events[-1] == ["stopped"] and len(events) == stop + 1
    assert s.halvings == len(halved_at)
    assert s.lr == 1e-3 / 2 ** len(halved_at)


def test_schedule_3_10_exact():
    s = PlateauSchedule(1e-3, 3, 10)
    events = drive(s, [5.0, 4.0] + [4.0] * 20)
    bad = [e for e in events[2:]]
    assert [i + 1 for i, e in enumerate(bad) if e == ["halved"]] == [3, 6, 9]
    assert bad[-1] == ["stopped"] and len(bad) == 10
    assert s.lr == 1e-3 / 8


def test_schedule_first_halving_example():
    s = PlateauSchedule(1e-3, 3, 10)
    drive(s, [1.0, 1.0, 1.0, 1.0])
    assert s.lr == 0.0005


def test_schedule_improvement_margin_and_reset():
    s = PlateauSchedule(1e-3, 3, 10)
    s.step(1.0)
    assert s.step(1.0 - 5e-7) == []  # below the 1e-6 margin
    assert s.step(1.0 - 2e-6) == ["improved"]
    s.step(2.0), s.step(2.0)
    assert s.step(0.5) == ["improved"] and s.since_halving == 0 and s.since_best == 0


def test_schedule_errors_and_state():
    with pytest.raises(ValueError):
        PlateauSchedule(1e-3, 5, 5)
    s = PlateauSchedule(1e-3, 1, 2)
    drive(s, [1.0, 1.0, 1.0])
    assert s.stopped
    with pytest.raises(RuntimeError):
        s.step(0.0)
    with pytest.raises(FloatingPointError):
        PlateauSchedule().step(float("nan"))
    t = PlateauSchedule()
    t.load_state_dict(s.state_dict())
    assert t == s


# -- config ------------------------------------------------------------------

def test_config_presets_and_files(tmp_path):
    post = TrainConfig.preset("post")
    assert (post.lr_halve_patience, post.stop_patience, post.stft_loss) == (15, 30, True)
    comp = TrainConfig.preset("competition")
    assert (comp.lr_halve_patience, comp.stop_patience, comp.lr_init) == (3, 10, 1e-3)
    (tmp_path / "c.toml").write_text('regime = "P"\nK = 3\nsnr_range = [-5.0, 5.0]\n')
    cfg = TrainConfig.load(tmp_path / "c.toml", seed=9)
    assert cfg.regime == "P" and cfg.K == 3 and cfg.snr_range == (-5.0, 5.0) and cfg.seed == 9
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.load(tmp_path / "c.json") == cfg
    (tmp_path / "bad.toml").write_text("warp_factor = 9\n")
    with pytest.raises(ValueError, match="warp_factor"):
        TrainConfig.load(tmp_path / "bad.toml")
    with pytest.raises(ValueError):
        TrainConfig(regime="Z")
    with pytest.raises(ValueError):
        TrainConfig.preset("nope")


# -- training runs -----------------------------------------------------------

def test_separator_run_logs_and_live_identities(tmp_path):
    cfg = tiny_cfg(max_epochs=2)
    ckpt = train_separator(cfg, tmp_path)
    assert ckpt.exists() and load_separator(ckpt).cfg.num_blocks == 2
    recs = [json.loads(l) for l in (tmp_path / EPOCH_LOG).read_text().splitlines()]
    assert [r["epoch"] for r in recs] == [0, 1] and recs[0]["lr"] == 1e-3
    steps = [json.loads(l) for l in (tmp_path / STEP_LOG).read_text().splitlines()]
    assert len(steps) == 4
    for s in steps:
        assert abs(s["total"] - np.mean(s["per_layer"])) < 1e-9
        assert abs(s["joint"] - s["separate"] - s["dereverb"]) < 1e-9


def test_max_steps_bounds_training(tmp_path):
    cfg = tiny_cfg(max_epochs=5)
    train_separator(cfg, tmp_path, max_steps=3)
    assert len((tmp_path / STEP_LOG).read_text().splitlines()) == 3


def test_epoch1_loss_is_deterministic(tmp_path):
    cfg = tiny_cfg(max_epochs=1)
    losses = []
    for run in ("a", "b"):
        train_separator(cfg, tmp_path / run)
        losses.append(json.loads((tmp_path / run / EPOCH_LOG).read_text().splitlines()[0])["train"]["joint"])
    assert losses[0] == losses[1]


def test_resume_matches_uninterrupted(tmp_path):
    cfg = tiny_cfg(max_epochs=4)
    train_separator(cfg, tmp_path / "full")
    train_separator(cfg, tmp_path / "split", max_epochs=2)
    train_separator(cfg, tmp_path / "split", resume=True)
    full = [json.loads(l) for l in (tmp_path / "full" / EPOCH_LOG).read_text().splitlines()]
    split = [json.loads(l) for l in (tmp_path / "split" / EPOCH_LOG).read_text().splitlines()]
    assert len(full) == len(split) == 4
    for a, b in zip(full, split):
        assert abs(a["train"]["joint"] - b["train"]["joint"]) < 1e-6
        assert abs(a["val_loss"] - b["val_loss"]) < 1e-6


def test_k_mismatch_is_startup_error(tmp_path):
    sep_path = train_separator(tiny_cfg(max_epochs=1), tmp_path / "a")
    with pytest.raises(ValueError, match="K=3"):
        train_separator(tiny_cfg(K=3), tmp_path / "b", sep_init=sep_path)


def test_regime_c_requires_derev_init(tmp_path):
    with pytest.raises(ValueError, match="pretrained"):
        train_joint(tiny_cfg(), tmp_path, derev_init=None)


def test_missing_anechoic_target_rejected():
    cfg = tiny_cfg()
    s = generate_samples(cfg.train_bank(), cfg.mix_config(), 1, seed=0)[0]
    s.anechoic_target = None
    with pytest.raises(ValueError, match="anechoic"):
        collate([s])


def test_regime_p_then_c(tmp_path):
    cfg = tiny_cfg(max_epochs=1)
    derev = pretrain_dereverb(cfg, tmp_path / "p")
    assert "val_sisdr_improvement_db" in json.loads((tmp_path / "p" / "summary.json").read_text())
    sep = train_separator(cfg, tmp_path / "a")
    seen = []
    sep_c, derev_c = train_joint(cfg, tmp_path / "c", derev, sep, on_step=seen.append)
    assert len(seen) == 2
    for r in seen:
        assert abs(r.joint - (r.separate + r.dereverb)) < 1e-9 and r.dereverb > 0
    assert load_checkpoint(sep_c).kind == "separator" and load_checkpoint(derev_c).kind == "dereverb"


# -- regime B ----------------------------------------------------------------

def test_cascade_with_identity_dereverb_equals_separator(tmp_path):
    cfg = tiny_cfg()
    torch.manual_seed(0)
    sep, derev = Separator(cfg.separator_config()).eval(), Dereverberator(cfg.dereverb_config()).eval()
    s = generate_samples(cfg.val_bank(), cfg.mix_config(), 1, seed=0)[0]
    sep_only = sep.separate(s.mixture, s.visual).final_estimate
    out = run_cascade(sep, derev, s.mixture, s.visual)
    assert len(out) == len(s.mixture)
    np.testing.assert_allclose(out.samples, sep_only.samples, atol=1e-5)
    first = run_derev_first(derev, sep, s.mixture, s.visual)
    assert len(first) == len(s.mixture)
    np.testing.assert_array_equal(first.samples, run_derev_first(derev, sep, s.mixture, s.visual).samples)


def test_frozen_modules_unchanged_by_cascade(tmp_path):
    cfg = tiny_cfg()
    torch.manual_seed(1)
    save_model(tmp_path / "s.ckpt", Separator(cfg.separator_config()), "separator")
    save_model(tmp_path / "d.ckpt", Dereverberator(cfg.dereverb_config()), "dereverb")
    sep, derev = load_separator(tmp_path / "s.ckpt"), load_dereverb(tmp_path / "d.ckpt")
    before = param_digest(sep), param_digest(derev)
    for s in generate_samples(cfg.val_bank(), cfg.mix_config(), 3, seed=0):
        run_cascade(sep, derev, s.mixture, s.visual)
    assert (param_digest(sep), param_digest(derev)) == before


def test_cascade_rejects_incompatible_stft(tmp_path):
    cfg = tiny_cfg()
    sep = Separator(cfg.separator_config())
    derev = Dereverberator(tiny_cfg(fft_size=512, hop=128).dereverb_config())
    s = generate_samples(cfg.val_bank(), cfg.mix_config(), 1, seed=0)[0]
    with pytest.raises(ValueError, match="incompatible"):
        run_cascade(sep, derev, s.mixture, s.visual)


# -- STFT loss toggle --------------------------------------------------------

def test_stft_loss_terms_reported_when_enabled():
    cfg = tiny_cfg()
    sep = Separator(cfg.separator_config())
    batch = collate(generate_samples(cfg.val_bank(), cfg.mix_config(), 2, seed=0))
    _, off, rep_off = separator_losses(sep, batch, cfg, False)
    _, on, rep_on = separator_losses(sep, batch, cfg, True)
    assert rep_off.stft_terms == {}
    assert set(rep_on.stft_terms) == {"res0", "res1", "res2"}
    extra = sum(t["spectral_convergence"] + t["log_magnitude"] for t in rep_on.stft_terms.values()) / 3
    assert float(on.detach()) == pytest.approx(float(off.detach()) + extra, abs=1e-5)


def test_stft_loss_switches_on_below_threshold(tmp_path):
    cfg = tiny_cfg(stft_loss=True, lr_init=2e-4, max_epochs=1)
    train_separator(cfg, tmp_path)
    rec = json.loads((tmp_path / EPOCH_LOG).read_text().splitlines()[0])
    assert "stft-loss-enabled" in rec["events"]
    cfg = tiny_cfg(stft_loss=True, max_epochs=1)
    train_separator(cfg, tmp_path / "hi")
    rec = json.loads((tmp_path / "hi" / EPOCH_LOG).read_text().splitlines()[0])
    assert "stft-loss-enabled" not in rec["events"]


def test_data_source_static_and_dynamic():
    cfg = tiny_cfg()
    dyn = DataSource(cfg, val_samples=[])
    a, b = dyn.epoch(0), dyn.epoch(1)
    assert len(a) == cfg.samples_per_epoch
    assert not np.array_equal(a[0].mixture.samples, b[0].mixture.samples)
    static = DataSource(cfg, train_samples=a, val_samples=[])
    assert sorted(s.meta["id"] for s in static.epoch(5)) == sorted(s.meta["id"] for s in a)
