"""``sepderev`` command line: simulate, train, eval, ablate.

Exit codes: 0 success, 2 validation failure, 3 numerical divergence,
4 missing dependency.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from sepderev.mixing.manifest import read_manifest, write_manifest
from sepderev.mixing.sample import SourceBank, generate_samples
from sepderev.training.config import REGIMES, TrainConfig

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_DEPENDENCY = 0, 2, 3, 4
MAX_SKIP_FRACTION = 0.01

log = logging.getLogger("sepderev")


class MissingDependency(RuntimeError):
    pass


def _snr_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty SNR range {text!r}")
    return lo, hi


def _load_config(args, **overrides) -> TrainConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.config:
        return TrainConfig.load(args.config, **overrides)
    return TrainConfig(**overrides)


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.n <= 0:
        raise ValueError("nothing to generate (--n must be positive)")
    cfg = _load_config(args, K=args.k, snr_range=args.snr, chunk_seconds=args.chunk_seconds,
                       sample_rate=args.sample_rate)
    if args.sources:
        src = Path(args.sources)
        bank = SourceBank.from_dirs(src / "target", src / "interferer", rir_config=cfg.rir_config(),
                                    seed=cfg.seed)
        if bank.sample_rate != cfg.sample_rate:
            raise ValueError(f"source WAVs are {bank.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
    else:
        bank = cfg.make_bank(cfg.seed)
    samples = generate_samples(bank, cfg.mix_config(), args.n, cfg.seed)
    out = Path(args.out)
    write_manifest(samples, out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    read_manifest(out)  # read-back validation

    snrs = np.array([s.meta["snr_db"] for s in samples])
    counts, edges = np.histogram(snrs, bins=6, range=cfg.snr_range)
    print(f"wrote {len(samples)} samples to {out} ({cfg.chunk_seconds:g} s @ {cfg.sample_rate} Hz, K={cfg.K})")
    print(f"total duration {len(samples) * cfg.chunk_seconds:.1f} s")
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        print(f"  SNR [{lo:6.1f}, {hi:6.1f}) dB  {c:5d}")
    return EXIT_OK


# -- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    from sepderev.training import trainer

    cfg = _load_config(args, regime=args.regime)
    if args.regime == "C" and not args.derev_init:
        raise ValueError("regime C requires --derev-init (a pretrained dereverberation checkpoint)")
    if args.regime == "B" and not (args.sep_init and args.derev_init):
        raise ValueError("regime B needs --sep-init and --derev-init")
    data = None
    if args.data:
        samples = read_manifest(args.data)
        if len(samples[0].ladder) != cfg.K:
            raise ValueError(f"dataset ladder has {len(samples[0].ladder)} entries but config K={cfg.K}")
        data = trainer.DataSource(cfg, train_samples=samples)
    out = Path(args.out)
    kw = {"resume": args.resume, "max_epochs": args.max_epochs, "max_steps": args.max_steps}
    if args.regime == "P":
        path = trainer.pretrain_dereverb(cfg, out, data, **kw)
        print(f"dereverberator: {path}")
    elif args.regime == "A":
        path = trainer.train_separator(cfg, out, data, sep_init=args.sep_init, **kw)
        print(f"separator: {path}")
    elif args.regime == "B":
        # Inference-only cascade: check the pair is compatible and record it.
        from sepderev.models.checkpoint import load_dereverb, load_separator
        sep, derev = load_separator(args.sep_init), load_dereverb(args.derev_init)
        trainer._check_k(sep, cfg)
        trainer._check_compatible(sep, derev)
        out.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(args.sep_init, out / "separator.ckpt")
        shutil.copyfile(args.derev_init, out / "dereverb.ckpt")
        print(f"cascade: {out / 'separator.ckpt'} -> {out / 'dereverb.ckpt'}")
    else:
        sep_path, derev_path = trainer.train_joint(cfg, out, args.derev_init, args.sep_init, data, **kw)
        print(f"separator: {sep_path}\ndereverberator: {derev_path}")
    return EXIT_OK


# -- eval -------------------------------------------------------------------

def _build_system(name: str, sep_path, derev_path):
    from sepderev import evaluation as ev
    from sepderev.models.checkpoint import load_dereverb, load_separator

    def need(path, flag):
        if not path:
            raise ValueError(f"system {name!r} needs {flag}")
        return path

    if name == "noisy":
        return ev.noisy_system()
    if name == "identity":
        return lambda s: s.anechoic_target
    if name == "separator":
        return ev.separation_system(load_separator(need(sep_path, "--sep")))
    if name == "dereverb":
        return lambda s, d=load_dereverb(need(derev_path, "--derev")): d.dereverb(s.reverberant_target)
    sep, derev = load_separator(need(sep_path, "--sep")), load_dereverb(need(derev_path, "--derev"))
    if name == "cascade":
        return ev.cascade_system(sep, derev)
    return ev.derev_first_system(derev, sep)


def _check_pesq(cmd):
    if cmd and shutil.which(cmd) is None:
        raise MissingDependency(f"PESQ scorer not found: {cmd}")


def cmd_eval(args) -> int:
    from sepderev import evaluation as ev

    _check_pesq(args.pesq_cmd)
    samples = read_manifest(args.data)
    system = _build_system(args.system, args.sep, args.derev)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wav_dir = out / "wav" if args.write_wavs else None
    if wav_dir:
        wav_dir.mkdir(exist_ok=True)
    rows = ev.evaluate_system(args.system, system, samples, args.pesq_cmd, wav_dir)
    cols = ["system", "id", "snr_db", "sisdr_anech", "stoi_anech", "sisdr_rev", "stoi_rev", "pesq_anech", "error"]
    with open(out / "metrics.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    agg = ev.aggregate(rows)
    agg["system"] = args.system
    agg["mean_snr_db"] = float(np.mean([s.meta["snr_db"] for s in samples]))
    (out / "metrics.json").write_text(json.dumps(agg, indent=2))
    print(json.dumps(agg, indent=2))
    skipped = agg["n_skipped"] / max(len(rows), 1)
    if skipped > MAX_SKIP_FRACTION:
        print(f"error: {agg['n_skipped']} of {len(rows)} samples skipped", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


# -- ablate -----------------------------------------------------------------

def cmd_ablate(args) -> int:
    from sepderev import evaluation as ev
    from sepderev.models.checkpoint import load_dereverb, load_separator

    _check_pesq(args.pesq_cmd)
    samples = read_manifest(args.data)

    def opt(path, loader):
        return loader(path) if path else None

    report = ev.run_ablation(samples, str(Path(args.data).resolve().name),
                             opt(args.sep_a, load_separator), opt(args.derev_p, load_dereverb),
                             opt(args.sep_c, load_separator), opt(args.derev_c, load_dereverb),
                             args.pesq_cmd, config={k: v for k, v in vars(args).items() if k != "func"})
    report.write(args.out)
    for r in report.rows:
        val = "absent" if not r.present else f"SI-SDR {r.sisdr:7.2f} dB  STOI {r.stoi:.3f}  n={r.n_samples}"
        print(f"{r.name:26s} {val}")
    print(json.dumps(report.trends, indent=2))
    if any(t.get("status") == "fail" for t in report.trends.values() if isinstance(t, dict)):
        return EXIT_VALIDATION
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sepderev", description="Separation-before-dereverberation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="TOML or JSON training config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required)

    s = sub.add_parser("simulate", help="write a static evaluation dataset")
    common(s)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--snr", type=_snr_range)
    s.add_argument("--k", type=int)
    s.add_argument("--chunk-seconds", type=float)
    s.add_argument("--sample-rate", type=int)
    s.add_argument("--sources", help="directory with target/ and interferer/ WAV subdirectories")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="run a training regime")
    common(t)
    t.add_argument("--regime", choices=REGIMES, required=True)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--derev-init")
    t.add_argument("--sep-init")
    t.add_argument("--data", help="static dataset instead of live dynamic mixing")
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score one system on a dataset")
    common(e)
    e.add_argument("--data", required=True)
    e.add_argument("--system", required=True,
                   choices=("noisy", "identity", "separator", "dereverb", "cascade", "derev-first"))
    e.add_argument("--sep")
    e.add_argument("--derev")
    e.add_argument("--pesq-cmd")
    e.add_argument("--write-wavs", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="five-arm ablation report")
    common(a)
    a.add_argument("--data", required=True)
    a.add_argument("--sep-a", help="regime A separator")
    a.add_argument("--derev-p", help="regime P dereverberator")
    a.add_argument("--sep-c", help="regime C separator")
    a.add_argument("--derev-c", help="regime C dereverberator")
    a.add_argument("--pesq-cmd")
    a.set_defaults(func=cmd_ablate)
    return p


def _join_negative_values(argv: list[str]) -> list[str]:
    # "--snr -18:6" would otherwise be read as two flags.
    out, it = [], iter(argv)
    for tok in it:
        if tok == "--snr":
            tok = f"--snr={next(it, '')}"
        out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_negative_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except MissingDependency as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ImportError as exc:
        print(f"error: missing dependency: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
