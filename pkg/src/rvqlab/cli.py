"""Command line entry point: ``rvqlab <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import asr, defense
from .attack import AttackConfig, bpda_eot, pgd
from .defense import DefenseKind, RvqCodec
from .errors import MissingConfig
from .harness.config import ExperimentConfig
from .harness.report import report_baseline_table, report_correlation, report_depth_curves
from .harness.sweep import SweepTable, run_sweep
from .signal import gen_corpus, read_manifest, write_corpus, write_wav

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def cmd_gen_corpus(a) -> int:
    corpus = gen_corpus(a.n, (a.min_len, a.max_len), a.seed, a.split)
    path = write_corpus(corpus, a.out)
    print(f"wrote {len(corpus)} utterances to {path}")
    return EXIT_OK


def cmd_train_asr(a) -> int:
    cfg = asr.TrainConfig(lr=a.lr, epochs=a.epochs, batch=a.batch, seed=a.seed)
    dev = read_manifest(a.dev) if a.dev else None
    history = []
    model = asr.train_asr(read_manifest(a.train), dev, cfg, history)
    model.save(a.out)
    Path(str(a.out) + ".history.json").write_text(json.dumps(history, indent=2) + "\n")
    last = history[-1] if history else {}
    print(f"saved model to {a.out}; last epoch {last}")
    return EXIT_OK


def cmd_train_codec(a) -> int:
    history = []
    codec = defense.train_codec(read_manifest(a.train), a.n_max, a.k, a.seed, a.max_frames, history)
    codec.save(a.out)
    print(f"saved {codec.n_max}-stage codec to {a.out}; residual energy {history[0]:.4g} -> {history[-1]:.4g}")
    return EXIT_OK


def cmd_attack(a) -> int:
    model = asr.AcousticModel.load(a.model)
    d = DefenseKind.parse(a.defense)
    codec = RvqCodec.load(a.codec) if a.codec else None
    corpus = list(read_manifest(a.corpus))[: a.limit]
    cfg = AttackConfig(a.eps, iterations=a.iters, eot_samples=a.eot_k, jitter_sigma=a.sigma, seed=a.seed)
    out = Path(a.out)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    with open(out / "attacks.jsonl", "w") as f:
        for u in corpus:
            if a.kind == "pgd":
                res = pgd(model, u.waveform, u.transcript, cfg)
            else:
                res = bpda_eot(model, d, codec, u.waveform, u.transcript, cfg)
            rel = f"wav/{u.id}.{a.kind}.wav"
            write_wav(out / rel, res.adversarial)
            f.write(json.dumps({"id": u.id, "eps": a.eps, "kind": a.kind, "defense": str(d),
                                "final_loss": res.final_loss, "delta_linf": float(np.max(np.abs(res.delta))),
                                "adv_wav_path": rel}) + "\n")
    print(f"attacked {len(corpus)} utterances; results in {out / 'attacks.jsonl'}")
    return EXIT_OK


def cmd_sweep(a) -> int:
    cfg = ExperimentConfig.load(a.config)
    if a.output_dir:
        cfg.output_dir = a.output_dir
    table = run_sweep(cfg)
    n_bad = len(table.failed)
    print(f"{len(table.records)} rows written to {cfg.output_dir} ({n_bad} failed)")
    return EXIT_PARTIAL if n_bad else EXIT_OK


def cmd_report(a) -> int:
    src = Path(a.sweep_dir)
    out = Path(a.out or src)
    table = SweepTable.from_csv(src / "sweep.csv")
    curves = report_depth_curves(table, out)
    for eps, s in curves["by_eps"].items():
        print(f"eps={eps}: argmin depth {s['argmin_depth']} interior={s['interior']} margin={s['margin']:.4f}")
    corr = report_correlation(table, out)
    print(f"spearman rho (pooled) = {corr['rho_pooled']}")
    try:
        rows = report_baseline_table(table, a.depth, a.eps, out)
        for r in rows:
            print(f"{r['attack']:5s} {r['defense']:10s} WER {r['wer_mean']:.4f} +- {r['wer_sem']:.4f}")
    except MissingConfig as e:
        print(f"baseline table skipped: {e}", file=sys.stderr)
    return EXIT_PARTIAL if table.failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rvqlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="synthesize a corpus split as WAV files plus a JSONL manifest")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", choices=("train", "dev", "test"), default="train")
    g.add_argument("--min-len", type=int, default=3)
    g.add_argument("--max-len", type=int, default=8)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train-asr", help="train the CTC recognizer")
    t.add_argument("--train", required=True, help="training manifest (JSONL)")
    t.add_argument("--dev", help="optional dev manifest, WER logged per epoch")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=asr.TrainConfig.epochs)
    t.add_argument("--lr", type=float, default=asr.TrainConfig.lr)
    t.add_argument("--batch", type=int, default=asr.TrainConfig.batch)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train_asr)

    c = sub.add_parser("train-codec", help="fit RVQ codebooks by stage-wise k-means")
    c.add_argument("--train", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--n-max", type=int, default=defense.N_MAX)
    c.add_argument("--k", type=int, default=defense.CODEBOOK_SIZE)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--max-frames", type=int, default=None)
    c.set_defaults(func=cmd_train_codec)

    at = sub.add_parser("attack", help="run PGD or BPDA+EOT on a corpus and save adversarial WAVs")
    at.add_argument("--kind", choices=("pgd", "bpda"), required=True)
    at.add_argument("--eps", type=float, required=True)
    at.add_argument("--iters", type=int, default=100)
    at.add_argument("--eot-k", type=int, default=8)
    at.add_argument("--sigma", type=float, default=0.001)
    at.add_argument("--defense", default="none", help="rvq:<n> | median:<w> | resample | none")
    at.add_argument("--seed", type=int, default=0)
    at.add_argument("--model", required=True)
    at.add_argument("--codec")
    at.add_argument("--corpus", required=True)
    at.add_argument("--limit", type=int, default=None)
    at.add_argument("--out", required=True)
    at.set_defaults(func=cmd_attack)

    s = sub.add_parser("sweep", help="run a config-driven depth x epsilon sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="depth curves, correlation and baseline table from a sweep")
    r.add_argument("--sweep-dir", required=True)
    r.add_argument("--out")
    r.add_argument("--depth", type=int, default=9)
    r.add_argument("--eps", type=float, default=0.02)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
