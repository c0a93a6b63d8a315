"""Depth x epsilon sweeps with per-row error isolation and deterministic CSV output."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..asr import AcousticModel
from ..attack import AttackConfig, bpda_eot, pgd
from ..defense import DefenseKind, RvqCodec, apply_array
from ..errors import InvalidArgument
from ..metrics import CSV_COLUMNS, EvalRecord, ccr, delta_wer, mean_sem, snr, wer
from ..signal import read_manifest
from .config import ExperimentConfig

log = logging.getLogger(__name__)

WORKERS_ENV = "RVQLAB_WORKERS"
ROW_COLUMNS = CSV_COLUMNS + ("error",)
AGG_COLUMNS = ("attack", "defense", "depth", "eps", "seed", "n", "wer_clean_mean", "wer_adv_mean",
               "wer_adv_sem", "delta_wer_mean", "delta_wer_sem", "ccr_mean", "ccr_sem", "snr_db_mean")


@dataclass
class SweepTable:
    records: list = field(default_factory=list)

    @property
    def failed(self) -> list:
        return [r for r in self.records if r.error]

    @property
    def ok(self) -> list:
        return [r for r in self.records if not r.error]

    def aggregates(self, by_seed: bool = True) -> list[dict]:
        """Mean and standard error over utterances per configuration, in first-seen order."""
        groups = defaultdict(list)
        for r in self.ok:
            groups[(r.attack, r.defense, r.depth, r.eps, r.seed if by_seed else "all")].append(r)
        out = []
        for (attack, defense, depth, eps, seed), rows in groups.items():
            wa = mean_sem([r.wer_adv for r in rows])
            dw = mean_sem([r.delta_wer for r in rows])
            cc = mean_sem([r.ccr for r in rows]) if rows[0].ccr is not None else (None, None)
            out.append({
                "attack": attack, "defense": defense, "depth": depth, "eps": eps, "seed": seed,
                "n": len(rows), "wer_clean_mean": float(np.mean([r.wer_clean for r in rows])),
                "wer_adv_mean": wa[0], "wer_adv_sem": wa[1], "delta_wer_mean": dw[0], "delta_wer_sem": dw[1],
                "ccr_mean": cc[0], "ccr_sem": cc[1], "snr_db_mean": float(np.mean([r.snr_db for r in rows])),
            })
        return out

    def select(self, **match) -> list:
        return [r for r in self.ok if all(getattr(r, k) == v for k, v in match.items())]

    # -- CSV

    def to_csv(self) -> str:
        return _csv_text(ROW_COLUMNS, ([getattr(r, c) for c in ROW_COLUMNS] for r in self.records))

    def aggregates_csv(self, by_seed: bool = True) -> str:
        return _csv_text(AGG_COLUMNS, ([a[c] for c in AGG_COLUMNS] for a in self.aggregates(by_seed)))

    @classmethod
    def from_csv(cls, path) -> "SweepTable":
        recs = []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                recs.append(EvalRecord(
                    id=row["id"], defense=row["defense"], depth=_opt(row["depth"], int),
                    eps=float(row["eps"]), attack=row["attack"], wer_clean=_opt(row["wer_clean"], float),
                    wer_adv=_opt(row["wer_adv"], float), delta_wer=_opt(row["delta_wer"], float),
                    ccr=_opt(row["ccr"], float), snr_db=_opt(row["snr_db"], float), seed=int(row["seed"]),
                    error=row.get("error", "")))
        return cls(recs)


def _opt(s: str, conv):
    return conv(s) if s != "" else None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------- jobs

def select_utterances(n_total: int, n_utts: int | None, seed: int) -> list[int]:
    """Seed-dependent subset of the evaluation corpus (all of it when n_utts is None)."""
    if n_utts is None or n_utts >= n_total:
        return list(range(n_total))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    return sorted(int(i) for i in rng.choice(n_total, n_utts, replace=False))


def plan_jobs(cfg: ExperimentConfig, n_total: int) -> list[tuple]:
    """Jobs in deterministic config order. A PGD job covers every defense, since the
    perturbation does not depend on it; a BPDA job covers one defense."""
    jobs = []
    for seed in cfg.seeds:
        for ui in select_utterances(n_total, cfg.n_utts, seed):
            if "pgd" in cfg.attacks:
                for eps in [0.0] + [e for e in cfg.pgd_eps if e != 0]:
                    jobs.append(("pgd", int(seed), ui, float(eps), None))
            if "bpda" in cfg.attacks:
                for spec in cfg.bpda_defenses:
                    for eps in [0.0] + [e for e in cfg.bpda_eps if e != 0]:
                        jobs.append(("bpda", int(seed), ui, float(eps), str(DefenseKind.parse(spec))))
    return jobs


class _Context:
    """Loaded artifacts shared by all jobs of a sweep (one copy per worker process)."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.corpus = list(read_manifest(cfg.corpus))
        self.model = AcousticModel.load(cfg.model_path)
        self.codec = RvqCodec.load(cfg.codec_path)
        bpda = cfg.bpda_defenses if "bpda" in cfg.attacks else []
        self.max_depth = max([int(d) for d in cfg.depths] + [DefenseKind.parse(s).depth or 1 for s in bpda])
        if self.max_depth > self.codec.n_max:
            raise InvalidArgument(f"config asks for depth {self.max_depth} but the codec has "
                                  f"{self.codec.n_max} stages")


_CTX: _Context | None = None


def _init_worker(cfg: ExperimentConfig):
    global _CTX
    _CTX = _Context(cfg)


def _records_for(ctx, kind, seed, utt, eps, x, adv, defenses, tokens=None):
    recs = []
    for spec in defenses:
        d = DefenseKind.parse(spec)
        clean_out = apply_array(d, x, ctx.codec)
        adv_out = apply_array(d, adv, ctx.codec) if eps > 0 else clean_out
        c = None
        if d.kind == "rvq":
            if tokens is None:
                tc, ta = ctx.codec.encode(x, d.depth), ctx.codec.encode(adv, d.depth)
            else:
                tc, ta = tokens[0][:, :d.depth], tokens[1][:, :d.depth]
            c = ccr(tc, ta)
        ref = utt.transcript
        recs.append(EvalRecord(
            id=utt.id, defense=str(d), depth=d.depth, eps=eps, attack=kind,
            wer_clean=wer(ref, ctx.model.transcribe(clean_out)),
            wer_adv=wer(ref, ctx.model.transcribe(adv_out)),
            delta_wer=None, ccr=c, snr_db=snr(x, adv_out), seed=seed))
    return recs


def run_job(job, ctx: _Context | None = None) -> list[EvalRecord]:
    ctx = ctx or _CTX
    kind, seed, ui, eps, bpda_defense = job
    utt = ctx.corpus[ui]
    defenses = ctx.cfg.defense_grid() if kind == "pgd" else [bpda_defense]
    try:
        x = utt.waveform.samples
        acfg = AttackConfig(eps, iterations=ctx.cfg.iterations, eot_samples=ctx.cfg.eot_samples,
                            jitter_sigma=ctx.cfg.jitter_sigma, seed=seed)
        if eps == 0:
            adv = x
        elif kind == "pgd":
            adv = pgd(ctx.model, x, utt.transcript, acfg).adversarial.samples
        else:
            adv = bpda_eot(ctx.model, bpda_defense, ctx.codec, x, utt.transcript, acfg).adversarial.samples
        tokens = None
        if kind == "pgd":
            tokens = (ctx.codec.encode(x, ctx.max_depth), ctx.codec.encode(adv, ctx.max_depth))
        return _records_for(ctx, kind, seed, utt, eps, x, adv, defenses, tokens)
    except Exception as e:  # isolate: one bad utterance must not sink the sweep
        log.warning("job %s failed: %s", job, e)
        msg = f"{type(e).__name__}: {e}".replace("\n", " ")
        return [EvalRecord(utt.id, str(DefenseKind.parse(s)), DefenseKind.parse(s).depth, eps, kind,
                           math.nan, math.nan, None, None, math.nan, seed, error=msg) for s in defenses]


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _fill_delta(records: list) -> None:
    ok = [r for r in records if not r.error]
    for r in ok:
        try:
            r.delta_wer = delta_wer(r, ok)
        except LookupError as e:
            r.error = f"MissingBaseline: {e}"


def run_sweep(cfg: ExperimentConfig, write: bool = True) -> SweepTable:
    """Run every (seed, utterance, attack, eps, defense) cell and collect one record each.

    Rows come back in plan order whatever the worker count, so the CSV is a
    pure function of the config.
    """
    cfg.check_paths()
    started = time.time()
    ctx = _Context(cfg)
    jobs = plan_jobs(cfg, len(ctx.corpus))
    workers = worker_count()
    log.info("sweep: %d jobs on %d worker(s)", len(jobs), workers)
    records = []
    if workers == 1:
        for job in jobs:
            records.extend(run_job(job, ctx))
    else:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            for recs in pool.imap(run_job, jobs):
                records.extend(recs)
    _fill_delta(records)
    table = SweepTable(records)
    if write:
        write_outputs(cfg, table, started, workers)
    return table


def write_outputs(cfg: ExperimentConfig, table: SweepTable, started: float, workers: int) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    (out / "sweep.csv").write_text(table.to_csv())
    (out / "aggregates.csv").write_text(table.aggregates_csv())
    # wall-clock data lives only here so the files above stay byte-reproducible
    meta = {"version": __version__, "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "elapsed_s": round(time.time() - started, 3), "workers": workers,
            "rows": len(table.records), "failed_rows": len(table.failed)}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out
