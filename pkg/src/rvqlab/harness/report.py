"""Depth curves, CCR / delta-WER correlation and the matched-bitrate baseline table."""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..errors import InvalidArgument, MissingConfig, UndefinedCorrelation
from ..metrics import mean_sem, spearman
from . import svg
from .sweep import SweepTable, _csv_text


def _config_means(table: SweepTable, attack: str, seed=None):
    """{eps: {depth: (mean ccr, mean wer_adv, mean delta_wer)}} over rvq rows."""
    cells = defaultdict(list)
    for r in table.ok:
        if r.attack == attack and r.depth is not None and (seed is None or r.seed == seed):
            cells[(r.eps, r.depth)].append(r)
    out = defaultdict(dict)
    for (eps, depth), rows in sorted(cells.items()):
        out[eps][depth] = (float(np.mean([r.ccr for r in rows])), float(np.mean([r.wer_adv for r in rows])),
                           float(np.mean([r.delta_wer for r in rows])))
    return out


def depth_summary(curve: dict) -> dict:
    """argmin depth of WER, whether it is interior and its margin over both endpoints."""
    depths = sorted(curve)
    wers = [curve[d][1] for d in depths]
    i = int(np.argmin(wers))  # first occurrence, i.e. the shallowest minimiser
    margin = min(wers[0], wers[-1]) - wers[i]
    return {"depths": depths, "ccr": [curve[d][0] for d in depths], "wer": wers,
            "argmin_depth": depths[i], "interior": 0 < i < len(depths) - 1, "margin": margin}


def report_depth_curves(table: SweepTable, out_dir=None, attack: str = "pgd") -> dict:
    means = _config_means(table, attack)
    if not means or min(len(c) for c in means.values()) < 2:
        raise InvalidArgument("depth curves need at least two rvq depths")
    summary = {"attack": attack, "by_eps": {repr(e): depth_summary(c) for e, c in means.items()}}
    seeds = sorted({r.seed for r in table.ok if r.attack == attack and r.depth is not None})
    summary["by_seed"] = {
        str(s): {repr(e): depth_summary(c) for e, c in _config_means(table, attack, s).items()} for s in seeds}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ccr_panel = svg.Panel("CCR vs depth", "RVQ depth", "mean CCR")
        wer_panel = svg.Panel("WER vs depth", "RVQ depth", "mean defended WER")
        for e, s in summary["by_eps"].items():
            ccr_panel.series.append((f"eps={e}", s["depths"], s["ccr"]))
            wer_panel.series.append((f"eps={e}", s["depths"], s["wer"]))
        (out / "depth_curves.svg").write_text(svg.render([ccr_panel, wer_panel]))
        (out / "depth_curves.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def report_correlation(table: SweepTable, out_dir=None, attack: str = "pgd") -> dict:
    """Spearman rho between mean CCR and mean delta-WER over (depth, eps > 0) configurations."""
    means = _config_means(table, attack)
    pts = [(eps, d, c, dw) for eps, curve in means.items() if eps > 0 for d, (c, _, dw) in curve.items()]
    if len(pts) < 3:
        raise InvalidArgument(f"correlation needs at least 3 configurations with eps > 0, got {len(pts)}")

    def rho(sub):
        try:
            return spearman([p[2] for p in sub], [p[3] for p in sub])
        except UndefinedCorrelation:
            return None
        except InvalidArgument:
            return None

    eps_values = sorted({p[0] for p in pts})
    per_eps = {repr(e): rho([p for p in pts if p[0] == e]) for e in eps_values}
    defined = [v for v in per_eps.values() if v is not None]
    result = {
        "attack": attack,
        "points": "per-configuration means over utterances and seeds",
        "n_points": len(pts),
        "rho_pooled": rho(pts),
        "rho_per_eps": per_eps,
        "rho_mean_over_eps": float(np.mean(defined)) if defined else None,
    }
    if result["rho_pooled"] is None:
        result["error"] = "undefined correlation: CCR or delta-WER is constant across configurations"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        panel = svg.Panel("delta-WER vs CCR", "mean CCR", "mean delta-WER")
        max_depth = max(p[1] for p in pts)
        for eps, d, c, dw in pts:
            color = svg.PALETTE[eps_values.index(eps) % len(svg.PALETTE)]
            panel.points.append((c, dw, 2.0 + 6.0 * d / max_depth, color))
        for j, e in enumerate(eps_values):
            panel.series.append((f"eps={e!r}", [], []))
        (out / "correlation.svg").write_text(svg.render([panel]))
        (out / "correlation.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


BASELINE_COLUMNS = ("attack", "defense", "eps", "n", "wer_mean", "wer_sem")


def report_baseline_table(table: SweepTable, depth: int = 9, eps: float = 0.02, out_dir=None) -> list[dict]:
    """Mean defended WER +- SEM per defense at one eps, PGD section then BPDA section."""
    required = {"pgd": [f"rvq:{depth}", "median", "resample", "none"],
                "bpda": [f"rvq:{depth}", "median", "resample"]}
    rows, missing = [], []
    for attack, wanted in required.items():
        present = [r for r in table.ok if r.attack == attack and r.eps == eps]
        if not present and attack == "bpda":
            continue  # a PGD-only sweep simply has no adaptive section
        for name in wanted:
            match = [r for r in present if r.defense == name or r.defense.split(":")[0] == name != "rvq"]
            if not match:
                missing.append(f"{attack}/{name}")
                continue
            for defense in sorted({r.defense for r in match}):
                sub = [r.wer_adv for r in match if r.defense == defense]
                m, s = mean_sem(sub)
                rows.append({"attack": attack, "defense": defense, "eps": eps, "n": len(sub),
                             "wer_mean": m, "wer_sem": s})
    if missing:
        raise MissingConfig(missing)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "baseline_table.csv").write_text(
            _csv_text(BASELINE_COLUMNS, ([r[c] for c in BASELINE_COLUMNS] for r in rows)))
    return rows
