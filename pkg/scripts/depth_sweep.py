"""Full depth x eps PGD sweep plus the BPDA+EOT comparison on a built lab, then all reports.

    python3 scripts/depth_sweep.py --lab runs/lab --out runs/sweep --n-utts 40
"""
import argparse
import logging
from pathlib import Path

from rvqlab.harness import (
    ExperimentConfig, SweepTable, report_baseline_table, report_correlation, report_depth_curves, run_sweep,
)
from rvqlab.harness.lab import lab_paths


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lab", default="runs/lab")
    p.add_argument("--out", default="runs/sweep")
    p.add_argument("--n-utts", type=int, default=40)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--bpda-utts", type=int, default=10)
    p.add_argument("--skip-bpda", action="store_true")
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    lab = lab_paths(a.lab)
    out = Path(a.out)
    common = dict(corpus=str(lab.test), model_path=str(lab.model), codec_path=str(lab.codec), seeds=a.seeds)
    table = run_sweep(ExperimentConfig(output_dir=str(out / "pgd"), n_utts=a.n_utts, **common))
    if not a.skip_bpda:
        bpda = run_sweep(ExperimentConfig(output_dir=str(out / "bpda"), attacks=["bpda"], bpda_eps=[0.02],
                                          n_utts=a.bpda_utts, **common))
        table = SweepTable(table.records + bpda.records)
    curves = report_depth_curves(table, out)
    for eps, s in curves["by_eps"].items():
        print(f"eps={eps:>6}: WER argmin depth {s['argmin_depth']:2d} interior={s['interior']!s:5} "
              f"margin={s['margin']:+.3f}  CCR " + " ".join(f"{c:.2f}" for c in s["ccr"]))
    corr = report_correlation(table, out)
    print(f"Spearman rho(CCR, dWER) pooled = {corr['rho_pooled']}, per eps = {corr['rho_per_eps']}")
    if not a.skip_bpda:
        for r in report_baseline_table(table, 9, 0.02, out):
            print(f"{r['attack']:5s} {r['defense']:9s} WER {r['wer_mean']:.3f} +- {r['wer_sem']:.3f} (n={r['n']})")


if __name__ == "__main__":
    main()
