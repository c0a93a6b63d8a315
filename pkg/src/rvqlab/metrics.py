"""WER, codebook change rate, SNR and Spearman rank correlation."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgument, MissingBaseline, UndefinedCorrelation
from .signal import as_samples

SNR_CAP_DB = 99.0


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def wer(ref, hyp) -> float:
    if len(ref) == 0:
        raise InvalidArgument("reference transcript is empty")
    return edit_distance(ref, hyp) / len(ref)


def ccr(clean_tokens, adv_tokens) -> float:
    """Fraction of (frame, stage) token positions that differ."""
    a, b = np.asarray(clean_tokens), np.asarray(adv_tokens)
    if a.shape != b.shape:
        raise InvalidArgument(f"token grids differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise InvalidArgument("token grids are empty")
    return float(np.count_nonzero(a != b)) / a.size


def snr(clean, other) -> float:
    c, o = as_samples(clean), as_samples(other)
    if c.shape != o.shape:
        raise InvalidArgument(f"length mismatch: {c.size} vs {o.size}")
    err = float(np.sum((c - o) ** 2))
    if err == 0.0:
        return SNR_CAP_DB
    sig = float(np.sum(c ** 2))
    if sig == 0.0:
        return -SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * np.log10(sig / err))


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InvalidArgument(f"spearman needs equal-length 1-D inputs, got {xs.shape} and {ys.shape}")
    if xs.size < 3:
        raise InvalidArgument(f"spearman needs at least 3 points, got {xs.size}")
    rx, ry = rankdata(xs), rankdata(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        raise UndefinedCorrelation("spearman is undefined for a constant sequence")
    return float(np.clip((rx * ry).sum() / denom, -1.0, 1.0))


def mean_sem(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise InvalidArgument("no values to aggregate")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


@dataclass
class EvalRecord:
    id: str
    defense: str
    depth: int | None
    eps: float
    attack: str
    wer_clean: float
    wer_adv: float
    delta_wer: float | None
    ccr: float | None
    snr_db: float
    seed: int
    error: str = ""

    @property
    def key(self):
        return (self.id, self.defense, self.eps, self.attack, self.seed)


CSV_COLUMNS = ("id", "defense", "depth", "eps", "attack", "wer_clean", "wer_adv",
               "delta_wer", "ccr", "snr_db", "seed")


def delta_wer(record: EvalRecord, records) -> float:
    """WER under attack minus the eps=0 WER of the same utterance through the same defense."""
    if record.eps == 0:
        return 0.0
    for r in records:
        if (r.id, r.defense, r.depth, r.seed, r.attack) == (record.id, record.defense, record.depth,
                                                           record.seed, record.attack) and r.eps == 0:
            return record.wer_adv - r.wer_adv
    raise MissingBaseline(f"no eps=0 baseline for {record.id} / {record.defense} / seed {record.seed}")


def record_fields():
    return [f.name for f in fields(EvalRecord)]
