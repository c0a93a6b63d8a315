import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvqlab.errors import InvalidArgument, MissingBaseline, UndefinedCorrelation
from rvqlab.metrics import EvalRecord, ccr, delta_wer, edit_distance, snr, spearman, wer


def brute_edit_distance(a, b):
    """Shortest edit script by breadth-first search over (i, j) states."""
    a, b = tuple(a), tuple(b)
    frontier, seen, cost = {(0, 0)}, set(), 0
    while True:
        nxt = set()
        for i, j in frontier:
            # free moves along matching symbols
            while i < len(a) and j < len(b) and a[i] == b[j]:
                i, j = i + 1, j + 1
            if (i, j) == (len(a), len(b)):
                return cost
            if (i, j) in seen:
                continue
            seen.add((i, j))
            if i < len(a):
                nxt.add((i + 1, j))
            if j < len(b):
                nxt.add((i, j + 1))
            if i < len(a) and j < len(b):
                nxt.add((i + 1, j + 1))
        frontier, cost = nxt, cost + 1


def test_wer_examples():
    assert wer([1, 2, 3], [1, 2, 3]) == 0
    assert wer([1, 2, 3], [1, 9, 3]) == pytest.approx(1 / 3)
    assert wer([1], [2, 3, 4]) == 3.0


def test_wer_empty_ref():
    with pytest.raises(InvalidArgument):
        wer([], [1])


def test_edit_distance_matches_exhaustive_oracle():
    alphabet = [1, 2, 3]
    for la in range(0, 4):
        for lb in range(0, 4):
            for a in itertools.product(alphabet, repeat=la):
                for b in itertools.product(alphabet, repeat=lb):
                    assert edit_distance(a, b) == brute_edit_distance(a, b)


seqs = st.lists(st.integers(1, 4), min_size=1, max_size=6)


@settings(max_examples=200, deadline=None)
@given(seqs, seqs)
def test_wer_cost_symmetry(a, b):
    assert wer(a, b) * len(a) == pytest.approx(wer(b, a) * len(b))


@settings(max_examples=200, deadline=None)
@given(seqs, seqs, seqs)
def test_edit_distance_triangle(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)
    assert edit_distance(a, b) == brute_edit_distance(a, b)


def test_ccr_examples():
    g = np.array([[1, 2], [3, 4]])
    assert ccr(g, g) == 0
    assert ccr(g, g + 10) == 1
    h = g.copy()
    h[1, 0] = 0
    assert ccr(g, h) == 0.25
    with pytest.raises(InvalidArgument):
        ccr(g, np.zeros((3, 2)))


@given(st.integers(1, 20), st.integers(1, 8), st.integers(0, 100))
def test_ccr_self_is_zero(f, n, seed):
    g = np.random.default_rng(seed).integers(0, 256, size=(f, n))
    assert ccr(g, g.copy()) == 0.0


def test_snr_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=50000)
    assert snr(x, x) == 99.0
    assert snr(x, np.zeros_like(x)) == pytest.approx(0.0)
    eps = 0.05
    noise = rng.uniform(-eps, eps, size=x.size)
    analytic = 10 * np.log10(np.mean(x ** 2) / (eps ** 2 / 3))
    assert abs(snr(x, x + noise) - analytic) <= 0.5
    with pytest.raises(InvalidArgument):
        snr(x, x[:-1])


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [2, 5, 9, 10]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [10, 9, 5, 2]) == pytest.approx(-1.0)
    # rank formula by hand: d = [0, 1, -1, 0], 1 - 6*2/(4*15) = 0.8
    assert spearman([1, 2, 3, 4], [10, 30, 20, 40]) == pytest.approx(0.8)
    with pytest.raises(UndefinedCorrelation):
        spearman([1, 2, 3], [5, 5, 5])
    with pytest.raises(InvalidArgument):
        spearman([1, 2], [1, 2])


def test_spearman_ties_use_mean_rank():
    # ranks of xs: [1.5, 1.5, 3, 4]; Pearson against [1, 2, 3, 4]
    rx = np.array([1.5, 1.5, 3, 4])
    ry = np.arange(1.0, 5.0)
    expect = np.corrcoef(rx, ry)[0, 1]
    assert spearman([0, 0, 1, 2], [1, 2, 3, 4]) == pytest.approx(expect)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=3, max_size=15, unique=True), st.integers(0, 1000))
def test_spearman_invariant_under_monotone_maps(xs, seed):
    ys = np.random.default_rng(seed).permutation(len(xs)).astype(float)
    base = spearman(xs, ys)
    assert spearman(np.exp(np.asarray(xs) / 50), ys) == pytest.approx(base)
    assert spearman(xs, ys ** 3 + 2) == pytest.approx(base)


def _rec(eps, wer_adv, defense="rvq:4"):
    return EvalRecord("u1", defense, 4, eps, "pgd", 0.1, wer_adv, None, 0.0, 10.0, 0)


def test_delta_wer():
    base = _rec(0.0, 0.10)
    adv = _rec(0.02, 0.40)
    assert delta_wer(base, [base, adv]) == 0.0
    assert delta_wer(adv, [base, adv]) == pytest.approx(0.30)
    better = _rec(0.01, 0.05)
    assert delta_wer(better, [base, better]) == pytest.approx(-0.05)
    with pytest.raises(MissingBaseline):
        delta_wer(_rec(0.02, 0.4, defense="median:5"), [base])
