import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvqlab.defense import (
    DefenseKind, RvqCodec, analysis_frames, apply, bitrate, dct_matrix, kmeans, median_filter,
    nearest, resample_roundtrip, synthesis, train_codec_frames,
)
from rvqlab.errors import CorruptTokens, FormatError, InvalidArgument
from rvqlab.signal import SAMPLE_RATE, synth_utterance


def small_codec(seed=0, stages=4, k=8, dim=512):
    rng = np.random.default_rng(seed)
    scales = 0.5 ** np.arange(stages)
    return RvqCodec(rng.normal(size=(stages, k, dim)) * scales[:, None, None] * 0.05, seed)


def test_dct_is_orthonormal():
    d = dct_matrix(512)
    assert np.allclose(d @ d.T, np.eye(512), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(600, 5000))
def test_analysis_synthesis_is_identity(seed, n):
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, size=n)
    assert np.max(np.abs(synthesis(analysis_frames(x), n) - x)) <= 1e-10


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(64, 16))
    x = rng.normal(size=(1000, 16))
    brute = np.argmin(((x[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
    assert np.array_equal(nearest(x, c), brute)


def test_nearest_tie_goes_to_lowest():
    c = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    assert nearest(np.array([[0.0, 5.0], [2.0, 0.0]]), c).tolist() == [0, 0]


def test_kmeans_recovers_separated_clusters():
    rng = np.random.default_rng(1)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    data = np.concatenate([c + 0.1 * rng.normal(size=(100, 2)) for c in centers])
    got = kmeans(data, 3, np.random.default_rng(0))
    got = got[np.lexsort(got.T[::-1])]
    ref = centers[np.lexsort(centers.T[::-1])]
    assert np.allclose(got, ref, atol=0.1)


def test_kmeans_duplicates_do_not_crash():
    data = np.repeat(np.arange(4.0)[:, None], 50, axis=0)
    c = kmeans(data, 6, np.random.default_rng(0))
    assert np.all(np.isfinite(c))


def test_training_needs_enough_frames():
    with pytest.raises(InvalidArgument):
        train_codec_frames(np.zeros((100, 512)), n_max=2, k=8)


def test_trained_residual_energy_non_increasing():
    rng = np.random.default_rng(2)
    frames = rng.normal(size=(400, 16)) @ rng.normal(size=(16, 16))
    hist = []
    codec = train_codec_frames(frames, n_max=6, k=8, seed=0, history=hist)
    assert codec.codebooks.shape == (6, 8, 16)
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_prefix_property_and_residual():
    codec = small_codec()
    x = synth_utterance([3, 1], seed=0).waveform.samples
    full = codec.encode(x, 4)
    for n in range(1, 4):
        assert np.array_equal(codec.encode(x, n), full[:, :n])
    coeffs = analysis_frames(x)
    tokens, residual = codec.quantize(coeffs, 4)
    assert np.allclose(codec.dequantize(tokens) + residual, coeffs, atol=1e-12)


def test_decode_is_clipped_and_sized():
    codec = RvqCodec(np.full((1, 2, 512), 5.0))
    y = codec.decode(np.zeros((6, 1), dtype=int), 1000)
    assert len(y) == 1000 and np.max(np.abs(y.samples)) <= 1.0


def test_codec_errors(tmp_path):
    codec = small_codec()
    with pytest.raises(InvalidArgument):
        codec.encode(np.zeros(1024), 0)
    with pytest.raises(InvalidArgument):
        codec.encode(np.zeros(1024), 5)
    with pytest.raises(CorruptTokens):
        codec.dequantize(np.array([[8]]))
    codec.save(tmp_path / "c.bin")
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:4] == b"RVQ1"
    back = RvqCodec.load(tmp_path / "c.bin")
    assert np.array_equal(back.codebooks, codec.codebooks) and back.seed == codec.seed
    with pytest.raises(FormatError):
        RvqCodec.from_bytes(raw[:-8])
    with pytest.raises(FormatError):
        RvqCodec.from_bytes(b"XXXX" + raw[4:])


def test_bitrate():
    assert bitrate(None, 9) == pytest.approx(4.5)
    assert bitrate(small_codec(k=256, stages=1, dim=4), 32) == pytest.approx(16.0)


def test_median_filter_examples():
    assert median_filter(np.array([0.0, 0, 9, 0, 0]), 3).tolist() == [0, 0, 0, 0, 0]
    x = np.array([1.0, 5.0, 2.0, 8.0, 3.0])
    # edges shrink: first window is [1, 5], last is [8, 3]
    assert median_filter(x, 3).tolist() == [3.0, 2.0, 5.0, 3.0, 5.5]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=40), st.sampled_from([3, 5, 7]))
def test_median_filter_properties(xs, w):
    x = np.array(xs)
    y = median_filter(x, w)
    assert y.shape == x.shape
    assert y.min() >= x.min() and y.max() <= x.max()
    assert np.array_equal(median_filter(np.full(len(xs), xs[0]), w), np.full(len(xs), xs[0]))


def test_resample_passes_low_and_removes_high():
    t = np.arange(16000) / SAMPLE_RATE
    inner = slice(200, -200)
    low = 0.5 * np.sin(2 * np.pi * 500 * t)
    assert np.max(np.abs(resample_roundtrip(low)[inner] - low[inner])) <= 1e-3
    high = 0.5 * np.sin(2 * np.pi * 7000 * t)
    y = resample_roundtrip(high)
    assert np.sqrt(np.mean(y[inner] ** 2)) <= 0.05 * np.sqrt(np.mean(high[inner] ** 2))


def test_defense_kind_parsing():
    assert DefenseKind.parse("rvq:9") == DefenseKind("rvq", 9)
    assert str(DefenseKind.parse("median:5")) == "median:5"
    assert str(DefenseKind.parse("resample")) == "resample"
    assert DefenseKind.parse("none").depth is None
    for bad in ("rvq", "rvq:0", "rvq:33", "median:4", "median:1", "lowpass", "none:3", "rvq:x"):
        with pytest.raises(InvalidArgument):
            DefenseKind.parse(bad)


def test_apply_requires_codec():
    with pytest.raises(InvalidArgument):
        apply("rvq:2", np.zeros(1024))
    x = np.random.default_rng(0).uniform(-0.3, 0.3, size=1024)
    assert np.array_equal(apply("none", x).samples, x)
