"""Input-transformation defenses: a depth-controlled RVQ codec plus median and resample baselines."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CorruptTokens, FormatError, InvalidArgument
from .signal import HOP, SAMPLE_RATE, WIN, Waveform, as_samples, frame, overlap_add_array, sqrt_hann

log = logging.getLogger(__name__)

N_MAX = 32
CODEBOOK_SIZE = 256
EDGE_PAD = WIN - HOP
KMEANS_ITERS = 25
KMEANS_TOL = 1e-6
RESAMPLE_TAPS = 120
RESAMPLE_CUTOFF = 0.45  # fraction of the input Nyquist frequency


def dct_matrix(n: int = WIN) -> np.ndarray:
    """Orthonormal DCT-II; rows are basis vectors, so coeffs = T @ frame and frame = T.T @ coeffs."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    t = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    t[0] /= np.sqrt(2.0)
    return t


_DCT = dct_matrix(WIN)
_SYNTH = sqrt_hann(WIN)


def analysis_frames(w) -> np.ndarray:
    """Edge-padded sqrt-Hann frames mapped to DCT coefficients, one row per frame."""
    x = as_samples(w)
    padded = np.concatenate([np.zeros(EDGE_PAD), x, np.zeros(EDGE_PAD)])
    return frame(padded).frames @ _DCT.T


def synthesis(coeffs: np.ndarray, length: int) -> np.ndarray:
    out = overlap_add_array((coeffs @ _DCT) * _SYNTH, HOP)
    return out[EDGE_PAD:EDGE_PAD + length]


# ---------------------------------------------------------------- nearest neighbour / k-means

def nearest(x: np.ndarray, centroids: np.ndarray, c_sq: np.ndarray | None = None) -> np.ndarray:
    """Index of the closest centroid per row of x; ties go to the lowest index.

    The fast expansion ||x||^2 - 2 x.c + ||c||^2 is only used to shortlist; rows
    with more than one near-best candidate are re-ranked on exact squared distances.
    """
    if c_sq is None:
        c_sq = np.einsum("ij,ij->i", centroids, centroids)
    x_sq = np.einsum("ij,ij->i", x, x)
    d = x_sq[:, None] - 2.0 * (x @ centroids.T) + c_sq[None, :]
    idx = np.argmin(d, axis=1)
    dmin = d[np.arange(len(x)), idx]
    slack = 1e-9 * (x_sq + c_sq.max() + 1.0)
    close = (d <= (dmin + slack)[:, None])
    for row in np.flatnonzero(close.sum(axis=1) > 1):
        cand = np.flatnonzero(close[row])
        exact = np.sum((x[row][None, :] - centroids[cand]) ** 2, axis=1)
        idx[row] = cand[np.argmin(exact)]
    return idx


def kmeans(data: np.ndarray, k: int, rng: np.random.Generator,
           iters: int = KMEANS_ITERS, tol: float = KMEANS_TOL) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; empty clusters move to the farthest point."""
    n = data.shape[0]
    sq = np.einsum("ij,ij->i", data, data)
    centroids = np.empty((k, data.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = data[first]
    closest = np.maximum(sq - 2.0 * data @ data[first] + sq[first], 0.0)
    for j in range(1, k):
        cdf = np.cumsum(closest)
        if cdf[-1] > 0:
            pick = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), n - 1)
        else:
            pick = int(rng.integers(n))
        centroids[j] = data[pick]
        d = data @ data[pick]
        d *= -2.0
        d += sq
        d += sq[pick]
        np.minimum(closest, np.maximum(d, 0.0, out=d), out=closest)

    prev_inertia = np.inf
    for _ in range(iters):
        c_sq = np.einsum("ij,ij->i", centroids, centroids)
        d = np.maximum(sq[:, None] - 2.0 * (data @ centroids.T) + c_sq[None, :], 0.0)
        assign = np.argmin(d, axis=1)
        dist = d[np.arange(n), assign]
        inertia = float(dist.sum())
        counts = np.bincount(assign, minlength=k)
        order = np.argsort(assign, kind="stable")
        starts = np.searchsorted(assign[order], np.arange(k))
        sums = np.zeros_like(centroids)
        present = counts > 0
        sums[present] = np.add.reduceat(data[order], starts[present], axis=0)
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        taken = set()
        for j in np.flatnonzero(~filled):
            order = np.argsort(-dist, kind="stable")
            far = next(int(i) for i in order if int(i) not in taken)
            taken.add(far)
            new[j] = data[far]
            dist[far] = 0.0
        centroids = new
        if prev_inertia < np.inf and prev_inertia - inertia <= tol * prev_inertia:
            break
        prev_inertia = inertia
    return centroids


# ---------------------------------------------------------------- codec

@dataclass(eq=False)
class RvqCodec:
    codebooks: np.ndarray  # (n_max, K, dim)
    seed: int = 0

    MAGIC = b"RVQ1"

    def __post_init__(self):
        self.codebooks = np.asarray(self.codebooks, dtype=np.float64)
        if self.codebooks.ndim != 3 or not np.all(np.isfinite(self.codebooks)):
            raise InvalidArgument("codebooks must be a finite (stages, K, dim) array")
        self._c_sq = np.einsum("skd,skd->sk", self.codebooks, self.codebooks)

    @property
    def n_max(self) -> int:
        return self.codebooks.shape[0]

    @property
    def size(self) -> int:
        return self.codebooks.shape[1]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[2]

    def _check_depth(self, n: int) -> int:
        if not 1 <= int(n) <= self.n_max:
            raise InvalidArgument(f"depth must lie in 1..{self.n_max}, got {n}")
        return int(n)

    def quantize(self, coeffs: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Greedy residual quantization of coefficient rows; returns (tokens, residual)."""
        n = self._check_depth(n)
        residual = np.array(coeffs, dtype=np.float64)
        tokens = np.empty((residual.shape[0], n), dtype=np.int64)
        for k in range(n):
            idx = nearest(residual, self.codebooks[k], self._c_sq[k])
            tokens[:, k] = idx
            residual -= self.codebooks[k][idx]
        return tokens, residual

    def dequantize(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens)
        if tokens.ndim != 2 or tokens.shape[1] > self.n_max:
            raise CorruptTokens(f"token grid must be F x n with n <= {self.n_max}, got {tokens.shape}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.size):
            raise CorruptTokens(f"token ids must lie in [0, {self.size})")
        out = np.zeros((tokens.shape[0], self.dim))
        for k in range(tokens.shape[1]):
            out += self.codebooks[k][tokens[:, k]]
        return out

    def encode(self, w, n: int) -> np.ndarray:
        return self.quantize(analysis_frames(w), n)[0]

    def decode(self, tokens, length: int) -> Waveform:
        return Waveform(np.clip(synthesis(self.dequantize(tokens), length), -1.0, 1.0))

    def reconstruct(self, w, n: int) -> Waveform:
        x = as_samples(w)
        return self.decode(self.encode(x, n), x.size)

    def to_bytes(self) -> bytes:
        head = self.MAGIC + struct.pack("<IIIQ", self.n_max, self.size, self.dim, self.seed)
        return head + np.ascontiguousarray(self.codebooks, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "RvqCodec":
        if buf[:4] != cls.MAGIC:
            raise FormatError(f"bad codebook file magic {buf[:4]!r}")
        n_max, k, dim, seed = struct.unpack_from("<IIIQ", buf, 4)
        expected = 24 + 8 * n_max * k * dim
        if len(buf) != expected:
            raise FormatError(f"codebook file has {len(buf)} bytes, header implies {expected}")
        data = np.frombuffer(buf, dtype="<f8", offset=24).reshape(n_max, k, dim)
        return cls(data.astype(np.float64), seed)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "RvqCodec":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def corpus_frames(corpus) -> np.ndarray:
    return np.concatenate([analysis_frames(u.waveform) for u in corpus])


def train_codec_frames(frames: np.ndarray, n_max: int = N_MAX, k: int = CODEBOOK_SIZE, seed: int = 0,
                       history: list | None = None) -> RvqCodec:
    """Greedy stage-wise k-means: stage s is fit on the residual left by stages 1..s-1."""
    frames = np.asarray(frames, dtype=np.float64)
    need = 50 * k
    if frames.shape[0] < need:
        raise InvalidArgument(f"need at least {need} training frames (50 per centroid), got {frames.shape[0]}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    residual = frames.copy()
    books = []
    energy = [float(np.mean(np.sum(residual ** 2, axis=1)))]
    for s in range(n_max):
        c = kmeans(residual, k, rng)
        residual -= c[nearest(residual, c)]
        books.append(c)
        energy.append(float(np.mean(np.sum(residual ** 2, axis=1))))
        log.info("stage %d residual energy %.6g", s + 1, energy[-1])
    if history is not None:
        history.extend(energy)
    return RvqCodec(np.stack(books), int(seed))


def train_codec(corpus, n_max: int = N_MAX, k: int = CODEBOOK_SIZE, seed: int = 0,
                max_frames: int | None = None, history: list | None = None) -> RvqCodec:
    frames = corpus_frames(corpus)
    if max_frames is not None and frames.shape[0] > max_frames:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
        frames = frames[np.sort(rng.choice(frames.shape[0], max_frames, replace=False))]
    return train_codec_frames(frames, n_max, k, seed, history)


def encode(codec: RvqCodec, w, n: int) -> np.ndarray:
    return codec.encode(w, n)


def decode(codec: RvqCodec, tokens, length: int) -> Waveform:
    return codec.decode(tokens, length)


def bitrate(codec: RvqCodec | None, n: int) -> float:
    k = CODEBOOK_SIZE if codec is None else codec.size
    return n * np.log2(k) * (SAMPLE_RATE / HOP) / 1000.0


# ---------------------------------------------------------------- baselines

def median_filter(x: np.ndarray, width: int) -> np.ndarray:
    """Centred running median; the window shrinks symmetrically-truncated at the edges."""
    half = width // 2
    n = x.size
    out = np.empty(n)
    if n >= width:
        out[half:n - half] = np.median(sliding_window_view(x, width), axis=1)
    for i in list(range(min(half, n))) + list(range(max(n - half, half), n)):
        out[i] = np.median(x[max(0, i - half):min(n, i + half + 1)])
    return out


def lowpass_taps(n_taps: int = RESAMPLE_TAPS, cutoff: float = RESAMPLE_CUTOFF) -> np.ndarray:
    fc = cutoff / 2.0  # cycles per sample
    m = np.arange(n_taps) - (n_taps - 1) / 2.0
    h = 2.0 * fc * np.sinc(2.0 * fc * m) * np.blackman(n_taps)
    return h / h.sum()


_LOWPASS = lowpass_taps()


def resample_roundtrip(x: np.ndarray, factor: int = 2) -> np.ndarray:
    """Low-pass, decimate, zero-stuff, low-pass again; output aligned to the input."""
    h = _LOWPASS
    delay = (h.size - 1) / 2.0
    low = np.convolve(x, h)
    # sample the filtered signal at input positions 0, 2, 4, ... (after removing the filter delay)
    start = int(np.ceil(delay))
    down = low[start::factor][: -(-x.size // factor)]
    up = np.zeros(down.size * factor)
    up[::factor] = down
    y = factor * np.convolve(up, h)
    # remaining delay: the second filter plus the half-sample from the odd tap count
    offset = int(round(2 * delay)) - start
    return y[offset:offset + x.size]


@dataclass(frozen=True)
class DefenseKind:
    kind: str
    param: int | None = None

    def __post_init__(self):
        if self.kind == "rvq":
            if self.param is None or not 1 <= self.param <= N_MAX:
                raise InvalidArgument(f"rvq depth must lie in 1..{N_MAX}, got {self.param}")
        elif self.kind == "median":
            if self.param is None or self.param < 3 or self.param % 2 == 0:
                raise InvalidArgument(f"median width must be odd and >= 3, got {self.param}")
        elif self.kind == "resample":
            if self.param not in (None, 2):
                raise InvalidArgument(f"resample factor must be 2, got {self.param}")
            object.__setattr__(self, "param", 2)
        elif self.kind == "none":
            object.__setattr__(self, "param", None)
        else:
            raise InvalidArgument(f"unknown defense kind {self.kind!r}")

    @classmethod
    def parse(cls, spec: str) -> "DefenseKind":
        name, _, arg = spec.strip().partition(":")
        if name in ("rvq", "median"):
            if not arg:
                raise InvalidArgument(f"defense {name!r} needs a parameter, e.g. {name}:9")
            try:
                return cls(name, int(arg))
            except ValueError:
                raise InvalidArgument(f"bad defense parameter in {spec!r}") from None
        if name == "resample":
            return cls(name, int(arg) if arg else 2)
        if name == "none" and not arg:
            return cls("none")
        raise InvalidArgument(f"unknown defense spec {spec!r}")

    def __str__(self):
        if self.kind == "none":
            return "none"
        if self.kind == "resample":
            return "resample"
        return f"{self.kind}:{self.param}"

    @property
    def depth(self) -> int | None:
        return self.param if self.kind == "rvq" else None


def apply_array(d: DefenseKind, x: np.ndarray, codec: RvqCodec | None = None) -> np.ndarray:
    if d.kind == "none":
        return x
    if d.kind == "rvq":
        if codec is None:
            raise InvalidArgument("rvq defense requires a trained codec")
        return codec.reconstruct(x, d.param).samples
    if d.kind == "median":
        return median_filter(x, d.param)
    return np.clip(resample_roundtrip(x, d.param), -1.0, 1.0)


def apply(d: DefenseKind | str, w, codec: RvqCodec | None = None) -> Waveform:
    if isinstance(d, str):
        d = DefenseKind.parse(d)
    if d.kind == "none":
        return w if isinstance(w, Waveform) else Waveform(w)
    return Waveform(apply_array(d, as_samples(w), codec))
