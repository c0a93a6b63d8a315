"""Toy CTC recognizer: differentiable log-mel front end, frame MLP, CTC loss, greedy decoding."""
from __future__ import annotations

import functools
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import InfeasibleAlignment, InvalidArgument, TrainingFailure
from .signal import BLANK, HOP, SAMPLE_RATE, VOCAB_SIZE, WIN, as_samples, frame_indices, sqrt_hann

log = logging.getLogger(__name__)

N_BINS = WIN // 2 + 1
N_MELS = 32
CONTEXT = 2
N_CLASSES = VOCAB_SIZE + 1
FEATURE_FLOOR = 1e-8
MEL_FMAX = 4000.0  # every burst harmonic sits below 3.6 kHz
NORM_STD_FLOOR = 1.0
LAYER_DIMS = (N_MELS * (2 * CONTEXT + 1), 128, 128, N_CLASSES)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_bins: int = N_BINS, sr: int = SAMPLE_RATE,
                   fmax: float = MEL_FMAX) -> np.ndarray:
    """n_mels x n_bins triangular filters spanning 0..fmax, each row normalised to sum to one."""
    if not 0.0 < fmax <= sr / 2:
        raise InvalidArgument(f"fmax must lie in (0, {sr / 2}], got {fmax}")
    bin_hz = np.linspace(0.0, sr / 2, n_bins)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_hz - lo) / (mid - lo)
        down = (hi - bin_hz) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        if fb[m].sum() == 0.0:
            # filter narrower than one bin: fall back to the nearest bin
            fb[m, np.argmin(np.abs(bin_hz - mid))] = 1.0
    return fb / fb.sum(axis=1, keepdims=True)


def dft_matrix(width: int = WIN) -> np.ndarray:
    """[cos | -sin] real DFT blocks, width x 2*(width//2 + 1)."""
    n = np.arange(width)[:, None]
    k = np.arange(width // 2 + 1)[None, :]
    ang = 2.0 * np.pi * n * k / width
    return np.hstack([np.cos(ang), -np.sin(ang)])


_WINDOW = sqrt_hann(WIN)
# Scaled by 1/(10 W): the corpus noise then sits near 3e-10 per mel band and burst peaks
# near 1e-5, so the 1e-8 log floor hides the noise and denoised and noisy silence agree.
_DFT = _WINDOW[:, None] * dft_matrix(WIN) / (10.0 * WIN)
_FB = mel_filterbank()
# re^2 and im^2 halves both go through the filterbank, so one matmul does both.
_POWER_TO_MEL = np.vstack([_FB.T, _FB.T])


def _padded_frame_idx(length: int):
    idx = frame_indices(length)
    pad = idx.max() + 1 - length
    return idx, pad


def featurize(x) -> ad.Tensor:
    """Log-mel features (F x 32) as a graph node; gradients reach every input sample."""
    if not isinstance(x, ad.Tensor):
        x = ad.constant(as_samples(x))
    if x.data.ndim != 1 or x.data.size < WIN:
        raise InvalidArgument(f"featurize needs at least {WIN} samples, got shape {x.shape}")
    idx, pad = _padded_frame_idx(x.data.size)
    if pad:
        x = ad.concat([x, ad.constant(np.zeros(pad))])
    spec = ad.fixed_matmul(ad.slice_(x, idx), _DFT)
    mel = ad.fixed_matmul(ad.square(spec), _POWER_TO_MEL)
    return ad.log(ad.add(mel, FEATURE_FLOOR))


def featurize_array(x) -> np.ndarray:
    """Same values as :func:`featurize` without building a graph."""
    x = as_samples(x)
    if x.size < WIN:
        raise InvalidArgument(f"featurize needs at least {WIN} samples, got {x.size}")
    idx, pad = _padded_frame_idx(x.size)
    if pad:
        x = np.concatenate([x, np.zeros(pad)])
    spec = x[idx] @ _DFT
    return np.log(np.maximum((spec * spec) @ _POWER_TO_MEL + FEATURE_FLOOR, ad.LOG_FLOOR))


def context_index(n_frames: int) -> list[np.ndarray]:
    base = np.arange(n_frames)
    return [np.clip(base + k, 0, n_frames - 1) for k in range(-CONTEXT, CONTEXT + 1)]


def stack_context(feats: ad.Tensor) -> ad.Tensor:
    return ad.concat([ad.slice_(feats, i) for i in context_index(feats.shape[0])], axis=1)


def stack_context_array(feats: np.ndarray) -> np.ndarray:
    return np.concatenate([feats[i] for i in context_index(feats.shape[0])], axis=1)


# ---------------------------------------------------------------- CTC

def _extended(target) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, BLANK, dtype=np.int64)
    ext[1::2] = target
    return ext


def min_frames(target) -> int:
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _ctc_alpha_beta(lp: np.ndarray, target):
    n_frames = lp.shape[0]
    ext = _extended(target)
    n_states = ext.size
    skip = np.zeros(n_states, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]
    neg = -np.inf

    alpha = np.full((n_frames, n_states), neg)
    alpha[0, 0] = emit[0, 0]
    if n_states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((n_frames, n_states), neg)
    beta[-1, -1] = emit[-1, -1]
    if n_states > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]

    log_p = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if n_states > 1 else alpha[-1, -1]
    return ext, alpha, beta, log_p


def ctc_nll(log_probs: ad.Tensor, target) -> ad.Tensor:
    """CTC negative log-likelihood of ``target`` given per-frame log-probabilities (F x C)."""
    target = [int(t) for t in target]
    if not target:
        raise InvalidArgument("CTC target must be non-empty")
    lp = log_probs.data
    if lp.ndim != 2:
        raise InvalidArgument(f"log_probs must be F x C, got {lp.shape}")
    if any(not 0 < t < lp.shape[1] for t in target):
        raise InvalidArgument(f"target ids must lie in 1..{lp.shape[1] - 1}")
    need = min_frames(target)
    if lp.shape[0] < need:
        raise InfeasibleAlignment(f"{lp.shape[0]} frames cannot align a target needing {need}")
    ext, alpha, beta, log_p = _ctc_alpha_beta(lp, target)
    if not np.isfinite(log_p):
        raise InfeasibleAlignment("target has zero probability under every alignment")

    def bw(g):
        post = np.exp(alpha + beta - lp[:, ext] - log_p)
        grad = np.zeros_like(lp)
        np.add.at(grad, (slice(None), ext), post)
        return (-grad * g,)

    return ad.custom([log_probs], -log_p, bw, op="ctc")


def ctc_loss(logits, target) -> ad.Tensor:
    return ctc_nll(ad.log_softmax(logits), target)


def greedy_decode(logits) -> tuple:
    """Per-frame argmax (ties to the lowest id), merge repeats, drop blanks."""
    data = logits.data if isinstance(logits, ad.Tensor) else np.asarray(logits)
    best = np.argmax(data, axis=1)
    out, prev = [], None
    for k in best:
        if k != prev and k != BLANK:
            out.append(int(k))
        prev = k
    return tuple(out)


# ---------------------------------------------------------------- model

@dataclass
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 1
    batch: int = 16
    seed: int = 0
    momentum: float = 0.9
    clip_norm: float = 5.0


class AcousticModel:
    """Frame classifier over context-stacked, normalised log-mel features."""

    def __init__(self, params: ad.ParameterSet):
        self.params = params

    @classmethod
    def init(cls, seed: int = 0, feat_mean=None, feat_scale=None) -> "AcousticModel":
        rng = np.random.default_rng(seed)
        p = ad.ParameterSet()
        p.add("feat_mean", np.zeros(N_MELS) if feat_mean is None else feat_mean, trainable=False)
        p.add("feat_scale", np.ones(N_MELS) if feat_scale is None else feat_scale, trainable=False)
        for i, (n_in, n_out) in enumerate(zip(LAYER_DIMS[:-1], LAYER_DIMS[1:]), start=1):
            p.add(f"W{i}", rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out)))
            p.add(f"b{i}", np.zeros(n_out))
        return cls(p)

    def head(self, stacked: ad.Tensor, tensors: dict | None = None) -> ad.Tensor:
        t = tensors or {n: ad.constant(v) for n, v in self.params.items()}
        h = ad.relu(ad.add(ad.matmul(stacked, t["W1"]), t["b1"]))
        h = ad.relu(ad.add(ad.matmul(h, t["W2"]), t["b2"]))
        return ad.add(ad.matmul(h, t["W3"]), t["b3"])

    def normalize(self, feats: ad.Tensor) -> ad.Tensor:
        return ad.mul(ad.add(feats, -self.params["feat_mean"]), self.params["feat_scale"])

    def logits(self, x) -> ad.Tensor:
        """Full differentiable path from samples (a Tensor leaf or array) to F x 11 logits."""
        return self.head(stack_context(self.normalize(featurize(x))))

    def logits_array(self, x) -> np.ndarray:
        feats = (featurize_array(x) - self.params["feat_mean"]) * self.params["feat_scale"]
        h = stack_context_array(feats)
        p = self.params
        h = np.maximum(h @ p["W1"] + p["b1"], 0.0)
        h = np.maximum(h @ p["W2"] + p["b2"], 0.0)
        return h @ p["W3"] + p["b3"]

    def loss(self, x, target) -> ad.Tensor:
        return ctc_loss(self.logits(x), target)

    def transcribe(self, x) -> tuple:
        return greedy_decode(self.logits_array(x))

    def save(self, path) -> None:
        path = Path(path)
        self.params.save(path)
        sidecar = {
            "vocab_size": VOCAB_SIZE,
            "frame": {"sample_rate": SAMPLE_RATE, "width": WIN, "hop": HOP, "window": "sqrt_hann"},
            "n_mels": N_MELS,
            "context": CONTEXT,
            "layer_dims": list(LAYER_DIMS),
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "AcousticModel":
        params = ad.ParameterSet.load(path)
        params.trainable["feat_mean"] = False
        params.trainable["feat_scale"] = False
        return cls(params)


def corpus_wer(model: AcousticModel, corpus) -> float:
    from .metrics import wer
    return float(np.mean([wer(u.transcript, model.transcribe(u.waveform)) for u in corpus]))


def train_asr(train_corpus, dev_corpus=None, cfg: TrainConfig | None = None,
              history: list | None = None) -> AcousticModel:
    """Minibatch SGD with momentum, a fixed step and global gradient-norm clipping.

    Features do not depend on the trainable weights, so they are computed once
    up front and only the classifier head is rebuilt per step.
    """
    cfg = cfg or TrainConfig()
    utts = list(train_corpus)
    if not utts:
        raise InvalidArgument("training corpus is empty")
    raw = [featurize_array(u.waveform) for u in utts]
    allf = np.concatenate(raw)
    # bands that sit on the log floor have near-zero spread; dividing by it would
    # amplify any stray energy there by orders of magnitude
    mean, scale = allf.mean(axis=0), 1.0 / np.maximum(allf.std(axis=0), NORM_STD_FLOOR)
    model = AcousticModel.init(cfg.seed, mean, scale)
    stacked = [stack_context_array((f - mean) * scale) for f in raw]
    targets = [u.transcript for u in utts]
    names = model.params.names(trainable_only=True)
    velocity = {n: np.zeros_like(model.params[n]) for n in names}
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(utts))
        total = 0.0
        for start in range(0, len(order), cfg.batch):
            batch = order[start:start + cfg.batch]
            tensors = {n: (ad.leaf(model.params[n]) if n in velocity else ad.constant(model.params[n]))
                       for n in model.params}
            x = ad.constant(np.concatenate([stacked[i] for i in batch]))
            lp = ad.log_softmax(model.head(x, tensors))
            losses, off = [], 0
            for i in batch:
                n = stacked[i].shape[0]
                losses.append(ctc_nll(ad.slice_(lp, slice(off, off + n)), targets[i]))
                off += n
            loss = ad.mul(functools.reduce(ad.add, losses), 1.0 / len(batch))
            if not np.isfinite(loss.data):
                raise TrainingFailure(epoch)
            grads = ad.backward(loss, [tensors[n] for n in names])
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if not np.isfinite(norm):
                raise TrainingFailure(epoch, "gradient became non-finite")
            factor = min(1.0, cfg.clip_norm / norm) if norm > 0 else 1.0
            for n, g in zip(names, grads):
                velocity[n] = cfg.momentum * velocity[n] - cfg.lr * factor * g
                model.params[n] = model.params[n] + velocity[n]
            total += float(loss.data) * len(batch)
        entry = {"epoch": epoch, "train_loss": total / len(utts)}
        if dev_corpus is not None:
            entry["dev_wer"] = corpus_wer(model, dev_corpus)
        log.info("epoch %d %s", epoch, entry)
        if history is not None:
            history.append(entry)
    return model


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
