"""Synthetic formant-burst corpus, WAV I/O and sqrt-Hann framing."""
from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument

SAMPLE_RATE = 16000
WIN = 512
HOP = 256
VOCAB_SIZE = 10
BLANK = 0

BURST_SAMPLES = int(0.12 * SAMPLE_RATE)
GAP_SAMPLES = int(0.04 * SAMPLE_RATE)
RAMP_SAMPLES = 160
NOISE_SNR_DB = 30.0
PEAK = 0.7

# (F1, F2) in Hz per symbol id. All twenty frequencies are distinct and below 3.6 kHz.
FORMANTS = {
    1: (250.0, 1900.0),
    2: (330.0, 2900.0),
    3: (410.0, 1100.0),
    4: (490.0, 2300.0),
    5: (570.0, 1500.0),
    6: (650.0, 2700.0),
    7: (730.0, 1300.0),
    8: (810.0, 2100.0),
    9: (890.0, 1700.0),
    10: (970.0, 2500.0),
}


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the burst synthesizer. Pitch and gain are drawn per utterance / per burst."""

    f0_range: tuple = (120.0, 130.0)
    f0_jitter: float = 0.0
    formant_bandwidth: float = 140.0
    formant_shape: str = "lorentz"  # or "gauss"
    random_phase: bool = False
    gain_range: tuple = (0.6, 1.0)
    noise_snr_db: float = NOISE_SNR_DB


_SPLIT_STREAM = {"train": 0, "dev": 1, "test": 2}


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise InvalidArgument(f"waveform must be a non-empty 1-D sequence, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InvalidArgument("waveform contains non-finite samples")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def as_samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    return np.asarray(w, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Utterance:
    id: str
    waveform: Waveform
    transcript: tuple
    seed: int = 0

    def __post_init__(self):
        validate_transcript(self.transcript)
        object.__setattr__(self, "transcript", tuple(int(t) for t in self.transcript))


@dataclass
class Corpus:
    split: str
    utterances: list = field(default_factory=list)
    seed: int = 0

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)


def validate_transcript(transcript):
    if len(transcript) == 0:
        raise InvalidArgument("transcript must be non-empty")
    bad = [t for t in transcript if not 1 <= int(t) <= VOCAB_SIZE]
    if bad:
        raise InvalidArgument(f"transcript ids must lie in 1..{VOCAB_SIZE}, got {bad}")


def utterance_length(n_symbols: int) -> int:
    return n_symbols * BURST_SAMPLES + (n_symbols + 1) * GAP_SAMPLES


def _burst(symbol: int, f0: float, gain: float, rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    t = np.arange(BURST_SAMPLES) / SAMPLE_RATE
    harmonics = np.arange(1, int(3600.0 // f0) + 1) * f0
    amp = np.zeros(harmonics.size)
    for formant, weight in zip(FORMANTS[symbol], (1.0, 0.6)):
        u = (harmonics - formant) / cfg.formant_bandwidth
        amp += weight * (np.exp(-0.5 * u * u) if cfg.formant_shape == "gauss" else 1.0 / (1.0 + u * u))
    if cfg.random_phase:
        phase = rng.uniform(0.0, 2.0 * np.pi, size=harmonics.size)
    else:
        phase = np.zeros(harmonics.size)
    y = (amp[:, None] * np.sin(2.0 * np.pi * harmonics[:, None] * t[None, :] + phase[:, None])).sum(0)
    env = np.ones(BURST_SAMPLES)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(RAMP_SAMPLES) / RAMP_SAMPLES)
    env[:RAMP_SAMPLES] = ramp
    env[-RAMP_SAMPLES:] = ramp[::-1]
    return gain * env * y / np.max(np.abs(y))


def synth_utterance(transcript, seed: int, uid: str | None = None, cfg: SynthConfig | None = None) -> Utterance:
    """Render a symbol sequence as formant bursts separated (and padded) by 40 ms silences.

    The seed fixes the speaker pitch, per-burst pitch jitter, gains, harmonic
    phases and the additive noise, so the output is a pure function of its inputs.
    """
    validate_transcript(transcript)
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7919]))
    speaker_f0 = rng.uniform(*cfg.f0_range)
    y = np.zeros(utterance_length(len(transcript)))
    pos = GAP_SAMPLES
    for sym in transcript:
        f0 = speaker_f0 * rng.uniform(1.0 - cfg.f0_jitter, 1.0 + cfg.f0_jitter)
        gain = rng.uniform(*cfg.gain_range)
        y[pos:pos + BURST_SAMPLES] = _burst(int(sym), f0, gain, rng, cfg)
        pos += BURST_SAMPLES + GAP_SAMPLES
    noise_std = np.sqrt(np.mean(y ** 2) / 10 ** (cfg.noise_snr_db / 10))
    y = y + rng.normal(0.0, noise_std, size=y.size)
    y *= PEAK / np.max(np.abs(y))
    return Utterance(uid or f"utt-{seed}", Waveform(y), tuple(transcript), int(seed))


def gen_corpus(n_utts: int, len_range=(3, 8), seed: int = 0, split: str = "train",
               synth: SynthConfig | None = None) -> Corpus:
    if n_utts <= 0:
        raise InvalidArgument(f"n_utts must be positive, got {n_utts}")
    lo, hi = len_range
    if not 1 <= lo <= hi:
        raise InvalidArgument(f"invalid len_range {len_range}")
    if split not in _SPLIT_STREAM:
        raise InvalidArgument(f"unknown split {split!r}")
    ss = np.random.SeedSequence([int(seed), _SPLIT_STREAM[split]])
    rng = np.random.default_rng(ss)
    utt_seeds = ss.generate_state(n_utts, dtype=np.uint32)
    utts = []
    for i in range(n_utts):
        n = int(rng.integers(lo, hi + 1))
        transcript = tuple(int(v) for v in rng.integers(1, VOCAB_SIZE + 1, size=n))
        utts.append(synth_utterance(transcript, int(utt_seeds[i]), uid=f"{split}-{seed}-{i:05d}", cfg=synth))
    return Corpus(split, utts, int(seed))


# ---------------------------------------------------------------- WAV I/O

def write_wav(path, w) -> None:
    s = np.clip(as_samples(w), -1.0, 1.0)
    pcm = np.round(s * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate = f.getnchannels(), f.getsampwidth(), f.getframerate()
            if channels != 1:
                raise FormatError(f"unsupported WAV: channels={channels}")
            if width != 2:
                raise FormatError(f"unsupported WAV: sampwidth={width}")
            if rate != SAMPLE_RATE:
                raise FormatError(f"unsupported WAV: sample_rate={rate}")
            raw = f.readframes(f.getnframes())
    except (wave.Error, EOFError) as e:
        raise FormatError(f"not a PCM RIFF/WAVE file: {e}") from e
    return Waveform(np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0)


def write_corpus(corpus: Corpus, out_dir) -> Path:
    """Write one WAV per utterance plus a JSON-lines manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    manifest = out / f"{corpus.split}.jsonl"
    with open(manifest, "w") as f:
        for u in corpus:
            rel = f"wav/{u.id}.wav"
            write_wav(out / rel, u.waveform)
            f.write(json.dumps({"id": u.id, "transcript": list(u.transcript),
                                "wav_path": rel, "seed": u.seed}) + "\n")
    return manifest


def read_manifest(path, split: str | None = None) -> Corpus:
    path = Path(path)
    utts = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            wav = read_wav(path.parent / rec["wav_path"])
            utts.append(Utterance(rec["id"], wav, tuple(rec["transcript"]), rec.get("seed", 0)))
    return Corpus(split or path.stem, utts, 0)


# ---------------------------------------------------------------- framing

@dataclass(frozen=True, eq=False)
class FrameMatrix:
    frames: np.ndarray
    hop: int = HOP
    window: str = "sqrt_hann"

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def width(self) -> int:
        return self.frames.shape[1]


def sqrt_hann(width: int = WIN) -> np.ndarray:
    # periodic Hann, so w[n]^2 + w[n + W/2]^2 == 1 exactly
    return np.sin(np.pi * np.arange(width) / width)


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def frame_count(length: int, width: int = WIN, hop: int = HOP) -> int:
    padded = -(-length // hop) * hop
    if padded < width:
        raise InvalidArgument(f"signal of {length} samples is shorter than one frame ({width})")
    return (padded - width) // hop + 1


def frame_indices(length: int, width: int = WIN, hop: int = HOP) -> np.ndarray:
    n = frame_count(length, width, hop)
    return np.arange(n)[:, None] * hop + np.arange(width)[None, :]


def frame(w, width: int = WIN, hop: int = HOP) -> FrameMatrix:
    """Slice into sqrt-Hann windowed frames; the tail is zero-padded to a multiple of hop."""
    if not (_is_pow2(width) and _is_pow2(hop)):
        raise InvalidArgument(f"width and hop must be powers of two, got {width}, {hop}")
    x = as_samples(w)
    idx = frame_indices(x.size, width, hop)
    padded = np.zeros(-(-x.size // hop) * hop)
    padded[:x.size] = x
    return FrameMatrix(padded[idx] * sqrt_hann(width), hop, "sqrt_hann")


def overlap_add(fm: FrameMatrix) -> Waveform:
    """Synthesis with the matching sqrt-Hann window at 50% overlap."""
    frames = np.asarray(fm.frames, dtype=np.float64)
    if frames.ndim != 2:
        raise InvalidArgument(f"frames must be 2-D, got shape {frames.shape}")
    n, width = frames.shape
    if fm.window != "sqrt_hann" or 2 * fm.hop != width:
        raise InvalidArgument(
            f"overlap_add needs sqrt_hann frames at 50% overlap, got window={fm.window} "
            f"hop={fm.hop} width={width}")
    return Waveform(overlap_add_array(frames * sqrt_hann(width), fm.hop))


def overlap_add_array(frames: np.ndarray, hop: int) -> np.ndarray:
    """Plain overlap-add of already synthesis-windowed frames with hop == width / 2."""
    n = frames.shape[0]
    out = np.zeros((n + 1) * hop)
    out[:n * hop].reshape(n, hop)[:] += frames[:, :hop]
    out[hop:].reshape(n, hop)[:] += frames[:, hop:]
    return out
