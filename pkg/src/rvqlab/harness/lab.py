"""Build the artifacts a sweep needs: corpora, a trained recognizer and a trained codec."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..asr import AcousticModel, TrainConfig, corpus_wer, train_asr
from ..defense import CODEBOOK_SIZE, N_MAX, RvqCodec, train_codec
from ..signal import SynthConfig, gen_corpus, read_manifest, write_corpus

log = logging.getLogger(__name__)


@dataclass
class LabConfig:
    seed: int = 0
    n_train: int = 500
    n_dev: int = 100
    n_test: int = 100
    len_range: tuple = (3, 8)
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    codec_stages: int = N_MAX
    codec_size: int = CODEBOOK_SIZE
    codec_frames: int | None = 20000

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Lab:
    root: Path
    train: Path
    dev: Path
    test: Path
    model: Path
    codec: Path

    def load_model(self) -> AcousticModel:
        return AcousticModel.load(self.model)

    def load_codec(self) -> RvqCodec:
        return RvqCodec.load(self.codec)


def lab_paths(root) -> Lab:
    root = Path(root)
    c = root / "corpus"
    return Lab(root, c / "train.jsonl", c / "dev.jsonl", c / "test.jsonl", root / "asr.bin", root / "codec.bin")


def build_lab(cfg: LabConfig, root, reuse: bool = True) -> Lab:
    """Generate corpora and train both models under ``root``. With ``reuse`` an
    existing build with an identical config is returned as is."""
    lab = lab_paths(root)
    stamp = lab.root / "lab_config.json"
    wanted = json.dumps(cfg.to_dict(), sort_keys=True, default=list)
    if reuse and stamp.exists() and stamp.read_text() == wanted and lab.codec.exists() and lab.model.exists():
        return lab
    lab.root.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    splits = {}
    for split, n in (("train", cfg.n_train), ("dev", cfg.n_dev), ("test", cfg.n_test)):
        splits[split] = gen_corpus(n, cfg.len_range, cfg.seed, split, cfg.synth)
        write_corpus(splits[split], lab.train.parent)
    history = []
    model = train_asr(splits["train"], splits["dev"], cfg.train, history)
    model.save(lab.model)
    codec_hist = []
    codec = train_codec(splits["train"], cfg.codec_stages, cfg.codec_size, cfg.seed, cfg.codec_frames, codec_hist)
    codec.save(lab.codec)
    info = {"train_history": history, "codec_residual_energy": codec_hist,
            "dev_wer": corpus_wer(model, splits["dev"]), "build_seconds": round(time.time() - t0, 1)}
    (lab.root / "lab_info.json").write_text(json.dumps(info, indent=2) + "\n")
    stamp.write_text(wanted)
    log.info("lab built in %.0fs, dev WER %.4f", info["build_seconds"], info["dev_wer"])
    return lab


def load_split(lab: Lab, split: str):
    return read_manifest(getattr(lab, split))
