"""JSON experiment configuration."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..defense import DefenseKind
from ..errors import InvalidArgument

DEFAULT_DEPTHS = list(range(2, 33, 2))
DEFAULT_PGD_EPS = [0.001, 0.005, 0.01, 0.02, 0.05]
DEFAULT_BPDA_EPS = [0.01, 0.02]
ATTACK_KINDS = ("pgd", "bpda")


@dataclass
class ExperimentConfig:
    """Everything a sweep needs. Paths are resolved relative to the config file."""

    corpus: str
    model_path: str
    codec_path: str
    output_dir: str = "results"
    depths: list = field(default_factory=lambda: list(DEFAULT_DEPTHS))
    pgd_eps: list = field(default_factory=lambda: list(DEFAULT_PGD_EPS))
    bpda_eps: list = field(default_factory=lambda: list(DEFAULT_BPDA_EPS))
    attacks: list = field(default_factory=lambda: ["pgd"])
    # non-rvq defenses evaluated next to every rvq depth under PGD
    defenses: list = field(default_factory=lambda: ["none", "median:5", "resample"])
    # BPDA is expensive, so it only runs against this short list
    bpda_defenses: list = field(default_factory=lambda: ["rvq:9", "median:5", "resample"])
    seeds: list = field(default_factory=lambda: [0])
    n_utts: int | None = None
    iterations: int = 100
    eot_samples: int = 8
    jitter_sigma: float = 0.001

    def __post_init__(self):
        for name in ("depths", "attacks", "seeds"):
            if not getattr(self, name):
                raise InvalidArgument(f"config list {name!r} must be non-empty")
        if "pgd" in self.attacks and not self.pgd_eps:
            raise InvalidArgument("pgd_eps must be non-empty when pgd is enabled")
        if "bpda" in self.attacks and not (self.bpda_eps and self.bpda_defenses):
            raise InvalidArgument("bpda_eps and bpda_defenses must be non-empty when bpda is enabled")
        bad = [a for a in self.attacks if a not in ATTACK_KINDS]
        if bad:
            raise InvalidArgument(f"unknown attack kinds {bad}")
        for d in self.depths:
            DefenseKind("rvq", int(d))
        for spec in list(self.defenses) + list(self.bpda_defenses):
            DefenseKind.parse(spec)
        if any(e < 0 for e in list(self.pgd_eps) + list(self.bpda_eps)):
            raise InvalidArgument("epsilons must be >= 0")
        if self.n_utts is not None and self.n_utts < 1:
            raise InvalidArgument(f"n_utts must be positive, got {self.n_utts}")

    def check_paths(self) -> None:
        missing = [p for p in (self.corpus, self.model_path, self.codec_path) if not Path(p).exists()]
        if missing:
            raise InvalidArgument(f"config references missing paths: {missing}")

    def defense_grid(self) -> list[str]:
        """PGD defenses in sweep order: rvq depths ascending, then the baselines."""
        return [f"rvq:{int(d)}" for d in self.depths] + [str(DefenseKind.parse(s)) for s in self.defenses]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidArgument(f"unknown config keys {unknown}")
        d = dict(d)
        if base is not None:
            for key in ("corpus", "model_path", "codec_path", "output_dir"):
                if key in d and not Path(d[key]).is_absolute():
                    d[key] = str(base / d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base=path.parent)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())
