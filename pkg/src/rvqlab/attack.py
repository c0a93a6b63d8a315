"""Untargeted l-infinity attacks: PGD on the bare recognizer and BPDA+EOT through a defense."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .defense import DefenseKind, RvqCodec, apply_array
from .errors import InvalidArgument
from .signal import Waveform, as_samples


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    step_size: float | None = None
    iterations: int = 100
    eot_samples: int = 8
    jitter_sigma: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise InvalidArgument(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 1:
            raise InvalidArgument(f"iterations must be >= 1, got {self.iterations}")
        if self.eot_samples < 1:
            raise InvalidArgument(f"eot_samples must be >= 1, got {self.eot_samples}")
        if self.jitter_sigma < 0:
            raise InvalidArgument(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")

    @property
    def alpha(self) -> float:
        return self.epsilon / 25.0 if self.step_size is None else self.step_size


@dataclass
class AttackResult:
    adversarial: Waveform
    delta: np.ndarray
    loss_trace: list = field(default_factory=list)
    iterations_run: int = 0

    @property
    def initial_loss(self) -> float:
        return self.loss_trace[0]

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


def loss_and_grad(model, samples: np.ndarray, target) -> tuple[float, np.ndarray]:
    """CTC loss of ``target`` and its gradient with respect to the input samples."""
    x = ad.leaf(samples)
    loss = model.loss(x, target)
    (g,) = ad.backward(loss, [x])
    return float(loss.data), g


def _step(x: np.ndarray, delta: np.ndarray, g: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    delta = np.clip(delta + cfg.alpha * np.sign(g), -cfg.epsilon, cfg.epsilon)
    return np.clip(x + delta, -1.0, 1.0) - x


def pgd(model, x, y, cfg: AttackConfig) -> AttackResult:
    """Sign-gradient ascent on the CTC loss, projected onto the eps-ball after every step.

    The defense never enters the loop. ``loss_trace`` holds the loss at every
    iterate including the final one, so it has ``iterations + 1`` entries.
    """
    x = as_samples(x)
    delta = np.zeros_like(x)
    trace = []
    for _ in range(cfg.iterations):
        loss, g = loss_and_grad(model, x + delta, y)
        trace.append(loss)
        delta = _step(x, delta, g, cfg)
    trace.append(float(model.loss(x + delta, y).data))
    return AttackResult(Waveform(x + delta), delta, trace, cfg.iterations)


def eot_noise(cfg: AttackConfig, iteration: int, sample: int, n: int) -> np.ndarray:
    # counter-based: fresh draws every (iteration, sample), reproducible from the seed
    rng = np.random.default_rng([int(cfg.seed), int(iteration), int(sample)])
    return rng.normal(0.0, cfg.jitter_sigma, size=n)


def _eot_estimate(model, d, codec, x, delta, y, cfg, iteration):
    losses, grad = [], np.zeros_like(x)
    for i in range(cfg.eot_samples):
        z = x + delta
        if cfg.jitter_sigma > 0:
            z = z + eot_noise(cfg, iteration, i, x.size)
        # identity backward: the gradient at the defense output is used as the gradient at its input
        loss, g = loss_and_grad(model, apply_array(d, z, codec), y)
        losses.append(loss)
        grad += g
    return float(np.mean(losses)), grad / cfg.eot_samples


def bpda_eot(model, defense, codec: RvqCodec | None, x, y, cfg: AttackConfig) -> AttackResult:
    """Adaptive attack: Monte Carlo average over jittered inputs, defense treated as identity
    in the backward pass."""
    d = DefenseKind.parse(defense) if isinstance(defense, str) else defense
    if d.kind == "rvq" and codec is None:
        raise InvalidArgument("rvq defense requires a trained codec")
    x = as_samples(x)
    delta = np.zeros_like(x)
    trace = []
    for t in range(cfg.iterations):
        loss, g = _eot_estimate(model, d, codec, x, delta, y, cfg, t)
        trace.append(loss)
        delta = _step(x, delta, g, cfg)
    trace.append(_eot_estimate(model, d, codec, x, delta, y, cfg, cfg.iterations)[0])
    return AttackResult(Waveform(x + delta), delta, trace, cfg.iterations)
