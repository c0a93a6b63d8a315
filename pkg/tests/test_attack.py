import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvqlab.asr import AcousticModel
from rvqlab.attack import AttackConfig, bpda_eot, eot_noise, pgd
from rvqlab.defense import RvqCodec
from rvqlab.errors import InvalidArgument
from rvqlab.signal import synth_utterance


@pytest.fixture(scope="module")
def model():
    return AcousticModel.init(seed=0)


@pytest.fixture(scope="module")
def utt():
    return synth_utterance([3, 8], seed=4)


def test_config_defaults():
    cfg = AttackConfig(0.02)
    assert (cfg.iterations, cfg.eot_samples, cfg.jitter_sigma) == (100, 8, 0.001)
    assert cfg.alpha == pytest.approx(0.02 / 25)
    assert AttackConfig(0.02, step_size=0.01).alpha == 0.01
    for bad in (dict(epsilon=-1), dict(epsilon=0.1, iterations=0), dict(epsilon=0.1, eot_samples=0)):
        with pytest.raises(InvalidArgument):
            AttackConfig(**bad)


def test_zero_budget_is_identity(model, utt):
    res = pgd(model, utt.waveform, utt.transcript, AttackConfig(0.0, iterations=3))
    assert np.array_equal(res.adversarial.samples, utt.waveform.samples)
    assert np.all(res.delta == 0)


def test_pgd_respects_budget_and_range(model, utt):
    res = pgd(model, utt.waveform, utt.transcript, AttackConfig(0.01, iterations=5))
    x = utt.waveform.samples
    assert np.max(np.abs(res.delta)) <= 0.01 + 1e-15
    assert np.max(np.abs(res.adversarial.samples)) <= 1.0
    assert np.allclose(res.adversarial.samples - x, res.delta, atol=1e-15)
    assert len(res.loss_trace) == 6
    assert res.final_loss > res.initial_loss


def test_pgd_clips_to_valid_amplitude(model):
    loud = synth_utterance([5], seed=0).waveform.samples / 0.7  # peak exactly 1.0
    res = pgd(model, loud, (5,), AttackConfig(0.05, iterations=3))
    assert np.max(np.abs(res.adversarial.samples)) <= 1.0


def test_pgd_deterministic(model, utt):
    cfg = AttackConfig(0.01, iterations=3)
    a = pgd(model, utt.waveform, utt.transcript, cfg)
    b = pgd(model, utt.waveform, utt.transcript, cfg)
    assert np.array_equal(a.delta, b.delta) and a.loss_trace == b.loss_trace


def test_bpda_without_defense_equals_pgd(model, utt):
    cfg = AttackConfig(0.01, iterations=4, eot_samples=1, jitter_sigma=0.0)
    a = pgd(model, utt.waveform, utt.transcript, cfg)
    b = bpda_eot(model, "none", None, utt.waveform, utt.transcript, cfg)
    assert np.array_equal(a.adversarial.samples, b.adversarial.samples)
    assert a.loss_trace == b.loss_trace


def test_bpda_through_defenses(model, utt):
    codec = RvqCodec(np.random.default_rng(0).normal(size=(3, 4, 512)) * 0.01)
    cfg = AttackConfig(0.01, iterations=2, eot_samples=2)
    for d in ("rvq:2", "median:5", "resample"):
        res = bpda_eot(model, d, codec, utt.waveform, utt.transcript, cfg)
        assert np.max(np.abs(res.delta)) <= 0.01 + 1e-15
        assert len(res.loss_trace) == 3
    with pytest.raises(InvalidArgument):
        bpda_eot(model, "rvq:2", None, utt.waveform, utt.transcript, cfg)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 200), st.integers(0, 16))
def test_eot_noise_is_counter_based(seed, it, k):
    cfg = AttackConfig(0.01, seed=seed)
    a = eot_noise(cfg, it, k, 64)
    assert np.array_equal(a, eot_noise(cfg, it, k, 64))
    assert not np.array_equal(a, eot_noise(cfg, it + 1, k, 64))
