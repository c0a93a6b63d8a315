import pytest

from rvqlab.asr import TrainConfig, train_asr
from rvqlab.defense import train_codec
from rvqlab.signal import gen_corpus, write_corpus


@pytest.fixture(scope="session")
def tiny_lab(tmp_path_factory):
    """Deliberately undertrained model and a 2-stage, 8-word codec: enough to exercise plumbing."""
    root = tmp_path_factory.mktemp("tiny_lab")
    train = gen_corpus(16, (2, 3), seed=1)
    test = gen_corpus(3, (2, 3), seed=1, split="test")
    model = train_asr(train, cfg=TrainConfig(epochs=1))
    model.save(root / "model.bin")
    train_codec(train, n_max=2, k=8, seed=0).save(root / "codec.bin")
    manifest = write_corpus(test, root / "corpus")
    return {"root": root, "model": root / "model.bin", "codec": root / "codec.bin", "corpus": manifest}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
