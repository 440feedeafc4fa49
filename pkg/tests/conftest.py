import numpy as np
import pytest

from targettrain import data as D
from targettrain import model as M
from targettrain import training as TR


def _mnist_available() -> bool:
    try:
        d = D.default_mnist_dir()
        return any((d / (f + s)).exists() for f in D.MNIST_FILES["test"][:1] for s in ("", ".gz"))
    except Exception:
        return False


requires_mnist = pytest.mark.skipif(not _mnist_available(), reason="MNIST IDX files not found")


@pytest.fixture(scope="session")
def synth():
    return D.synth_gaussians(250, seed=0)


@pytest.fixture(scope="session")
def linear_model(synth):
    """Two-class softmax-linear classifier trained to separate the synthetic blobs."""
    m, _ = TR.run_training(M.linear_spec(), synth, TR.TrainConfig(epochs=20, batch_size=32, lr=0.05))
    return m


@pytest.fixture(scope="session")
def synth_model(synth):
    m, _ = TR.run_training(M.synth_spec(), synth, TR.TrainConfig(epochs=10, batch_size=32, lr=0.01))
    return m


@pytest.fixture(scope="session")
def synth_target_model(synth):
    cfg = TR.TrainConfig(epochs=10, batch_size=32, lr=0.01, defense="target-clean")
    m, _ = TR.run_training(M.synth_spec(target=True), synth, cfg)
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, repeated in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
