import numpy as np
import pytest

from dgcap.config import tiny_config
from dgcap.data import build_vocabulary, generate_synthetic_dataset
from dgcap.model import CaptionModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    return CaptionModel(tiny_cfg, seed=3)


@pytest.fixture
def synthetic8():
    bundles, caps = generate_synthetic_dataset(0, 8, 4, 2, (8, 8, 8))
    return bundles, caps, build_vocabulary(caps.values(), 1)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one status line per acceptance criterion, printed in the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
