import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """12 train / 6 val pairs at 64x64, shared by the trainer and CLI tests."""
    from medgan.dataset import DatasetConfig, build_dataset

    out = tmp_path_factory.mktemp("data")
    build_dataset(DatasetConfig(size=64, seed=5, n_train=12, n_val=6), out)
    return out


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
