import numpy as np
import pytest

from prunexai.dataset import SyntheticConfig, generate_synthetic, normalize, split


@pytest.fixture(scope="session")
def synth42():
    return generate_synthetic(SyntheticConfig(seed=42))


@pytest.fixture(scope="session")
def small_split():
    ds, _ = normalize(generate_synthetic(SyntheticConfig(n_samples=200, seed=7)))
    return split(ds, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
