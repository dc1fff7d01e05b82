import numpy as np
import pytest

from rewrap import _kernels
from rewrap.corruption import AttackSpec, GenConfig, apply_attack, generate_clean


def make_data(n=200, d=8, sigma=1.0, seed=0, attack=None, alpha=0.0, attack_seed=1):
    data = generate_clean(GenConfig(n, d, sigma, seed))
    if attack is not None:
        data = apply_attack(data, AttackSpec(attack, alpha, attack_seed))
    return data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numpy", "numba"] if _kernels.HAVE_NUMBA else ["numpy"])
def each_backend(request):
    before = _kernels.backend()
    _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(before)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
