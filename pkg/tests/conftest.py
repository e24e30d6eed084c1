import numpy as np
import pytest

from tdpo.envs import PendulumEnv
from tdpo.policy import init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pendulum():
    return PendulumEnv(seed=3)


@pytest.fixture
def tiny_mlp(rng):
    # 3 -> 6 -> 5 -> 2 with biases: 24 + 35 + 12 = 71 parameters
    p = init_params((3, 6, 5, 2), rng, action_scale=1.7, output_gain=1.0)
    return p.with_flat(p.flat + 0.3 * rng.standard_normal(p.size))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute desk-scale training runs")


def pytest_terminal_summary(terminalreporter):
    from support import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (passed, detail) in sorted(RESULTS.items()):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {name}: {detail}")
