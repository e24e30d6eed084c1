import numpy as np
import pytest

from support import RewardFreeEnv, linear_policy
from tdpo.envs import LinearMDP
from tdpo.oracles import (
    FDSpec,
    cosine_similarity,
    dense_operator,
    fd_payoff_gradient,
    gaussian_kl,
    gaussian_w2,
    gradient_report,
)
from tdpo.policy import init_params


def test_fd_payoff_gradient_examples():
    env = RewardFreeEnv(horizon=3)
    env.reset()
    assert not np.any(fd_payoff_gradient(env, linear_policy(0.3), 3, 0.9))
    env = LinearMDP(horizon=1)
    env.reset()
    assert fd_payoff_gradient(env, linear_policy(1.0), 1, 0.5)[0] == pytest.approx(-0.2, abs=1e-10)


def test_fd_payoff_gradient_richardson():
    env = LinearMDP(horizon=6)
    env.reset()
    pol = init_params((1, 3, 1), np.random.default_rng(1), output_gain=1.0)
    g = {h: fd_payoff_gradient(env, pol, 6, 0.95, FDSpec(h=h)) for h in (2e-2, 1e-2, 5e-3)}
    ratio = np.linalg.norm(g[2e-2] - g[1e-2]) / np.linalg.norm(g[1e-2] - g[5e-3])
    assert ratio == pytest.approx(4.0, rel=0.05)


def test_fd_leaves_env_at_start():
    env = LinearMDP(horizon=4)
    env.reset()
    before = env.snapshot()
    fd_payoff_gradient(env, linear_policy(0.2), 4, 0.9)
    assert env.snapshot() == before


def test_fdspec_validation():
    with pytest.raises(ValueError):
        FDSpec(h=0.0)
    with pytest.raises(ValueError):
        FDSpec(scheme="forward")


def test_dense_operator():
    np.testing.assert_array_equal(dense_operator(lambda v: v, 4), np.eye(4))
    with pytest.raises(ValueError):
        dense_operator(lambda v: v, 10_000)


def test_gaussian_helpers():
    assert gaussian_w2(1.2, 1.2, 0.3) == 0.0
    assert gaussian_w2(0.0, 3.0, 1.0) == 3.0
    assert gaussian_kl(0.0, 3.0, 1.0) == pytest.approx(4.5, abs=1e-15)
    assert gaussian_w2(0.0 + 7.5, 3.0 + 7.5, 2.0) == gaussian_w2(0.0, 3.0, 2.0)
    for m1, m2, s in [(0.1, -2.0, 0.7), (4.0, 4.5, 3.0)]:
        assert gaussian_kl(m1, m2, s) == pytest.approx(gaussian_w2(m1, m2, s) ** 2 / (2 * s * s), rel=1e-12)


def test_gradient_report():
    rep = gradient_report([1.0, 2.0, 3.5], [1.0, 2.0, 3.0])
    assert rep["worst_index"] == 2 and rep["max_abs_error"] == pytest.approx(0.5)
    assert cosine_similarity([1, 0], [0, 2]) == 0.0
    assert cosine_similarity([0, 0], [1, 1]) == 0.0
