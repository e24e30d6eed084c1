import numpy as np
import pytest

from support import RewardFreeEnv, linear_policy
from tdpo.devine import ExplorationSpec
from tdpo.envs import LinearMDP, PendulumEnv
from tdpo.mdp import DiscountSpec, payoff, rollout
from tdpo.policy import init_params
from tdpo.surrogate import CurvatureOperator, SurrogateConfig
from tdpo.trainer import CURVE_HEADER, IterationError, TrainConfig, line_search_step, tdpo_iterate, train, write_curve_csv

GAMMA = DiscountSpec(0.99)


def linear_cfg(iterations=3, line_search=None, **kw):
    return TrainConfig(
        iterations=iterations,
        horizon=5,
        discount=GAMMA,
        exploration=ExplorationSpec.full_coverage(1e-6, 5, 1),
        surrogate=SurrogateConfig.from_scales(5.0, 1.0),
        line_search=line_search,
        record_wall_time=False,
        **kw,
    )


def pendulum_cfg(iterations, K=6, line_search=None):
    return TrainConfig(
        iterations=iterations,
        horizon=200,
        discount=GAMMA,
        exploration=ExplorationSpec(5.0 / 60, K),
        surrogate=SurrogateConfig.from_scales(5.0, 5.0),
        line_search=line_search,
        seed=4,
        record_wall_time=False,
    )


def test_zero_gradient_is_a_no_op():
    pol = linear_policy(0.4)
    new, rec = tdpo_iterate(RewardFreeEnv(horizon=5), pol, linear_cfg(), np.random.default_rng(0))
    assert new is pol and rec.step_norm == 0.0 and rec.grad_norm == 0.0


def test_iterate_is_deterministic():
    env = PendulumEnv(seed=2)
    pol = init_params((3, 6, 1), np.random.default_rng(0), action_scale=5.0)
    cfg = pendulum_cfg(1)
    a = tdpo_iterate(env, pol, cfg, np.random.default_rng(9))
    b = tdpo_iterate(env, pol, cfg, np.random.default_rng(9))
    assert a[1] == b[1] and np.array_equal(a[0].flat, b[0].flat)


def test_step_respects_trust_region():
    env = PendulumEnv(seed=2)
    pol = init_params((3, 6, 1), np.random.default_rng(0), action_scale=5.0)
    cfg = pendulum_cfg(1)
    new, rec = tdpo_iterate(env, pol, cfg, np.random.default_rng(1))
    env.reset()
    states = rollout(env, pol, 200).state_array()
    delta = new.flat - pol.flat
    q = 0.5 * delta @ CurvatureOperator(pol, states, cfg.surrogate)(delta)
    assert q <= cfg.surrogate.delta_max**2 * (1 + 1e-9)
    assert rec.step_norm == pytest.approx(np.linalg.norm(delta), rel=1e-12)


def test_line_search_examples():
    env = LinearMDP(horizon=1)
    env.reset()
    pol = linear_policy(-1.0)
    g = np.zeros(1)
    assert line_search_step(env, pol, g, np.array([2.0]), [1.0], 1, GAMMA)[0] == 1.0
    c, value = line_search_step(env, pol, g, np.array([2.0]), [1.0, 0.5, 0.25], 1, GAMMA)
    assert c == 0.5 and value == pytest.approx(-1.0)
    flat = RewardFreeEnv(horizon=1)
    flat.reset()
    assert line_search_step(flat, pol, g, np.array([2.0]), [1.0, 0.5, 0.25], 1, GAMMA)[0] == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        linear_cfg(iterations=0)
    with pytest.raises(ValueError):
        linear_cfg(line_search=(0.5, 1.0))


def test_env_step_accounting():
    _, recs = train(PendulumEnv(seed=1), init_params((3, 4, 1), np.random.default_rng(0)), pendulum_cfg(3, K=4, line_search=(1.0, 0.5)))
    per_iter = (1 + 4 + 2) * 200
    assert [r.env_steps for r in recs] == [per_iter, 2 * per_iter, 3 * per_iter]


def test_train_reproducible_and_checkpoints(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        out.mkdir()
        cfg = TrainConfig(**{**pendulum_cfg(4).__dict__, "eval_every": 2})
        final, recs = train(PendulumEnv(seed=1), init_params((3, 4, 1), np.random.default_rng(0)), cfg, checkpoint_dir=out)
        write_curve_csv(recs, out / "curve.csv")
        runs.append((out / "curve.csv").read_bytes())
        assert sorted(p.name for p in out.iterdir()) == ["ckpt_2", "ckpt_4", "curve.csv"]
    assert runs[0] == runs[1]
    header, *rows = runs[0].decode().splitlines()
    assert header.split(",") == CURVE_HEADER and len(rows) == 4


def test_linear_mdp_never_decreases():
    cfg = linear_cfg(iterations=50)
    pol = linear_policy(-0.3)
    env = LinearMDP(horizon=5)
    _, recs = train(env, pol, cfg)
    payoffs = [r.payoff_discounted for r in recs]
    assert all(b >= a for a, b in zip(payoffs, payoffs[1:]))


def test_pendulum_improves_over_fifty_iterations():
    env = PendulumEnv(seed=0)
    pol = init_params((3, 64, 64, 1), np.random.default_rng(0), action_scale=5.0)
    final, _ = train(env, pol, pendulum_cfg(50, K=20))
    env.reset()
    before = payoff(env, pol, 200, GAMMA)
    assert payoff(env, final, 200, GAMMA) > before


def test_failures_are_stage_tagged():
    class Exploding(LinearMDP):
        def step(self, action):
            if self.t == 2:
                raise ValueError("boom")
            return super().step(action)

    with pytest.raises(IterationError) as info:
        tdpo_iterate(Exploding(horizon=5), linear_policy(0.1), linear_cfg(), np.random.default_rng(0), iteration=7)
    assert info.value.stage == "sample" and info.value.iteration == 7
