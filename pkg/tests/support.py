"""Shared test helpers."""

import numpy as np

from tdpo.envs import LinearMDP
from tdpo.policy import PolicyParams

# acceptance outcomes, name -> (passed, detail); read by the terminal summary
RESULTS: dict[str, tuple[bool, str]] = {}


class RewardFreeEnv(LinearMDP):
    """Linear dynamics with every reward zeroed."""

    def step(self, action):
        obs, _ = super().step(action)
        return obs, 0.0


def linear_policy(theta: float) -> PolicyParams:
    return PolicyParams((1, 1), np.array([float(theta)]), bias=False)
