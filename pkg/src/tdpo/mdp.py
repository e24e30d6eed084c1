"""Environment protocol, snapshots, rollouts and discounted payoffs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, Union

import numpy as np

from tdpo.policy import PolicyParams, forward


class SnapshotError(ValueError):
    pass


class RolloutError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class EnvState:
    """Opaque, immutable snapshot of an environment (including any RNG state)."""

    env_type: str
    version: int
    payload: bytes


class Env(Protocol):
    obs_dim: int
    act_dim: int

    def reset(self) -> np.ndarray: ...

    def observe(self) -> np.ndarray: ...

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float]: ...

    def snapshot(self) -> EnvState: ...

    def restore(self, state: EnvState) -> None: ...


def env_snapshot(env: Env) -> EnvState:
    return env.snapshot()


def env_restore(env: Env, snapshot: EnvState) -> None:
    env.restore(snapshot)


def check_snapshot(snapshot: EnvState, env_type: str, version: int) -> None:
    if not isinstance(snapshot, EnvState):
        raise SnapshotError(f"expected EnvState for {env_type}, got {type(snapshot).__name__}")
    if snapshot.env_type != env_type or snapshot.version != version:
        raise SnapshotError(
            f"snapshot of {snapshot.env_type} v{snapshot.version} cannot restore "
            f"{env_type} v{version}"
        )


@dataclass(frozen=True)
class DiscountSpec:
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"discount gamma must lie in [0, 1), got {self.gamma}")


@dataclass
class Trajectory:
    states: list
    actions: list
    rewards: list
    start_snapshot: EnvState
    horizon: int

    def __post_init__(self):
        if not (len(self.states) == len(self.actions) == len(self.rewards) == self.horizon):
            raise ValueError("trajectory lists must all have length equal to the horizon")

    def state_array(self) -> np.ndarray:
        return np.asarray(self.states, dtype=np.float64)

    def action_array(self) -> np.ndarray:
        return np.asarray(self.actions, dtype=np.float64)

    def reward_array(self) -> np.ndarray:
        return np.asarray(self.rewards, dtype=np.float64)


PolicyLike = Union[PolicyParams, Callable[[np.ndarray], np.ndarray]]


def _act(policy: PolicyLike, obs: np.ndarray) -> np.ndarray:
    if isinstance(policy, PolicyParams):
        return forward(policy, obs)
    return np.asarray(policy(obs), dtype=np.float64)


def rollout(env: Env, policy: PolicyLike, horizon: int) -> Trajectory:
    """Run ``horizon`` steps from the env's current state.

    The env is left at the end state; ``start_snapshot`` restores the start.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    start = env.snapshot()
    states, actions, rewards = [], [], []
    obs = env.observe()
    for t in range(horizon):
        if not np.all(np.isfinite(obs)):
            raise RolloutError("non-finite observation", t)
        action = _act(policy, obs)
        if not np.all(np.isfinite(action)):
            raise RolloutError("non-finite action", t)
        states.append(obs)
        actions.append(action)
        obs, reward = env.step(action)
        if not np.isfinite(reward):
            raise RolloutError("non-finite reward", t)
        rewards.append(float(reward))
    return Trajectory(states, actions, rewards, start, horizon)


def discounted_return(rewards: Sequence[float], from_index: int, spec: DiscountSpec) -> float:
    """sum_{i >= from_index} gamma^(i - from_index) r_i over the finite horizon."""
    if not 0 <= from_index < len(rewards):
        raise IndexError(f"from_index {from_index} outside [0, {len(rewards)})")
    total = 0.0
    for r in reversed(rewards[from_index:]):
        total = r + spec.gamma * total
    return total


def payoff(env: Env, policy: PolicyLike, horizon: int, spec: DiscountSpec) -> float:
    """Discounted return of one rollout from the env's current state.

    The env is restored to its starting state afterwards.
    """
    traj = rollout(env, policy, horizon)
    env.restore(traj.start_snapshot)
    return discounted_return(traj.rewards, 0, spec)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    S = traj.state_array().reshape(traj.horizon, -1)
    A = traj.action_array().reshape(traj.horizon, -1)
    header = (
        ["t"]
        + [f"s_{i}" for i in range(S.shape[1])]
        + [f"a_{i}" for i in range(A.shape[1])]
        + ["r"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(traj.horizon):
            row = [str(t)] + [f"{x:.17g}" for x in S[t]] + [f"{x:.17g}" for x in A[t]]
            row.append(f"{traj.rewards[t]:.17g}")
            writer.writerow(row)
