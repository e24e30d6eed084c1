"""Deterministic-vine advantage sampling and the linearized advantage surrogate.

A base trajectory is rolled out with the current policy. Each branch restores
the start state, replays the base actions up to step ``t``, applies a single
perturbed action ``a_t + sigma * e_j`` and then follows the policy to the
horizon. The branch advantage is the difference of the two discounted tails.
"""

from __future__ import annotations

import copy
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tdpo.mdp import DiscountSpec, Env, Trajectory, discounted_return, rollout
from tdpo.policy import PolicyParams, forward, param_vjp

EPS_GUARD = 1e-12


class DegenerateBranchError(ValueError):
    pass


class BranchError(RuntimeError):
    def __init__(self, branch: int, cause: Exception):
        super().__init__(f"branch {branch}: {cause}")
        self.branch = branch


@dataclass(frozen=True)
class ExplorationSpec:
    """How branches are placed.

    ``nu`` is a probability vector over time steps (``None`` means uniform).
    With ``cover=True`` every (time, dimension) pair is branched exactly once,
    in order, and ``branch_count`` must equal ``horizon * act_dim``.
    """

    sigma: float
    branch_count: int
    nu: Optional[tuple] = None
    dim_strategy: str = "uniform"
    cover: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"exploration sigma must be positive, got {self.sigma}")
        if self.branch_count < 1:
            raise ValueError("branch_count must be at least 1")
        if self.dim_strategy not in ("uniform", "cycle"):
            raise ValueError(f"unknown dim_strategy {self.dim_strategy!r}")
        if self.nu is not None:
            nu = np.asarray(self.nu, dtype=np.float64)
            if np.any(nu < 0) or not np.isclose(nu.sum(), 1.0, rtol=0, atol=1e-12):
                raise ValueError("nu must be a probability vector")
            if self.cover:
                raise ValueError("full coverage requires a uniform time distribution")
            object.__setattr__(self, "nu", tuple(float(x) for x in nu))

    @classmethod
    def full_coverage(cls, sigma: float, horizon: int, act_dim: int) -> "ExplorationSpec":
        return cls(sigma, horizon * act_dim, dim_strategy="cycle", cover=True)

    def time_probs(self, horizon: int) -> np.ndarray:
        if self.nu is None:
            return np.full(horizon, 1.0 / horizon)
        nu = np.asarray(self.nu)
        if nu.size != horizon:
            raise ValueError(f"nu has {nu.size} entries for horizon {horizon}")
        return nu


@dataclass(frozen=True)
class VineSample:
    t: int
    state: np.ndarray
    action: np.ndarray
    action_prime: np.ndarray
    advantage: float
    weight: float
    dim_index: int

    @property
    def displacement(self) -> np.ndarray:
        return self.action_prime - self.action

    @property
    def norm2(self) -> float:
        d = self.displacement
        return float(d @ d)


def _placements(spec: ExplorationSpec, horizon: int, act_dim: int, rng: np.random.Generator):
    K = spec.branch_count
    if spec.cover:
        if K != horizon * act_dim:
            raise ValueError(f"full coverage needs {horizon * act_dim} branches, got {K}")
        return [(k // act_dim, k % act_dim) for k in range(K)]
    probs = spec.time_probs(horizon)
    times = rng.choice(horizon, size=K, p=probs)
    if spec.dim_strategy == "cycle":
        dims = np.arange(K) % act_dim
    else:
        dims = rng.integers(0, act_dim, size=K)
    return [(int(t), int(j)) for t, j in zip(times, dims)]


def run_branches(
    env: Env,
    policy: PolicyParams,
    base: Trajectory,
    times: Sequence[int],
    primes: Sequence[np.ndarray],
) -> list[list[float]]:
    """Rewards of branches that deviate from ``base`` only at ``times[k]``.

    Every branch restarts from the base start state and replays the base
    actions before its branch point. Branches advance in lockstep on private
    env copies so the policy is evaluated once per time step for all of them.
    """
    envs = []
    for _ in times:
        clone = copy.deepcopy(env)
        clone.restore(base.start_snapshot)
        envs.append(clone)
    obs = [None] * len(times)
    rewards: list[list[float]] = [[] for _ in times]
    for tau in range(base.horizon):
        following = [k for k, t in enumerate(times) if t < tau]
        if following:
            actions = forward(policy, np.stack([obs[k] for k in following]))
            policy_action = dict(zip(following, actions))
        for k, t in enumerate(times):
            if tau < t:
                action = base.actions[tau]
            elif tau == t:
                action = primes[k]
            else:
                action = policy_action[k]
            try:
                obs[k], r = envs[k].step(action)
            except Exception as exc:
                raise BranchError(k, exc) from exc
            rewards[k].append(float(r))
    return rewards


def collect_vine_samples(
    env: Env,
    policy: PolicyParams,
    spec: ExplorationSpec,
    discount: DiscountSpec,
    horizon: int,
    rng: Optional[np.random.Generator] = None,
    workers: int = 1,
) -> tuple[Trajectory, list[VineSample]]:
    """One base rollout plus ``spec.branch_count`` vine branches.

    The env is left restored to the base trajectory's start state.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    base = rollout(env, policy, horizon)
    act_dim = base.actions[0].size
    placements = _placements(spec, horizon, act_dim, rng)
    probs = spec.time_probs(horizon)
    primes = []
    for t, j in placements:
        a_prime = np.array(base.actions[t], dtype=np.float64, copy=True)
        a_prime[j] += spec.sigma
        primes.append(a_prime)

    times = [t for t, _ in placements]
    if workers > 1 and len(placements) > 1:
        # strided slices, one lockstep group per worker thread
        slices = [list(range(w, len(placements), workers)) for w in range(workers)]

        def run_slice(idx):
            try:
                return run_branches(env, policy, base, [times[k] for k in idx], [primes[k] for k in idx])
            except BranchError as exc:
                raise BranchError(idx[exc.branch], exc.__cause__) from exc.__cause__

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_slice, slices))
        branch_rewards = [None] * len(placements)
        for idx, part in zip(slices, parts):
            for k, rewards in zip(idx, part):
                branch_rewards[k] = rewards
    else:
        branch_rewards = run_branches(env, policy, base, times, primes)
    env.restore(base.start_snapshot)

    samples = []
    for (t, j), a_prime, rewards in zip(placements, primes, branch_rewards):
        q = discounted_return(rewards, t, discount)
        v = discounted_return(base.rewards, t, discount)
        samples.append(
            VineSample(
                t=t,
                state=np.asarray(base.states[t], dtype=np.float64),
                action=np.asarray(base.actions[t], dtype=np.float64),
                action_prime=a_prime,
                advantage=q - v,
                weight=act_dim * discount.gamma**t / probs[t],
                dim_index=j,
            )
        )
    return base, samples


def _coefficients(samples: Sequence[VineSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if not samples:
        raise ValueError("advantage surrogate needs at least one sample")
    S = np.stack([smp.state for smp in samples])
    A = np.stack([smp.action for smp in samples])
    D = np.stack([smp.displacement for smp in samples])
    norm2 = np.einsum("ij,ij->i", D, D)
    bad = np.flatnonzero(norm2 < EPS_GUARD**2)
    if bad.size:
        raise DegenerateBranchError(f"branch {int(bad[0])} has |a' - a| below {EPS_GUARD:g}")
    scale = np.array([smp.weight * smp.advantage for smp in samples]) / norm2 / len(samples)
    return S, A, D, scale


def advantage_surrogate(samples: Sequence[VineSample], candidate: PolicyParams) -> float:
    """Linear-interpolation advantage estimate of ``candidate`` against the sampling policy."""
    S, A, D, scale = _coefficients(samples)
    # row-by-row, the path rollout used, so the sampling policy reproduces A bit for bit
    actions = np.stack([forward(candidate, s) for s in S])
    proj = np.einsum("ij,ij->i", actions - A, D)
    return float(scale @ proj)


def advantage_gradient(samples: Sequence[VineSample], policy: PolicyParams) -> np.ndarray:
    """Parameter gradient of ``advantage_surrogate`` at ``policy``."""
    S, _, D, scale = _coefficients(samples)
    return param_vjp(policy, S, scale[:, None] * D)


def write_samples_csv(samples: Sequence[VineSample], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "t", "j", "A", "w", "norm2"])
        for k, smp in enumerate(samples):
            writer.writerow(
                [k, smp.t, smp.dim_index, f"{smp.advantage:.17g}", f"{smp.weight:.17g}", f"{smp.norm2:.17g}"]
            )
