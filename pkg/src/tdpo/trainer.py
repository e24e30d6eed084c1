"""Outer policy-improvement loop: sample, estimate, solve, step."""

from __future__ import annotations

import csv
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from tdpo.devine import ExplorationSpec, advantage_gradient, collect_vine_samples
from tdpo.mdp import DiscountSpec, Env, discounted_return, payoff
from tdpo.policy import PolicyParams, save_checkpoint
from tdpo.surrogate import CurvatureOperator, SurrogateConfig, conjugate_gradient, trust_region_step

CURVE_HEADER = [
    "iter",
    "env_steps",
    "payoff_disc",
    "payoff_undisc",
    "grad_norm",
    "step_norm",
    "cg_residual",
    "alpha",
    "wall_time_s",
]


class IterationError(RuntimeError):
    def __init__(self, stage: str, cause: Exception, iteration: Optional[int] = None):
        where = f"iteration {iteration} " if iteration is not None else ""
        super().__init__(f"{where}[{stage}] {cause}")
        self.stage = stage
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    horizon: int
    discount: DiscountSpec
    exploration: ExplorationSpec
    surrogate: SurrogateConfig
    line_search: Optional[tuple] = None
    seed: int = 0
    eval_every: int = 0
    workers: int = 1
    record_wall_time: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.eval_every < 0 or self.workers < 1:
            raise ValueError("eval_every must be >= 0 and workers >= 1")
        if self.line_search is not None:
            cands = tuple(float(c) for c in self.line_search)
            if not cands or any(not c > 0 for c in cands):
                raise ValueError("line-search candidates must be a non-empty list of positive scalars")
            if list(cands) != sorted(cands, reverse=True):
                raise ValueError("line-search candidates must be sorted in descending order")
            object.__setattr__(self, "line_search", cands)


@dataclass(frozen=True)
class TrainRecord:
    iter: int
    env_steps: int
    payoff_discounted: float
    payoff_undiscounted: float
    grad_norm: float
    step_norm: float
    cg_residual: float
    alpha: float
    wall_time_s: float

    def csv_row(self) -> list[str]:
        out = []
        for f, value in zip(fields(self), astuple(self)):
            out.append(str(value) if f.type == "int" else f"{value:.17g}")
        return out


def line_search_step(
    env: Env,
    policy: PolicyParams,
    g: np.ndarray,
    delta_star: np.ndarray,
    candidates: Sequence[float],
    horizon: int,
    discount: DiscountSpec,
) -> tuple[float, float]:
    """Pick the candidate scale c maximizing the rollout payoff of theta + c * delta_star.

    Ties go to the larger candidate. Candidates whose rollout fails or whose payoff
    is not finite are dropped. ``g`` is accepted for interface symmetry; the choice
    is made purely on sampled payoffs.
    """
    if not candidates:
        raise ValueError("line search needs at least one candidate")
    start = env.snapshot()
    best = None
    for c in candidates:
        env.restore(start)
        try:
            value = payoff(env, policy.with_flat(policy.flat + c * delta_star), horizon, discount)
        except (ArithmeticError, RuntimeError, ValueError):
            continue
        if not np.isfinite(value):
            continue
        if best is None or value > best[1] or (value == best[1] and c > best[0]):
            best = (float(c), value)
    env.restore(start)
    if best is None:
        raise ArithmeticError("every line-search candidate produced a non-finite payoff")
    return best


def tdpo_iterate(
    env: Env,
    policy: PolicyParams,
    cfg: TrainConfig,
    rng: np.random.Generator,
    iteration: int = 0,
    env_steps: int = 0,
) -> tuple[PolicyParams, TrainRecord]:
    """One improvement step. ``env_steps`` is the count before this iteration."""
    tic = time.perf_counter()
    stage = "sample"
    try:
        env.reset()
        base, samples = collect_vine_samples(
            env, policy, cfg.exploration, cfg.discount, cfg.horizon, rng, cfg.workers
        )
        steps = (1 + len(samples)) * cfg.horizon
        stage = "gradient"
        g = advantage_gradient(samples, policy)
        stage = "solve"
        H = CurvatureOperator(policy, base.state_array(), cfg.surrogate)
        raw, residual = conjugate_gradient(H, g, cfg.surrogate.cg_iters, cfg.surrogate.cg_tol)
        stage = "trust_region"
        delta, alpha = trust_region_step(raw, H, cfg.surrogate)
        if cfg.line_search is not None and np.any(delta):
            stage = "line_search"
            scale, _ = line_search_step(
                env, policy, g, delta, cfg.line_search, cfg.horizon, cfg.discount
            )
            steps += len(cfg.line_search) * cfg.horizon
            delta = scale * delta
            alpha *= scale
        elif cfg.line_search is not None:
            steps += len(cfg.line_search) * cfg.horizon
        stage = "update"
        new_policy = policy.with_flat(policy.flat + delta) if np.any(delta) else policy
    except Exception as exc:
        raise IterationError(stage, exc, iteration) from exc

    record = TrainRecord(
        iter=iteration,
        env_steps=env_steps + steps,
        payoff_discounted=discounted_return(base.rewards, 0, cfg.discount),
        payoff_undiscounted=float(np.sum(base.rewards)),
        grad_norm=float(np.linalg.norm(g)),
        step_norm=float(np.linalg.norm(delta)),
        cg_residual=residual,
        alpha=float(alpha),
        wall_time_s=time.perf_counter() - tic if cfg.record_wall_time else 0.0,
    )
    return new_policy, record


def train(
    env: Env,
    initial_policy: PolicyParams,
    cfg: TrainConfig,
    checkpoint_dir: Optional[Path] = None,
    callback: Optional[Callable[[TrainRecord, PolicyParams], None]] = None,
) -> tuple[PolicyParams, list[TrainRecord]]:
    """Run ``cfg.iterations`` iterations; the record of iteration k describes the policy before its update."""
    rng = np.random.default_rng((cfg.seed, 2))
    policy = initial_policy
    records: list[TrainRecord] = []
    steps = 0
    for k in range(1, cfg.iterations + 1):
        policy, record = tdpo_iterate(env, policy, cfg, rng, iteration=k, env_steps=steps)
        steps = record.env_steps
        records.append(record)
        if checkpoint_dir is not None and cfg.eval_every and k % cfg.eval_every == 0:
            save_checkpoint(policy, Path(checkpoint_dir) / f"ckpt_{k}")
        if callback is not None:
            callback(record, policy)
    return policy, records


def write_curve_csv(records: Sequence[TrainRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for rec in records:
            writer.writerow(rec.csv_row())
