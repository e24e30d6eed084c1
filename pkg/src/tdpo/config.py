"""Run configuration: flat ``section.key=value`` text with ``#`` comments.

Unset scale-derived keys are filled from the reward scale alpha and action
scale beta: C1 = C2 = 3600 alpha / beta^2, delta_max = beta / 600,
sigma = beta / 60.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

import numpy as np

from tdpo.devine import ExplorationSpec
from tdpo.envs import PENDULUM_VARIANTS, LinearMDP, PendulumConfig, PendulumEnv
from tdpo.mdp import DiscountSpec
from tdpo.policy import PolicyParams, init_params
from tdpo.surrogate import SurrogateConfig
from tdpo.trainer import TrainConfig

DEFAULT_LINE_SEARCH = (1.0, 0.5, 0.25, 0.125)


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass(frozen=True)
class EnvSection:
    name: str = "pendulum"
    variant: str = "main"
    horizon: int = 200
    dt: float = 0.05
    torque_limit: float = 40.0
    f_min: Optional[float] = None
    f_max: Optional[float] = None
    target_offset: Optional[float] = None
    target_amplitude: Optional[float] = None
    reward_scale: float = 1.3e4
    init_mode: str = "seeded"
    init_theta: float = 0.0
    init_omega: float = 0.0
    s0: float = 1.0


@dataclass(frozen=True)
class PolicySection:
    hidden: tuple = (64, 64)
    action_scale: float = 5.0
    bias: bool = True
    output_gain: float = 0.01


@dataclass(frozen=True)
class TrainSection:
    iterations: int = 50
    gamma: float = 0.99
    seed: int = 0
    eval_every: int = 0
    line_search: Optional[tuple] = None
    reward_scale: float = 5.0
    workers: int = 1


@dataclass(frozen=True)
class ExploreSection:
    sigma: Optional[float] = None
    branches: int = 20
    dim_strategy: str = "uniform"
    cover: bool = False


@dataclass(frozen=True)
class SurrogateSection:
    c1: Optional[float] = None
    c2: Optional[float] = None
    delta_max: Optional[float] = None
    cg_damping: float = 1e-2
    cg_iters: int = 10
    cg_tol: float = 1e-10


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs/default"
    dump_trajectory: bool = True
    dump_samples: bool = False
    wall_time: bool = True


@dataclass(frozen=True)
class RunConfig:
    env: EnvSection = field(default_factory=EnvSection)
    policy: PolicySection = field(default_factory=PolicySection)
    train: TrainSection = field(default_factory=TrainSection)
    explore: ExploreSection = field(default_factory=ExploreSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    output: OutputSection = field(default_factory=OutputSection)


_SECTION_TYPES = {
    "env": EnvSection,
    "policy": PolicySection,
    "train": TrainSection,
    "explore": ExploreSection,
    "surrogate": SurrogateSection,
    "output": OutputSection,
}

_INT_KEYS = {"horizon", "iterations", "seed", "eval_every", "workers", "branches", "cg_iters"}
_BOOL_KEYS = {"bias", "cover", "dump_trajectory", "dump_samples", "wall_time"}
_STR_KEYS = {"name", "variant", "init_mode", "dim_strategy", "dir"}

# (predicate, message) checked as soon as a key is parsed
_CHECKS = {
    ("env", "name"): (lambda v: v in ("pendulum", "linear"), "must be 'pendulum' or 'linear'"),
    ("env", "variant"): (lambda v: v in PENDULUM_VARIANTS, f"must be one of {sorted(PENDULUM_VARIANTS)}"),
    ("env", "horizon"): (lambda v: v >= 1, "must be >= 1"),
    ("env", "dt"): (lambda v: v > 0, "must be > 0"),
    ("env", "torque_limit"): (lambda v: v > 0, "must be > 0"),
    ("env", "reward_scale"): (lambda v: v > 0, "must be > 0"),
    ("env", "target_amplitude"): (lambda v: v > 0, "must be > 0"),
    ("env", "init_mode"): (lambda v: v in ("seeded", "random", "fixed"), "must be seeded, random or fixed"),
    ("policy", "action_scale"): (lambda v: v > 0, "must be > 0"),
    ("policy", "hidden"): (lambda v: all(n >= 1 for n in v), "layer widths must be >= 1"),
    ("train", "iterations"): (lambda v: v >= 1, "must be >= 1"),
    ("train", "gamma"): (lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    ("train", "eval_every"): (lambda v: v >= 0, "must be >= 0"),
    ("train", "reward_scale"): (lambda v: v > 0, "must be > 0"),
    ("train", "workers"): (lambda v: v >= 1, "must be >= 1"),
    ("train", "line_search"): (
        lambda v: v is None or (all(c > 0 for c in v) and list(v) == sorted(v, reverse=True)),
        "candidates must be positive and sorted in descending order",
    ),
    ("explore", "sigma"): (lambda v: v > 0, "must be > 0"),
    ("explore", "branches"): (lambda v: v >= 1, "must be >= 1"),
    ("explore", "dim_strategy"): (lambda v: v in ("uniform", "cycle"), "must be 'uniform' or 'cycle'"),
    ("surrogate", "c1"): (lambda v: v >= 0, "must be >= 0"),
    ("surrogate", "c2"): (lambda v: v > 0, "must be > 0"),
    ("surrogate", "delta_max"): (lambda v: v > 0, "must be > 0"),
    ("surrogate", "cg_damping"): (lambda v: v >= 0, "must be >= 0"),
    ("surrogate", "cg_iters"): (lambda v: v >= 1, "must be >= 1"),
    ("surrogate", "cg_tol"): (lambda v: v > 0, "must be > 0"),
}


def _parse_value(section: str, key: str, raw: str) -> Any:
    if key in _STR_KEYS:
        if not raw:
            raise ValueError("empty value")
        return raw
    if key in _BOOL_KEYS:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if key in _INT_KEYS:
        return int(raw)
    if key == "hidden":
        return tuple(int(x) for x in raw.split(",") if x.strip()) if raw.strip() else ()
    if key == "line_search":
        if raw.lower() in ("off", "none", ""):
            return None
        if raw.lower() == "default":
            return DEFAULT_LINE_SEARCH
        return tuple(float(x) for x in raw.split(","))
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {raw!r}")
    return value


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text, filling derived defaults."""
    values: dict[str, dict[str, Any]] = {name: {} for name in _SECTION_TYPES}
    lines: dict[tuple[str, str], int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'section.key=value', got {line!r}", lineno)
        full_key, raw = (part.strip() for part in line.split("=", 1))
        section, _, key = full_key.partition(".")
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown section {section!r}", lineno)
        known = {f.name for f in fields(_SECTION_TYPES[section])}
        if key not in known:
            raise ConfigError(f"unknown key {full_key!r}", lineno)
        if (section, key) in lines:
            raise ConfigError(f"duplicate key {full_key!r} (first set on line {lines[section, key]})", lineno)
        try:
            value = _parse_value(section, key, raw)
        except ValueError as exc:
            raise ConfigError(f"{full_key}: {exc}", lineno) from None
        check = _CHECKS.get((section, key))
        if check is not None and value is not None and not check[0](value):
            raise ConfigError(f"{full_key}={raw} {check[1]}", lineno)
        values[section][key] = value
        lines[section, key] = lineno

    cfg = RunConfig(**{name: cls(**values[name]) for name, cls in _SECTION_TYPES.items()})
    cfg = _fill_defaults(cfg)
    try:
        validate(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _fill_defaults(cfg: RunConfig) -> RunConfig:
    env = cfg.env
    f_min, f_max, offset, amp = PENDULUM_VARIANTS[env.variant]
    env = replace(
        env,
        f_min=f_min if env.f_min is None else env.f_min,
        f_max=f_max if env.f_max is None else env.f_max,
        target_offset=offset if env.target_offset is None else env.target_offset,
        target_amplitude=amp if env.target_amplitude is None else env.target_amplitude,
    )
    beta = cfg.policy.action_scale
    c = 3600.0 * cfg.train.reward_scale / beta**2
    sur = cfg.surrogate
    sur = replace(
        sur,
        c1=c if sur.c1 is None else sur.c1,
        c2=c if sur.c2 is None else sur.c2,
        delta_max=beta / 600.0 if sur.delta_max is None else sur.delta_max,
    )
    explore = cfg.explore
    if explore.sigma is None:
        explore = replace(explore, sigma=beta / 60.0)
    return replace(cfg, env=env, surrogate=sur, explore=explore)


def validate(cfg: RunConfig) -> None:
    """Construct every domain object once so cross-key invariants surface early."""
    build_env(cfg)
    build_train_config(cfg)


def serialize_config(cfg: RunConfig) -> str:
    out = []
    for name in _SECTION_TYPES:
        section = getattr(cfg, name)
        for f in fields(section):
            value = getattr(section, f.name)
            if value is None:
                text = "off" if f.name == "line_search" else None
                if text is None:
                    continue
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, tuple):
                text = ",".join(repr(x) for x in value)
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            out.append(f"{name}.{f.name}={text}")
    return "\n".join(out) + "\n"


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, train=replace(cfg.train, seed=int(seed)))


# --- builders -------------------------------------------------------------------


def pendulum_config(cfg: RunConfig) -> PendulumConfig:
    e = cfg.env
    return PendulumConfig(
        dt=e.dt,
        horizon=e.horizon,
        torque_limit=e.torque_limit,
        f_min=e.f_min,
        f_max=e.f_max,
        target_offset=e.target_offset,
        target_amplitude=e.target_amplitude,
        reward_scale=e.reward_scale,
        init_mode=e.init_mode,
        init_theta=e.init_theta,
        init_omega=e.init_omega,
    )


def build_env(cfg: RunConfig):
    if cfg.env.name == "linear":
        return LinearMDP(s0=cfg.env.s0, horizon=cfg.env.horizon)
    return PendulumEnv(pendulum_config(cfg), seed=cfg.train.seed)


def layer_sizes(cfg: RunConfig, env) -> tuple:
    return (env.obs_dim, *cfg.policy.hidden, env.act_dim)


def build_policy(cfg: RunConfig, env) -> PolicyParams:
    rng = np.random.default_rng((cfg.train.seed, 1))
    return init_params(
        layer_sizes(cfg, env),
        rng,
        action_scale=cfg.policy.action_scale,
        bias=cfg.policy.bias,
        output_gain=cfg.policy.output_gain,
    )


def build_train_config(cfg: RunConfig) -> TrainConfig:
    t, x, s = cfg.train, cfg.explore, cfg.surrogate
    return TrainConfig(
        iterations=t.iterations,
        horizon=cfg.env.horizon,
        discount=DiscountSpec(t.gamma),
        exploration=ExplorationSpec(
            sigma=x.sigma,
            branch_count=x.branches,
            dim_strategy=x.dim_strategy,
            cover=x.cover,
        ),
        surrogate=SurrogateConfig(
            c1=s.c1,
            c2=s.c2,
            delta_max=s.delta_max,
            cg_damping=s.cg_damping,
            cg_iters=s.cg_iters,
            cg_tol=s.cg_tol,
        ),
        line_search=t.line_search,
        seed=t.seed,
        eval_every=t.eval_every,
        workers=t.workers,
        record_wall_time=cfg.output.wall_time,
    )
