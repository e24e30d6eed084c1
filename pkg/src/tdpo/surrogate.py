"""Quadratic Wasserstein/sensitivity model: curvature products, CG and trust-region scaling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from tdpo.policy import (
    PolicyParams,
    param_jvp,
    param_vjp,
    statejac_param_jvp,
    statejac_param_vjp,
)

LinearOperator = Callable[[np.ndarray], np.ndarray]


class CGError(ArithmeticError):
    pass


class TrustRegionError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SurrogateConfig:
    c1: float
    c2: float
    delta_max: float
    cg_damping: float = 1e-2
    cg_iters: int = 10
    cg_tol: float = 1e-10

    def __post_init__(self):
        if self.c1 < 0:
            raise ValueError("c1 must be non-negative")
        if not self.c2 > 0:
            raise ValueError("c2 must be positive")
        if not self.delta_max > 0:
            raise ValueError("delta_max must be positive")
        if self.cg_damping < 0:
            raise ValueError("cg_damping must be non-negative")
        if self.cg_iters < 1 or not self.cg_tol > 0:
            raise ValueError("cg_iters must be >= 1 and cg_tol > 0")

    @classmethod
    def from_scales(cls, reward_scale: float, action_scale: float, **overrides) -> "SurrogateConfig":
        """Coefficients from reward scale alpha and action scale beta.

        C1 = C2 = 3600 alpha / beta^2, delta_max = beta / 600.
        """
        c = 3600.0 * reward_scale / action_scale**2
        params = dict(c1=c, c2=c, delta_max=action_scale / 600.0)
        params.update(overrides)
        return cls(**params)


def _states(states) -> np.ndarray:
    S = np.asarray(states, dtype=np.float64)
    if S.ndim == 1:
        S = S[None, :]
    if S.shape[0] == 0:
        raise ValueError("curvature needs at least one state")
    return S


def w2_hvp(policy: PolicyParams, states, v) -> np.ndarray:
    """Mean over states of J_theta^T J_theta v (Gauss-Newton of half the mean squared action shift)."""
    S = _states(states)
    return param_vjp(policy, S, param_jvp(policy, S, v)) / S.shape[0]


def sens_hvp(policy: PolicyParams, states, v) -> np.ndarray:
    """Mean over states of G^T G v with G = d vec(da/ds) / dtheta."""
    S = _states(states)
    return statejac_param_vjp(policy, S, statejac_param_jvp(policy, S, v)) / S.shape[0]


def combined_hvp(policy: PolicyParams, states, cfg: SurrogateConfig, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    out = w2_hvp(policy, states, v) + cfg.cg_damping * v
    if cfg.c1 != 0:
        out = out + (cfg.c1 / cfg.c2) * sens_hvp(policy, states, v)
    return out


class CurvatureOperator:
    """Damped curvature ``v -> (H2 + (C1/C2) H1 + damping I) v`` over a fixed state batch."""

    def __init__(self, policy: PolicyParams, states, cfg: SurrogateConfig):
        self.policy = policy
        self.states = _states(states)
        self.cfg = cfg
        self.calls = 0

    @property
    def dim(self) -> int:
        return self.policy.size

    def __call__(self, v) -> np.ndarray:
        self.calls += 1
        return combined_hvp(self.policy, self.states, self.cfg, v)


def conjugate_gradient(
    apply_H: LinearOperator, g, iters: int, tol: float = 1e-10
) -> tuple[np.ndarray, float]:
    """Solve H x = g from x = 0. Returns (x, ||H x - g||).

    Each new direction is H-orthogonalized against all previous ones. In exact
    arithmetic this is plain CG; in floating point it keeps the n-step
    termination that the three-term recurrence loses on spread spectra.
    """
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise CGError("right-hand side is not finite")
    x = np.zeros_like(g)
    r = g.copy()
    g_norm = float(np.linalg.norm(g))
    if g_norm == 0.0:
        return x, 0.0
    directions: list[tuple[np.ndarray, np.ndarray, float]] = []
    for _ in range(iters):
        p = r.copy()
        for q, Hq, qHq in directions:
            p -= (float(r @ Hq) / qHq) * q
        Hp = apply_H(p)
        pHp = float(p @ Hp)
        if not pHp > 0:
            raise CGError(f"non-positive curvature p^T H p = {pHp:g}; operator is not positive definite")
        step = float(p @ r) / pHp
        x = x + step * p
        r = r - step * Hp
        if not np.all(np.isfinite(x)):
            raise CGError("non-finite conjugate-gradient iterate")
        directions.append((p, Hp, pHp))
        if np.linalg.norm(r) <= tol * g_norm:
            break
    residual = float(np.linalg.norm(apply_H(x) - g))
    return x, residual


def trust_region_step(delta_raw, apply_H: LinearOperator, cfg: SurrogateConfig) -> tuple[np.ndarray, float]:
    """Divide the CG direction by C2 and shrink it onto 1/2 d^T H d <= delta_max^2."""
    delta = np.asarray(delta_raw, dtype=np.float64) / cfg.c2
    if not np.any(delta):
        return delta, 1.0
    q = 0.5 * float(delta @ apply_H(delta))
    if not q > 0:
        raise TrustRegionError(f"quadratic form {q:g} is not positive for a nonzero step")
    bound = cfg.delta_max**2
    if q <= bound:
        return delta, 1.0
    alpha = cfg.delta_max / np.sqrt(q)
    return alpha * delta, alpha
