"""Brute-force reference computations used to check the analytic machinery."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from tdpo.mdp import DiscountSpec, Env, payoff
from tdpo.policy import PolicyParams, forward, state_jacobian

MAX_DENSE_DIM = 500


@dataclass(frozen=True)
class FDSpec:
    h: float = 1e-4
    scheme: str = "central"

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("finite-difference step must be positive")
        if self.scheme != "central":
            raise ValueError(f"unsupported finite-difference scheme {self.scheme!r}")


def fd_payoff_gradient(
    env: Env, policy: PolicyParams, horizon: int, gamma: float, fd: FDSpec = FDSpec()
) -> np.ndarray:
    """Central-difference payoff gradient; two rollouts per parameter from the env's current state."""
    spec = DiscountSpec(gamma)
    start = env.snapshot()
    theta = policy.flat
    grad = np.empty(theta.size)
    for i in range(theta.size):
        values = []
        for sign in (1.0, -1.0):
            shifted = theta.copy()
            shifted[i] += sign * fd.h
            env.restore(start)
            values.append(payoff(env, policy.with_flat(shifted), horizon, spec))
        if not all(np.isfinite(values)):
            raise ArithmeticError(f"non-finite payoff while perturbing parameter {i}")
        grad[i] = (values[0] - values[1]) / (2.0 * fd.h)
    env.restore(start)
    return grad


def dense_operator(apply_H: Callable[[np.ndarray], np.ndarray], dim: int) -> np.ndarray:
    """Matrix whose i-th column is apply_H(e_i)."""
    if dim > MAX_DENSE_DIM:
        raise ValueError(f"refusing to densify a {dim}-dimensional operator (limit {MAX_DENSE_DIM})")
    out = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        out[:, i] = apply_H(e)
    return out


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function, shape (len(f(x)), len(x))."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.ravel(f(x + e)) - np.ravel(f(x - e))) / (2.0 * h))
    return np.stack(cols, axis=1)


def fd_hessian(f: Callable[[np.ndarray], float], x, h: float = 1e-4) -> np.ndarray:
    """Symmetric four-point second differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h * h)
            H[i, j] = H[j, i] = val
    return H


def action_shift_objective(policy: PolicyParams, states) -> Callable[[np.ndarray], float]:
    """delta -> 1/2 mean_s ||pi_{theta+delta}(s) - pi_theta(s)||^2."""
    S = np.atleast_2d(np.asarray(states, dtype=np.float64))
    ref = forward(policy, S)

    def objective(delta):
        diff = forward(policy.with_flat(policy.flat + delta), S) - ref
        return 0.5 * float(np.sum(diff * diff)) / S.shape[0]

    return objective


def fd_sensitivity_gauss_newton(policy: PolicyParams, states, h: float = 1e-6) -> np.ndarray:
    """mean_s G_s^T G_s with G_s the central-difference derivative of vec J(s) in theta."""
    S = np.atleast_2d(np.asarray(states, dtype=np.float64))
    total = np.zeros((policy.size, policy.size))
    for s in S:
        G = fd_jacobian(lambda th: state_jacobian(policy.with_flat(th), s), policy.flat, h)
        total += G.T @ G
    return total / S.shape[0]


def gaussian_w2(m1: float, m2: float, sigma: float) -> float:
    """Wasserstein distance between N(m1, sigma^2) and N(m2, sigma^2).

    >>> gaussian_w2(0.0, 3.0, 1.0)
    3.0
    >>> gaussian_w2(0.0, 3.0, 1.0) ** 2 / (2 * 1.0**2) == gaussian_kl(0.0, 3.0, 1.0)
    True
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return abs(float(m1) - float(m2))


def gaussian_kl(m1: float, m2: float, sigma: float) -> float:
    """KL(N(m1, sigma^2) || N(m2, sigma^2)) via the general two-Gaussian formula."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    s1 = s2 = float(sigma)
    return math.log(s2 / s1) + (s1 * s1 + (float(m1) - float(m2)) ** 2) / (2.0 * s2 * s2) - 0.5


def cosine_similarity(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else 0.0


def gradient_report(estimate, reference) -> dict:
    """Summary used by the check-grad command."""
    estimate = np.ravel(estimate)
    reference = np.ravel(reference)
    err = np.abs(estimate - reference)
    worst = int(np.argmax(err))
    return {
        "max_abs_error": float(err[worst]),
        "cosine_similarity": cosine_similarity(estimate, reference),
        "worst_index": worst,
        "estimate_at_worst": float(estimate[worst]),
        "reference_at_worst": float(reference[worst]),
    }
