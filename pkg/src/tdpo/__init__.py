"""Deterministic policy optimization with vine-sampled advantage gradients."""

from tdpo.devine import ExplorationSpec, VineSample, advantage_gradient, advantage_surrogate, collect_vine_samples
from tdpo.envs import LinearMDP, PendulumConfig, PendulumEnv, nonlocal_reward
from tdpo.mdp import DiscountSpec, Trajectory, discounted_return, payoff, rollout
from tdpo.policy import PolicyParams, init_params, load_checkpoint, save_checkpoint
from tdpo.surrogate import CurvatureOperator, SurrogateConfig, conjugate_gradient, trust_region_step
from tdpo.trainer import TrainConfig, TrainRecord, tdpo_iterate, train

__version__ = "0.1.0"

__all__ = [
    "CurvatureOperator",
    "DiscountSpec",
    "ExplorationSpec",
    "LinearMDP",
    "PendulumConfig",
    "PendulumEnv",
    "PolicyParams",
    "SurrogateConfig",
    "TrainConfig",
    "TrainRecord",
    "Trajectory",
    "VineSample",
    "advantage_gradient",
    "advantage_surrogate",
    "collect_vine_samples",
    "conjugate_gradient",
    "discounted_return",
    "init_params",
    "load_checkpoint",
    "nonlocal_reward",
    "payoff",
    "rollout",
    "save_checkpoint",
    "tdpo_iterate",
    "train",
    "trust_region_step",
]
