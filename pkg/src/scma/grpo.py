"""Group-relative advantages and the clipped, KL-penalized surrogate objective.

The per-agent objective over one group of G trajectories is

    (1/G) sum_i (1/|y_i|) sum_t [ min(rho*A, clip(rho, 1-eps, 1+eps)*A)
                                  - beta * (exp(d) - d - 1) ]

with rho the importance ratio against the sampling-time policy and
d = logp_ref - logp_new. The gradient is exact for this objective; tokens
where the clip binds contribute zero policy gradient (standard subgradient).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import AgentRole, _ROLE_SLOTS


class EmptyGroup(ValueError):
    """No rewards to normalize."""


class ShapeMismatch(ValueError):
    """Batch arrays are inconsistent."""


class NonFiniteGradient(ValueError):
    """Gradient contains NaN or infinity."""


@dataclass(frozen=True)
class GrpoConfig:
    epsilon: float = 0.2
    beta_kl: float = 0.001
    learning_rate: float = 0.5
    group_size: int = 5

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if self.beta_kl < 0:
            raise ValueError("beta_kl must be >= 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")


@dataclass
class TrajectoryTokens:
    """Per-token arrays for one trajectory of one agent."""

    features: np.ndarray  # (T, D) dense feature rows
    actions: np.ndarray  # (T,) slot indices within the role's action space
    old_logps: np.ndarray  # (T,) log-probs recorded at sampling time


@dataclass
class AgentBatch:
    """One group's token logs and rewards for a single agent role."""

    role: AgentRole
    rewards: np.ndarray  # (G,) per-trajectory scalar rewards
    trajectories: list[TrajectoryTokens]
    advantages: np.ndarray | None = None

    def __post_init__(self):
        if len(self.trajectories) != len(self.rewards):
            raise ShapeMismatch("one trajectory per reward required")
        if self.advantages is None:
            self.advantages = group_advantages(self.rewards)


def group_advantages(rewards: np.ndarray) -> np.ndarray:
    """Standardize rewards with population statistics; all-equal groups get zeros."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise EmptyGroup("no rewards in group")
    std = rewards.std()
    if std == 0.0:
        return np.zeros_like(rewards)
    return (rewards - rewards.mean()) / std


def importance_ratio(logp_new: float, logp_old: float):
    return np.exp(np.asarray(logp_new) - np.asarray(logp_old))


def kl_penalty(logp_new: float, logp_ref: float):
    """Non-negative per-token estimator exp(d) - d - 1 with d = logp_ref - logp_new."""
    d = np.asarray(logp_ref) - np.asarray(logp_new)
    return np.exp(d) - d - 1.0


def _role_logps(theta: np.ndarray, role: AgentRole, traj: TrajectoryTokens) -> tuple[np.ndarray, np.ndarray]:
    """Per-token log-probs of the taken actions plus full slot probabilities."""
    slots = _ROLE_SLOTS[role]
    logits = traj.features @ theta[:, slots]
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    logp = np.log(p[np.arange(len(traj.actions)), traj.actions])
    return logp, p


def surrogate_value_and_grad(
    batch: AgentBatch,
    theta: np.ndarray,
    ref_theta: np.ndarray,
    cfg: GrpoConfig,
) -> tuple[float, np.ndarray]:
    """Objective value and its exact gradient w.r.t. theta for one agent batch."""
    slots = _ROLE_SLOTS[batch.role]
    g = len(batch.trajectories)
    value = 0.0
    grad = np.zeros_like(theta)
    for adv, traj in zip(batch.advantages, batch.trajectories):
        t = len(traj.actions)
        if t == 0:
            continue
        if traj.features.shape != (t, theta.shape[0]) or len(traj.old_logps) != t:
            raise ShapeMismatch("trajectory arrays are inconsistent")
        logp_new, p = _role_logps(theta, batch.role, traj)
        logp_ref, _ = _role_logps(ref_theta, batch.role, traj)
        rho = np.exp(logp_new - traj.old_logps)
        v1 = rho * adv
        v2 = np.clip(rho, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * adv
        d = logp_ref - logp_new
        kl = np.exp(d) - d - 1.0
        w = 1.0 / (g * t)
        value += w * float(np.sum(np.minimum(v1, v2) - cfg.beta_kl * kl))
        # d/dtheta of each token term, expressed as a coefficient on dlogp/dtheta
        coef = np.where(v1 <= v2, v1, 0.0) + cfg.beta_kl * (np.exp(d) - 1.0)
        delta = -p * coef[:, None]
        delta[np.arange(t), traj.actions] += coef
        grad[:, slots] += w * (traj.features.T @ delta)
    return value, grad


def apply_update(theta: np.ndarray, grad: np.ndarray, cfg: GrpoConfig) -> np.ndarray:
    """One gradient-ascent step; rejects non-finite gradients."""
    if grad.shape != theta.shape:
        raise ShapeMismatch("gradient shape differs from parameters")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains non-finite entries")
    return theta + cfg.learning_rate * grad
