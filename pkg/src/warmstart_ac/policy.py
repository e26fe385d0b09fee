"""Feature maps and the binary logistic policy.

Value feature ``x(s, a) = [1, s, a, a*s]`` (length 2p+2) and policy feature
``phi(s) = [1, s]`` (length p+1). The policy is

    pi_theta(1 | s) = sigmoid(theta . phi(s)).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def value_feature(s, a: int) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if a not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {a!r}")
    return np.concatenate(([1.0], s, [float(a)], a * s))


def value_features(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Row-wise :func:`value_feature` for an ``(n, p)`` state matrix."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    a = np.asarray(actions, dtype=float).reshape(-1, 1)
    ones = np.ones((states.shape[0], 1))
    return np.hstack((ones, states, a, a * states))


def policy_feature(s) -> np.ndarray:
    return np.concatenate(([1.0], np.asarray(s, dtype=float)))


def policy_features(states: np.ndarray) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    return np.hstack((np.ones((states.shape[0], 1)), states))


def logit(theta, s) -> float:
    return float(np.dot(theta, policy_feature(s)))


def action_prob(theta, s, a: int) -> float:
    """pi_theta(a | s). Stable for any finite logit (no exp overflow)."""
    if a not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {a!r}")
    z = logit(theta, s)
    return float(expit(z) if a == 1 else expit(-z))


def prob_one(theta, states: np.ndarray) -> np.ndarray:
    """Vectorised pi_theta(1 | s) over the rows of ``states``."""
    return expit(policy_features(states) @ np.asarray(theta, dtype=float))


def sample_action(theta, s, rng: np.random.Generator) -> int:
    return int(rng.random() < action_prob(theta, s, 1))


def avg_next_feature(theta, s_next) -> np.ndarray:
    """Policy-averaged next feature: sum over a of x(s', a) * pi_theta(a | s')."""
    z = logit(theta, s_next)
    return value_feature(s_next, 0) * expit(-z) + value_feature(s_next, 1) * expit(z)


def avg_next_features(theta, next_states: np.ndarray) -> np.ndarray:
    """Row-wise :func:`avg_next_feature`."""
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    z = policy_features(next_states) @ np.asarray(theta, dtype=float)
    n = next_states.shape[0]
    x0 = value_features(next_states, np.zeros(n))
    x1 = value_features(next_states, np.ones(n))
    return x0 * expit(-z)[:, None] + x1 * expit(z)[:, None]


class LogisticPolicy:
    """Callable P(A=1 | s) for a fixed theta, usable as a rollout policy."""

    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=float)

    def __call__(self, s) -> float:
        return action_prob(self.theta, s, 1)
