"""LSTDQ policy evaluation, plain and warm-started with a prior-study batch.

Plain estimator on ``t`` tuples::

    [zeta_c I + (1/t) sum_i x_i (x_i - gamma y_i)^T] w = (1/t) sum_i x_i r_i

Warm estimator: the prior batch of ``NT`` tuples enters as one extra sample,
its moment averages added to the new user's sums and the total normalised by
``1/(t+1)``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack
from scipy.special import expit

from .env import Dataset
from .policy import policy_features, value_features

RCOND_THRESHOLD = 1e-14


class SingularSystem(np.linalg.LinAlgError):
    pass


class EmptyDataset(ValueError):
    pass


def _next_feature_parts(next_states: np.ndarray):
    n = next_states.shape[0]
    return (
        value_features(next_states, np.zeros(n)),
        value_features(next_states, np.ones(n)),
        policy_features(next_states),
    )


def _moment_sums(X, X0n, X1n, Phin, rewards, theta, gamma):
    """Unnormalised ``sum x (x - gamma y)^T`` and ``sum x r``."""
    z = Phin @ theta
    Y = X0n * expit(-z)[:, None] + X1n * expit(z)[:, None]
    M = X.T @ (X - gamma * Y)
    b = X.T @ rewards
    return M, b


def moment_sums(D: Dataset, theta, gamma: float):
    """Return the unnormalised critic moments ``(M, b)`` for dataset ``D`` under ``theta``."""
    theta = np.asarray(theta, dtype=float)
    X = value_features(D.states, D.actions)
    X0n, X1n, Phin = _next_feature_parts(D.next_states)
    return _moment_sums(X, X0n, X1n, Phin, D.rewards, theta, gamma)


class PriorBlock:
    """Prior-study batch with its theta-independent feature matrices built once.

    The averaged moments depend on theta only through next-state action
    probabilities, so they are cached for the last (theta, gamma) seen.
    """

    def __init__(self, data: Dataset):
        if len(data) == 0:
            raise EmptyDataset("prior dataset is empty")
        self.data = data
        self.n = len(data)
        self.X = value_features(data.states, data.actions)
        self.X0n, self.X1n, self.Phin = _next_feature_parts(data.next_states)
        self.Phi = policy_features(data.states)
        self._key = None
        self._moments = None

    def mean_moments(self, theta, gamma: float):
        """``(M_bar / NT, b_bar / NT)``."""
        theta = np.asarray(theta, dtype=float)
        key = (theta.tobytes(), float(gamma))
        if key != self._key:
            M, b = _moment_sums(self.X, self.X0n, self.X1n, self.Phin, self.data.rewards, theta, gamma)
            self._moments = (M / self.n, b / self.n)
            self._key = key
        return self._moments


def as_prior_block(prior) -> PriorBlock | None:
    if prior is None or isinstance(prior, PriorBlock):
        return prior
    return PriorBlock(prior)


def critic_system(D: Dataset, theta, gamma: float, zeta_c: float, prior=None):
    """Assemble ``(A, b)``; with ``prior`` given, the warm (1/(t+1)) normalisation applies."""
    _check_params(gamma, zeta_c)
    t = len(D)
    if t == 0:
        raise EmptyDataset("online dataset is empty")
    theta = np.asarray(theta, dtype=float)
    M, b = moment_sums(D, theta, gamma)
    prior = as_prior_block(prior)
    if prior is None:
        A = zeta_c * np.eye(M.shape[0]) + M / t
        return A, b / t
    Mp, bp = prior.mean_moments(theta, gamma)
    A = zeta_c * np.eye(M.shape[0]) + (Mp + M) / (t + 1)
    return A, (bp + b) / (t + 1)


def warm_moment_blocks(D: Dataset, theta, gamma: float, prior):
    """Split the warm normalised moment matrix into its prior and new-user parts."""
    t = len(D)
    M, _ = moment_sums(D, theta, gamma)
    Mp, _ = as_prior_block(prior).mean_moments(theta, gamma)
    return Mp / (t + 1), M / (t + 1)


def solve_system(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """LU solve with partial pivoting; raises SingularSystem on a tiny reciprocal condition estimate."""
    lu, piv, info = lapack.dgetrf(A)
    if info > 0:
        raise SingularSystem("exactly singular critic system")
    anorm = np.abs(A).sum(axis=0).max()
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    if not np.isfinite(rcond) or rcond < RCOND_THRESHOLD:
        raise SingularSystem(f"critic system is numerically singular (rcond={rcond:.3g})")
    w, info = lapack.dgetrs(lu, piv, b)
    return w


def lstdq(D: Dataset, theta, gamma: float, zeta_c: float) -> np.ndarray:
    """Critic weights for policy ``theta`` from the online dataset alone."""
    return solve_system(*critic_system(D, theta, gamma, zeta_c))


def lstdq_warm(D_prior, D: Dataset, theta, gamma: float, zeta_c: float) -> np.ndarray:
    """Critic weights with the prior batch (Dataset or PriorBlock) as one extra sample.

    ``D_prior=None`` falls back to :func:`lstdq`.
    """
    return solve_system(*critic_system(D, theta, gamma, zeta_c, prior=D_prior))


def lstdq_features(X, Y, rewards, gamma: float, zeta_c: float, weights=None) -> np.ndarray:
    """LSTDQ on explicit feature rows: ``[zeta_c I + sum c x (x - gamma y)^T] w = sum c x r``.

    ``weights`` default to ``1/n`` per row; pass a state-action distribution to
    get exact-expectation moments.
    """
    _check_params(gamma, zeta_c)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise EmptyDataset("no feature rows")
    c = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    Xc = X * c[:, None]
    A = zeta_c * np.eye(X.shape[1]) + Xc.T @ (X - gamma * Y)
    return solve_system(A, Xc.T @ np.asarray(rewards, dtype=float))


def q_values(w, states: np.ndarray, actions) -> np.ndarray:
    return value_features(states, actions) @ np.asarray(w, dtype=float)


def _check_params(gamma, zeta_c):
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    if not zeta_c > 0:
        raise ValueError(f"zeta_c must be positive, got {zeta_c}")
