"""Generative mHealth MDP: per-user linear-Gaussian state dynamics and step-count rewards.

State evolution (t >= 1)::

    S1 <- b1*S1 + xi1
    S2 <- b2*S2 + b3*A_prev + xi2
    S3 <- b4*S3 + b5*S3*A_prev + b6*A_prev + xi3
    Sj <- b7*Sj + xij                        j = 4..p

Reward at time t, with the fresh state S_t and current action A_t::

    R = b14 * (b8 + A*(b9 + b10*S1 + b11*S2) + b12*S1 - b13*S3 + rho)

Random draws always come out of the noise generator in the order
``xi_1..xi_p`` then ``rho`` for every step, after ``p`` standard normals
consumed by the initial state. Actions are drawn from a separate stream so
that two policies run against the same noise stream face identical shocks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

N_BETA = 14

# Listed 15-value vector with the 1.50 entry dropped; 800 scales rewards into steps.
BETA_BASIC = np.array(
    [0.40, 0.25, 0.35, 0.65, 0.10, 0.50, 0.22, 2.00, 0.15, 0.20, 0.32, 0.10, 0.45, 800.0]
)
UNUSED_LISTED_BETA = 1.50

SIGMA1 = np.array(
    [
        [1.0, 0.3, -0.3],
        [0.3, 1.0, -0.3],
        [-0.3, -0.3, 1.0],
    ]
)


def state_covariance(p: int) -> np.ndarray:
    """Block-diagonal initial-state covariance: SIGMA1 on the first 3 coordinates, identity after."""
    if p < 3:
        raise ValueError(f"p must be >= 3, got {p}")
    cov = np.eye(p)
    cov[:3, :3] = SIGMA1
    return cov


@dataclass(frozen=True, eq=False)
class UserModel:
    beta: np.ndarray
    sigma_s: float = 1.0
    sigma_r: float = 1.0
    p: int = 3

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        if beta.shape != (N_BETA,):
            raise ValueError(f"beta must have {N_BETA} entries, got shape {beta.shape}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if self.sigma_s < 0 or self.sigma_r < 0:
            raise ValueError("noise scales must be non-negative")
        if int(self.p) != self.p or self.p < 3:
            raise ValueError(f"p must be an integer >= 3, got {self.p}")
        object.__setattr__(self, "beta", beta)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "sigma_s": self.sigma_s,
            "sigma_r": self.sigma_r,
            "p": self.p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserModel":
        return cls(np.asarray(d["beta"], dtype=float), d["sigma_s"], d["sigma_r"], d["p"])


def gen_user_models(
    n: int,
    sigma_b: float,
    p: int = 3,
    seed=None,
    sigma_s: float = 1.0,
    sigma_r: float = 1.0,
) -> list[UserModel]:
    """Draw ``n`` users with ``beta_i = BETA_BASIC + delta_i``, ``delta_i ~ N(0, sigma_b^2 I)``.

    ``sigma_b`` is the standard deviation of each coordinate's perturbation.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if sigma_b < 0:
        raise ValueError("sigma_b must be non-negative")
    if p < 3:
        raise ValueError(f"p must be >= 3, got {p}")
    rng = np.random.default_rng(seed)
    deltas = rng.normal(0.0, 1.0, size=(n, N_BETA)) * sigma_b
    return [UserModel(BETA_BASIC + d, sigma_s, sigma_r, p) for d in deltas]


def init_state(model: UserModel, rng: np.random.Generator, cov: np.ndarray | None = None) -> np.ndarray:
    """Draw S0 ~ Normal(0, cov). Always consumes exactly ``p`` standard normals."""
    cov = state_covariance(model.p) if cov is None else np.asarray(cov, dtype=float)
    z = rng.standard_normal(model.p)
    if not np.any(cov):
        return np.zeros(model.p)
    return np.linalg.cholesky(cov) @ z


def _next_state(beta: np.ndarray, s_prev: np.ndarray, a_prev: int, xi: np.ndarray) -> np.ndarray:
    s = np.empty_like(s_prev)
    s[0] = beta[0] * s_prev[0]
    s[1] = beta[1] * s_prev[1] + beta[2] * a_prev
    s[2] = beta[3] * s_prev[2] + beta[4] * s_prev[2] * a_prev + beta[5] * a_prev
    s[3:] = beta[6] * s_prev[3:]
    return s + xi


def _reward(beta: np.ndarray, s: np.ndarray, a: int, rho: float) -> float:
    inner = (
        beta[7]
        + a * (beta[8] + beta[9] * s[0] + beta[10] * s[1])
        + beta[11] * s[0]
        - beta[12] * s[2]
        + rho
    )
    return float(beta[13] * inner)


def transition(model: UserModel, s_prev, a_prev: int, rng: np.random.Generator) -> np.ndarray:
    """Draw S_t given S_{t-1} and A_{t-1}; consumes ``p`` normals."""
    _check_action(a_prev)
    xi = rng.standard_normal(model.p) * model.sigma_s
    return _next_state(model.beta, np.asarray(s_prev, dtype=float), a_prev, xi)


def reward(model: UserModel, s, a: int, rng: np.random.Generator) -> float:
    """Draw R_t given the current state S_t and action A_t; consumes one normal."""
    _check_action(a)
    rho = rng.standard_normal() * model.sigma_r
    return _reward(model.beta, np.asarray(s, dtype=float), a, rho)


def step(model: UserModel, s_prev, a_prev: int, a_curr: int, rng: np.random.Generator):
    """One full time step: returns ``(S_t, R_t)``.

    ``a_prev`` drives the transition into ``S_t``; ``a_curr`` is the action
    taken at ``S_t`` and drives the reward.
    """
    s = transition(model, s_prev, a_prev, rng)
    return s, reward(model, s, a_curr, rng)


def _check_action(a):
    if a not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {a!r}")


class UserEnv:
    """Incremental simulator for one user, used when actions depend on data seen so far.

    After construction ``state`` holds S_1 (S_0 drawn, A_0 = 0 applied).
    Each :meth:`act` draws the reward for the current state and then the next state.
    """

    def __init__(self, model: UserModel, rng: np.random.Generator, s0=None, user_id: int = 0):
        self.model = model
        self.rng = rng
        self.user_id = user_id
        s_init = init_state(model, rng) if s0 is None else np.asarray(s0, dtype=float)
        if s_init.shape != (model.p,):
            raise ValueError(f"initial state must have length {model.p}")
        self.t = 1
        self.state = transition(model, s_init, 0, rng)

    def act(self, a: int) -> "Transition":
        s = self.state
        r = reward(self.model, s, a, self.rng)
        s_next = transition(self.model, s, a, self.rng)
        tr = Transition(s, int(a), r, s_next, self.user_id, self.t)
        self.state = s_next
        self.t += 1
        return tr


@dataclass(frozen=True, eq=False)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    user_id: int = 0
    t: int = 0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Columnar store of transitions; ``kind`` is ``"prior"`` or ``"online"``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    user_ids: np.ndarray
    times: np.ndarray
    kind: str = "online"

    def __post_init__(self):
        if self.kind not in ("prior", "online"):
            raise ValueError(f"kind must be 'prior' or 'online', got {self.kind!r}")
        n = len(self.actions)
        for name in ("states", "rewards", "next_states", "user_ids", "times"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if self.states.shape != self.next_states.shape or self.states.ndim != 2:
            raise ValueError("states and next_states must be (n, p) arrays of equal shape")
        if n and not np.isin(self.actions, (0, 1)).all():
            raise ValueError("actions must be 0 or 1")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    @property
    def p(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Transition:
        return Transition(
            self.states[i],
            int(self.actions[i]),
            float(self.rewards[i]),
            self.next_states[i],
            int(self.user_ids[i]),
            int(self.times[i]),
        )

    @classmethod
    def empty(cls, p: int, kind: str = "online") -> "Dataset":
        return cls(
            np.empty((0, p)), np.empty(0, dtype=int), np.empty(0), np.empty((0, p)),
            np.empty(0, dtype=int), np.empty(0, dtype=int), kind,
        )

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], kind: str = "online", p: int | None = None) -> "Dataset":
        if not transitions:
            if p is None:
                raise ValueError("p is required for an empty dataset")
            return cls.empty(p, kind)
        return cls(
            np.array([tr.s for tr in transitions], dtype=float),
            np.array([tr.a for tr in transitions], dtype=int),
            np.array([tr.r for tr in transitions], dtype=float),
            np.array([tr.s_next for tr in transitions], dtype=float),
            np.array([tr.user_id for tr in transitions], dtype=int),
            np.array([tr.t for tr in transitions], dtype=int),
            kind,
        )

    @classmethod
    def concat(cls, parts: Iterable["Dataset"], kind: str | None = None) -> "Dataset":
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(
            np.concatenate([d.states for d in parts]),
            np.concatenate([d.actions for d in parts]),
            np.concatenate([d.rewards for d in parts]),
            np.concatenate([d.next_states for d in parts]),
            np.concatenate([d.user_ids for d in parts]),
            np.concatenate([d.times for d in parts]),
            kind or parts[0].kind,
        )

    def check_chaining(self) -> None:
        """Raise ValueError unless per-user times increase and consecutive tuples chain."""
        for uid in np.unique(self.user_ids):
            idx = np.flatnonzero(self.user_ids == uid)
            times = self.times[idx]
            if np.any(np.diff(times) <= 0):
                raise ValueError(f"time indices of user {uid} do not strictly increase")
            for i, j in zip(idx[:-1], idx[1:]):
                if self.times[j] == self.times[i] + 1 and not np.array_equal(self.next_states[i], self.states[j]):
                    raise ValueError(f"user {uid}: s_next at t={self.times[i]} does not match the next state")

    def header(self) -> list[str]:
        p = self.p
        return (
            ["user_id", "t"]
            + [f"s{j}" for j in range(1, p + 1)]
            + ["a", "r"]
            + [f"sn{j}" for j in range(1, p + 1)]
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            for i in range(len(self)):
                writer.writerow(
                    [int(self.user_ids[i]), int(self.times[i])]
                    + [fmt_real(v) for v in self.states[i]]
                    + [int(self.actions[i]), fmt_real(self.rewards[i])]
                    + [fmt_real(v) for v in self.next_states[i]]
                )

    @classmethod
    def from_csv(cls, path, kind: str = "online") -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            p = sum(1 for h in header if h.startswith("sn"))
            expected = (
                ["user_id", "t"] + [f"s{j}" for j in range(1, p + 1)] + ["a", "r"]
                + [f"sn{j}" for j in range(1, p + 1)]
            )
            if header != expected:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = [row for row in reader if row]
        if not rows:
            return cls.empty(p, kind)
        data = np.array(rows, dtype=float)
        return cls(
            states=data[:, 2 : 2 + p],
            actions=data[:, 2 + p].astype(int),
            rewards=data[:, 3 + p],
            next_states=data[:, 4 + p :],
            user_ids=data[:, 0].astype(int),
            times=data[:, 1].astype(int),
            kind=kind,
        )


def fmt_real(x: float) -> str:
    return format(float(x), ".17g")


def rollout(
    model: UserModel,
    policy: Callable[[np.ndarray], float],
    T: int,
    rng: np.random.Generator,
    *,
    s0=None,
    user_id: int = 0,
    kind: str = "online",
) -> Dataset:
    """Roll ``T`` tuples under ``policy``, which maps a state to P(A=1 | state).

    The generator is split into an environment-noise stream and an action
    stream, so the noise sequence does not depend on the policy.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    noise_rng, action_rng = rng.spawn(2)
    env = UserEnv(model, noise_rng, s0=s0, user_id=user_id)
    transitions = []
    for _ in range(T):
        a = int(action_rng.random() < policy(env.state))
        transitions.append(env.act(a))
    return Dataset.from_transitions(transitions, kind=kind)


def constant_policy(prob_one: float) -> Callable[[np.ndarray], float]:
    return lambda s: prob_one


def simulate_rewards(
    model: UserModel,
    prob_one: Callable[[np.ndarray], float],
    T: int,
    rng: np.random.Generator,
    *,
    s0=None,
) -> np.ndarray:
    """Rewards only, for long evaluation rollouts.

    Consumes both streams exactly as :func:`rollout` does and yields the same
    rewards; it skips building tuples.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    noise_rng, action_rng = rng.spawn(2)
    p = model.p
    b = model.beta
    s = init_state(model, noise_rng) if s0 is None else np.asarray(s0, dtype=float)
    # One init-state draw already happened; the rest of the stream is (xi, rho) pairs.
    noise = noise_rng.standard_normal((T + 1) * (p + 1) - 1)
    u = action_rng.random(T)
    xi_scale, rho_scale = model.sigma_s, model.sigma_r
    out = np.empty(T)
    s = _next_state(b, s, 0, noise[:p] * xi_scale)
    pos = p
    for t in range(T):
        a = int(u[t] < prob_one(s))
        out[t] = _reward(b, s, a, noise[pos] * rho_scale)
        pos += 1
        s = _next_state(b, s, a, noise[pos : pos + p] * xi_scale)
        pos += p
    return out
