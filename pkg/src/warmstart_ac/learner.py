"""Alternating actor-critic learning: prior-study batch fit and the online RWS / NWS loops."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .actor import ActorConfig, ActorProblem, ascend
from .critic import PriorBlock, lstdq_warm
from .env import Dataset, UserEnv, UserModel, constant_policy, gen_user_models, rollout
from .policy import sample_action

log = logging.getLogger(__name__)

MODES = ("RWS", "NWS")


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.0
    zeta_c: float = 1e-5
    zeta_a: float = 1e-5
    T: int = 30
    T0: int = 1
    mode: str = "NWS"
    alt_max_iters: int = 50
    alt_tol: float = 1e-4
    seed: int = 0
    actor: ActorConfig | None = None

    def __post_init__(self):
        mode = self.mode.upper()
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not (self.zeta_c > 0 and self.zeta_a > 0):
            raise ValueError("zeta_c and zeta_a must be positive")
        if self.T < 1 or self.T0 < 1 or self.T0 > self.T:
            raise ValueError(f"need 1 <= T0 <= T, got T0={self.T0}, T={self.T}")
        if self.alt_max_iters < 1 or not self.alt_tol > 0:
            raise ValueError("alt_max_iters must be >= 1 and alt_tol positive")
        if self.actor is None:
            object.__setattr__(self, "actor", ActorConfig(zeta_a=self.zeta_a))
        elif self.actor.zeta_a != self.zeta_a:
            object.__setattr__(self, "actor", replace(self.actor, zeta_a=self.zeta_a))


class AltResult(NamedTuple):
    w: np.ndarray
    theta: np.ndarray
    converged: bool
    iterations: int


def alternate(
    D: Dataset,
    theta_init,
    gamma: float,
    zeta_c: float,
    actor: ActorConfig,
    prior: PriorBlock | None = None,
    alt_tol: float = 1e-4,
    alt_max_iters: int = 50,
) -> AltResult:
    """Critic step then actor step, repeated until theta stops moving (sup-norm < alt_tol)."""
    theta = np.array(theta_init, dtype=float)
    w = None
    for it in range(1, alt_max_iters + 1):
        w = lstdq_warm(prior, D, theta, gamma, zeta_c)
        new = ascend(ActorProblem(w, D, actor.zeta_a, prior=prior), theta, actor)
        delta = np.max(np.abs(new - theta))
        theta = new
        if delta < alt_tol:
            return AltResult(w, theta, True, it)
    return AltResult(w, theta, False, alt_max_iters)


def batch_learn(
    D: Dataset,
    gamma: float,
    zeta_c: float = 1e-5,
    zeta_a: float = 1e-5,
    alt_tol: float = 1e-4,
    alt_max_iters: int = 50,
    actor: ActorConfig | None = None,
) -> AltResult:
    """Fit ``(w, theta)`` on a fixed batch, starting from theta = 0.

    Non-convergence within ``alt_max_iters`` is reported through the
    ``converged`` flag, not raised.
    """
    if len(D) < 2:
        raise ValueError(f"batch learning needs at least 2 tuples, got {len(D)}")
    actor = ActorConfig(zeta_a=zeta_a) if actor is None else replace(actor, zeta_a=zeta_a)
    return alternate(D, np.zeros(D.p + 1), gamma, zeta_c, actor, None, alt_tol, alt_max_iters)


@dataclass(frozen=True, eq=False)
class PriorStudy:
    data: Dataset
    theta_bar: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.theta_bar)):
            raise ValueError("theta_bar must be finite")

    def save(self, out_dir) -> None:
        """Write ``prior.csv`` and the ``prior.json`` sidecar into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.data.to_csv(out / "prior.csv")
        sidecar = {"theta_bar": [float(v) for v in self.theta_bar], **self.meta}
        (out / "prior.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, in_dir) -> "PriorStudy":
        d = Path(in_dir)
        sidecar = json.loads((d / "prior.json").read_text())
        theta_bar = np.asarray(sidecar.pop("theta_bar"), dtype=float)
        data = Dataset.from_csv(d / "prior.csv", kind="prior")
        if theta_bar.shape != (data.p + 1,):
            raise ValueError(f"theta_bar has length {len(theta_bar)}, expected {data.p + 1}")
        return cls(data, theta_bar, sidecar)


def gen_prior_study(
    n_users: int = 40,
    T_bar: int = 42,
    sigma_b: float = 0.005,
    p: int = 3,
    gamma: float = 0.0,
    zeta_c: float = 1e-5,
    zeta_a: float = 1e-5,
    seed: int = 0,
    sigma_s: float = 1.0,
    sigma_r: float = 1.0,
    alt_tol: float = 1e-4,
    alt_max_iters: int = 50,
) -> PriorStudy:
    """Simulate a former micro-randomised study and fit its decision rule.

    Every user follows P(A=1)=0.5 for ``T_bar`` decision points; the pooled
    ``n_users * T_bar`` tuples are batch-learned into ``theta_bar``.
    """
    if n_users < 1:
        raise ValueError(f"n_users must be >= 1, got {n_users}")
    if T_bar < 2:
        raise ValueError(f"T_bar must be >= 2, got {T_bar}")
    ss = np.random.SeedSequence(seed)
    model_ss, roll_ss = ss.spawn(2)
    models = gen_user_models(n_users, sigma_b, p, model_ss, sigma_s, sigma_r)
    streams = roll_ss.spawn(n_users)
    parts = [
        rollout(m, constant_policy(0.5), T_bar, np.random.default_rng(s), user_id=i, kind="prior")
        for i, (m, s) in enumerate(zip(models, streams))
    ]
    data = Dataset.concat(parts, kind="prior")
    res = batch_learn(data, gamma, zeta_c, zeta_a, alt_tol, alt_max_iters)
    meta = {
        "gamma": gamma,
        "zeta_c": zeta_c,
        "zeta_a": zeta_a,
        "seed": seed,
        "n_users": n_users,
        "T_bar": T_bar,
        "sigma_b": sigma_b,
        "sigma_s": sigma_s,
        "sigma_r": sigma_r,
        "p": p,
        "converged": bool(res.converged),
        "alt_iterations": res.iterations,
        "w_bar": [float(v) for v in res.w],
    }
    return PriorStudy(data, res.theta, meta)


@dataclass(frozen=True, eq=False)
class TraceRow:
    t: int
    n_tuples: int
    updated: bool
    action: int
    reward: float
    theta: np.ndarray
    w: np.ndarray | None
    converged: bool | None = None
    alt_iterations: int = 0


class OnlineResult(NamedTuple):
    theta: np.ndarray
    data: Dataset
    trace: list


def run_online(
    model: UserModel,
    prior: PriorStudy | None,
    config: LearnerConfig,
    rng: np.random.Generator | None = None,
    env_rng: np.random.Generator | None = None,
    *,
    s0=None,
    user_id: int = 0,
) -> OnlineResult:
    """Online learning for one new user over ``config.T`` decision points.

    RWS: the first ``T0`` actions are fair coin flips; from decision point
    ``T0`` on, (w, theta) are refit on the tuples gathered so far before
    acting, theta carried over between points and starting at 0.

    NWS: theta starts at the prior rule; after every new tuple the warm
    critic/actor are refit with the prior batch as one extra sample.

    ``rng`` drives actions and ``env_rng`` the environment noise; when
    ``env_rng`` is omitted both come from ``rng`` (or ``config.seed``).
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if env_rng is None:
        rng, env_rng = rng.spawn(2)
    nws = config.mode == "NWS"
    if nws and prior is None:
        raise ValueError("NWS mode requires a prior study")
    block = PriorBlock(prior.data) if nws else None
    p = model.p
    theta = np.array(prior.theta_bar, dtype=float) if nws else np.zeros(p + 1)
    if theta.shape != (p + 1,):
        raise ValueError(f"prior theta has length {theta.size}, expected {p + 1}")
    env = UserEnv(model, env_rng, s0=s0, user_id=user_id)
    transitions = []
    trace = []
    w = None

    def refit(theta):
        D = Dataset.from_transitions(transitions)
        return alternate(D, theta, config.gamma, config.zeta_c, config.actor, block, config.alt_tol, config.alt_max_iters)

    for t in range(config.T):
        res = None
        if not nws and t >= config.T0:
            res = refit(theta)
            w, theta = res.w, res.theta
        if not nws and t < config.T0:
            a = int(rng.random() < 0.5)
        else:
            a = sample_action(theta, env.state, rng)
        tr = env.act(a)
        transitions.append(tr)
        if nws:
            res = refit(theta)
            w, theta = res.w, res.theta
        if not np.all(np.isfinite(theta)):
            raise FloatingPointError(f"theta became non-finite at decision point {t}")
        trace.append(
            TraceRow(
                t=t,
                n_tuples=len(transitions) if nws else t,
                updated=res is not None,
                action=a,
                reward=tr.r,
                theta=theta.copy(),
                w=None if w is None else w.copy(),
                converged=None if res is None else bool(res.converged),
                alt_iterations=0 if res is None else res.iterations,
            )
        )
    return OnlineResult(theta, Dataset.from_transitions(transitions), trace)
