"""Long-run average reward (ElrAR) and the multi-arm, multi-discount experiment driver.

Seeding: every random stream is a ``numpy.random.SeedSequence`` built from the
master seed plus an integer key (a stream tag followed by indices); numpy
hashes the pair into an independent stream. Keys used here:

* ``(PRIOR, gamma_idx)``                          prior study for one discount
* ``(USERS, gamma_idx)``                          new-user models
* ``(ENV, gamma_idx, user)``                      online environment noise
* ``(ACT, gamma_idx, mode_code, T0, user)``       online action draws
* ``(EVAL, gamma_idx, user)``                     evaluation rollout

Arms are keyed by (mode, T0) rather than position, and environment and
evaluation streams do not involve the arm at all, so every arm meets the same
users and the same noise, and reordering arms changes nothing.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .actor import ActorConfig
from .env import UserModel, fmt_real, gen_user_models, simulate_rewards
from .learner import LearnerConfig, gen_prior_study, run_online
from .policy import LogisticPolicy

log = logging.getLogger(__name__)

PRIOR, USERS, ENV, ACT, EVAL = range(5)
MODE_CODE = {"RWS": 0, "NWS": 1}


def derive_seed(master: int, *key: int) -> int:
    """64-bit integer seed for stream ``key`` under ``master``."""
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def derive_rng(master: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *key))


def long_run_avg_reward(theta, model: UserModel, H: int = 5000, L: int = 4000, rng=None, *, s0=None) -> float:
    """Mean of the last ``L`` rewards of an ``H``-step rollout under pi_theta."""
    if not 0 < L < H:
        raise ValueError(f"need 0 < L < H, got L={L}, H={H}")
    rng = np.random.default_rng(rng)
    rewards = simulate_rewards(model, LogisticPolicy(theta), H, rng, s0=s0)
    return float(np.mean(rewards[H - L :]))


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=float)
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), std


def elrar(thetas, models, H: int = 5000, L: int = 4000, seed: int = 0, return_values: bool = False):
    """ElrAR over users: user ``i`` is evaluated with stream ``derive_rng(seed, i)``."""
    if len(thetas) != len(models) or not models:
        raise ValueError("need equally many thetas and models, at least one")
    values = [
        long_run_avg_reward(th, m, H, L, derive_rng(seed, i))
        for i, (th, m) in enumerate(zip(thetas, models))
    ]
    mean, std = summarize(values)
    return (mean, std, values) if return_values else (mean, std)


@dataclass(frozen=True)
class Arm:
    mode: str
    T0: int

    def __post_init__(self):
        mode = self.mode.upper()
        if mode not in MODE_CODE:
            raise ValueError(f"arm mode must be RWS or NWS, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.T0 < 1:
            raise ValueError(f"arm T0 must be >= 1, got {self.T0}")

    @property
    def label(self) -> str:
        return f"{self.mode}-T0={self.T0}"


DEFAULT_ARMS = (Arm("RWS", 5), Arm("RWS", 10), Arm("NWS", 1))


@dataclass(frozen=True)
class ExperimentConfig:
    gammas: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 0.95)
    arms: tuple = DEFAULT_ARMS
    T: int = 30
    n_new_users: int = 50
    n_prior_users: int = 40
    T_bar: int = 42
    sigma_s: float = 1.0
    sigma_r: float = 1.0
    sigma_b: float = 0.005
    p: int = 3
    zeta_c: float = 1e-5
    zeta_a: float = 1e-5
    H: int = 5000
    L: int = 4000
    seed: int = 0
    alt_tol: float = 1e-4
    alt_max_iters: int = 50
    actor_max_iters: int = 200
    grad_tol: float = 1e-6
    step_init: float = 1.0
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5

    def __post_init__(self):
        gammas = tuple(float(g) for g in self.gammas)
        if not gammas:
            raise ValueError("gammas must not be empty")
        for g in gammas:
            if not 0.0 <= g < 1.0:
                raise ValueError(f"every gamma must be in [0, 1), got {g}")
        object.__setattr__(self, "gammas", gammas)
        arms = tuple(a if isinstance(a, Arm) else Arm(**a) for a in self.arms)
        if not arms:
            raise ValueError("arms must not be empty")
        if len({a.label for a in arms}) != len(arms):
            raise ValueError("duplicate arms")
        for a in arms:
            if a.T0 > self.T:
                raise ValueError(f"arm {a.label}: T0 exceeds T={self.T}")
        object.__setattr__(self, "arms", arms)
        if not 0 < self.L < self.H:
            raise ValueError(f"need 0 < L < H, got L={self.L}, H={self.H}")
        for name in ("T", "n_new_users", "n_prior_users", "alt_max_iters", "actor_max_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.T_bar < 2:
            raise ValueError("T_bar must be >= 2")
        if self.p < 3:
            raise ValueError("p must be >= 3")
        # remaining numeric checks live in ActorConfig / LearnerConfig
        self.learner_config(Arm("NWS", 1), 0.0)

    def actor_config(self) -> ActorConfig:
        return ActorConfig(
            zeta_a=self.zeta_a,
            max_iters=self.actor_max_iters,
            grad_tol=self.grad_tol,
            step_init=self.step_init,
            armijo_c=self.armijo_c,
            backtrack_factor=self.backtrack_factor,
        )

    def learner_config(self, arm: Arm, gamma: float) -> LearnerConfig:
        return LearnerConfig(
            gamma=gamma,
            zeta_c=self.zeta_c,
            zeta_a=self.zeta_a,
            T=self.T,
            T0=arm.T0,
            mode=arm.mode,
            alt_max_iters=self.alt_max_iters,
            alt_tol=self.alt_tol,
            seed=self.seed,
            actor=self.actor_config(),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gammas"] = list(self.gammas)
        d["arms"] = [{"mode": a.mode, "T0": a.T0} for a in self.arms]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
        d = dict(d)
        if "gammas" in d:
            d["gammas"] = tuple(d["gammas"])
        if "arms" in d:
            d["arms"] = tuple(Arm(**a) if isinstance(a, dict) else a for a in d["arms"])
        return cls(**d)


@dataclass
class Cell:
    gamma: float
    arm: Arm
    mean: float
    std: float
    values: list
    converged_fraction: float


@dataclass
class ResultsTable:
    config: ExperimentConfig
    cells: dict = field(default_factory=dict)  # (gamma_idx, arm label) -> Cell

    def cell(self, gamma: float, arm_label: str) -> Cell:
        return self.cells[(self.config.gammas.index(gamma), arm_label)]

    def rows(self):
        for gi, g in enumerate(self.config.gammas):
            for arm in self.config.arms:
                yield self.cells[(gi, arm.label)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["gamma", "arm", "mean", "std", "n_users", "T", "T0", "seed"])
        cfg = self.config
        for c in self.rows():
            writer.writerow(
                [fmt_real(c.gamma), c.arm.label, fmt_real(c.mean), fmt_real(c.std),
                 len(c.values), cfg.T, c.arm.T0, cfg.seed]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "config": self.config.to_dict(),
            "std_definition": "sample standard deviation (ddof=1) of per-user long-run average reward",
            "cells": [
                {
                    "gamma": c.gamma,
                    "arm": c.arm.label,
                    "mode": c.arm.mode,
                    "T0": c.arm.T0,
                    "mean": c.mean,
                    "std": c.std,
                    "per_user": c.values,
                    "online_converged_fraction": c.converged_fraction,
                }
                for c in self.rows()
            ],
        }
        return json.dumps(doc, indent=2) + "\n"

    def format_text(self) -> str:
        labels = [a.label for a in self.config.arms]
        width = max(16, *(len(s) + 2 for s in labels))
        lines = ["gamma".ljust(8) + "".join(s.rjust(width) for s in labels)]
        for gi, g in enumerate(self.config.gammas):
            cells = [self.cells[(gi, s)] for s in labels]
            lines.append(f"{g:<8g}" + "".join(f"{c.mean:.1f} ± {c.std:.1f}".rjust(width) for c in cells))
        means = [np.mean([self.cells[(gi, s)].mean for gi in range(len(self.config.gammas))]) for s in labels]
        lines.append("avg".ljust(8) + "".join(f"{m:.1f}".rjust(width) for m in means))
        return "\n".join(lines)


def _user_task(args):
    cfg, gi, arm, ui, model, prior = args
    gamma = cfg.gammas[gi]
    lcfg = cfg.learner_config(arm, gamma)
    try:
        res = run_online(
            model,
            prior if arm.mode == "NWS" else None,
            lcfg,
            rng=derive_rng(cfg.seed, ACT, gi, MODE_CODE[arm.mode], arm.T0, ui),
            env_rng=derive_rng(cfg.seed, ENV, gi, ui),
            user_id=ui,
        )
        eta = long_run_avg_reward(res.theta, model, cfg.H, cfg.L, derive_rng(cfg.seed, EVAL, gi, ui))
    except Exception as exc:
        raise RuntimeError(f"experiment failed at gamma={gamma} arm={arm.label} user={ui}: {exc!r}") from exc
    updates = [r for r in res.trace if r.updated]
    conv = sum(bool(r.converged) for r in updates) / len(updates) if updates else 1.0
    return eta, conv


def _prior_task(args):
    cfg, gi = args
    return gen_prior_study(
        n_users=cfg.n_prior_users,
        T_bar=cfg.T_bar,
        sigma_b=cfg.sigma_b,
        p=cfg.p,
        gamma=cfg.gammas[gi],
        zeta_c=cfg.zeta_c,
        zeta_a=cfg.zeta_a,
        seed=derive_seed(cfg.seed, PRIOR, gi),
        sigma_s=cfg.sigma_s,
        sigma_r=cfg.sigma_r,
        alt_tol=cfg.alt_tol,
        alt_max_iters=cfg.alt_max_iters,
    )


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ResultsTable:
    """Fill the (gamma x arm) table; output does not depend on ``jobs``."""
    cfg = config
    needs_prior = any(a.mode == "NWS" for a in cfg.arms)
    priors = _map(_prior_task, [(cfg, gi) for gi in range(len(cfg.gammas))], jobs) if needs_prior else None
    users = [
        gen_user_models(cfg.n_new_users, cfg.sigma_b, cfg.p, derive_seed(cfg.seed, USERS, gi), cfg.sigma_s, cfg.sigma_r)
        for gi in range(len(cfg.gammas))
    ]
    keys, tasks = [], []
    for gi in range(len(cfg.gammas)):
        for arm in cfg.arms:
            prior = priors[gi] if arm.mode == "NWS" else None
            for ui in range(cfg.n_new_users):
                keys.append((gi, arm))
                tasks.append((cfg, gi, arm, ui, users[gi][ui], prior))
    log.info("running %d user tasks with %d job(s)", len(tasks), jobs)
    outcomes = _map(_user_task, tasks, jobs)
    table = ResultsTable(cfg)
    grouped: dict = {}
    for (gi, arm), out in zip(keys, outcomes):
        grouped.setdefault((gi, arm), []).append(out)
    for (gi, arm), outs in grouped.items():
        values = [o[0] for o in outs]
        mean, std = summarize(values)
        table.cells[(gi, arm.label)] = Cell(
            cfg.gammas[gi], arm, mean, std, values, float(np.mean([o[1] for o in outs]))
        )
    return table


def default_jobs() -> int:
    return os.cpu_count() or 1
