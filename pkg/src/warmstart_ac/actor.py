"""Actor objective (policy improvement) and its deterministic maximiser.

For a state set with per-state weights ``c`` the objective is

    J(theta) = sum_k c_k sum_a Q(s_k, a; w) pi_theta(a | s_k) - zeta_a/2 |theta|^2

Plain: ``c = 1/t`` on the new user's states. Warm: ``c = 1/(t+1)`` on the new
user's states and ``1/((t+1) NT)`` on each prior-study state.

With binary actions, sum_a Q pi = Q(s,0) + pi_theta(1|s) * [Q(s,1) - Q(s,0)],
and the advantage Q(s,1) - Q(s,0) = w_a + w_as . s is linear in the state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .critic import PriorBlock
from .env import Dataset
from .policy import policy_features


class NonFiniteObjective(FloatingPointError):
    pass


@dataclass(frozen=True)
class ActorConfig:
    zeta_a: float = 1e-5
    max_iters: int = 200
    grad_tol: float = 1e-6
    step_init: float = 1.0
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5

    def __post_init__(self):
        if not self.zeta_a > 0:
            raise ValueError(f"zeta_a must be positive, got {self.zeta_a}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.grad_tol > 0 or not self.step_init > 0:
            raise ValueError("grad_tol and step_init must be positive")
        if not 0 < self.armijo_c < 1 or not 0 < self.backtrack_factor < 1:
            raise ValueError("armijo_c and backtrack_factor must lie strictly inside (0, 1)")


def _split_w(w, p):
    w = np.asarray(w, dtype=float)
    if w.shape != (2 * p + 2,):
        raise ValueError(f"w must have length {2 * p + 2}, got {w.shape}")
    # Q(s, 0) = w0 + ws.s ; advantage = wa + was.s
    return w[0], w[1 : p + 1], w[p + 1], w[p + 2 :]


_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_LOG2E = 1.4426950408889634


@njit(cache=True)
def _sigmoid_into(z, out, kbuf):
    """out = sigmoid(z) elementwise.

    exp(-|z|) uses Cody-Waite reduction and a degree-12 Taylor polynomial
    (about 2 ulp) written so the loop vectorises; libm exp does not, and this
    kernel dominates the learner's run time.
    """
    n = z.size
    for i in range(n):
        x = max(-abs(z[i]), -708.0)
        k = np.floor(x * _LOG2E + 0.5)
        r = (x - k * _LN2_HI) - k * _LN2_LO
        p = 1.0 / 479001600
        p = p * r + 1.0 / 39916800
        p = p * r + 1.0 / 3628800
        p = p * r + 1.0 / 362880
        p = p * r + 1.0 / 40320
        p = p * r + 1.0 / 5040
        p = p * r + 1.0 / 720
        p = p * r + 1.0 / 120
        p = p * r + 1.0 / 24
        p = p * r + 1.0 / 6
        p = p * r + 0.5
        out[i] = 1.0 + r * (1.0 + r * p)
        kbuf[i] = (np.int64(k) + 1023) << 52
    scale = kbuf.view(np.float64)
    for i in range(n):
        zi = z[i]
        e = out[i] * scale[i]
        e = e if zi >= -708.0 and zi <= 708.0 else 0.0
        inv = 1.0 / (1.0 + e)
        out[i] = inv if zi >= 0.0 else e * inv


@njit(cache=True)
def _logits_into(PhiT, theta, z):
    q, n = PhiT.shape
    t0 = theta[0]
    for k in range(n):
        z[k] = PhiT[0, k] * t0
    for j in range(1, q):
        tj = theta[j]
        for k in range(n):
            z[k] += PhiT[j, k] * tj


@njit(cache=True)
def _value(PhiT, cadv, const, zeta, theta, z, pi1, kbuf):
    _logits_into(PhiT, theta, z)
    _sigmoid_into(z, pi1, kbuf)
    # four interleaved partial sums keep the reduction off the add-latency chain
    n = pi1.size
    a0 = a1 = a2 = a3 = 0.0
    m = n - n % 4
    for k in range(0, m, 4):
        a0 += cadv[k] * pi1[k]
        a1 += cadv[k + 1] * pi1[k + 1]
        a2 += cadv[k + 2] * pi1[k + 2]
        a3 += cadv[k + 3] * pi1[k + 3]
    for k in range(m, n):
        a0 += cadv[k] * pi1[k]
    sq = 0.0
    for j in range(theta.size):
        sq += theta[j] * theta[j]
    return const + ((a0 + a1) + (a2 + a3)) - 0.5 * zeta * sq


@njit(cache=True)
def _gradient(PhiT, cadv, zeta, theta, pi1, d, out):
    q, n = PhiT.shape
    for k in range(n):
        d[k] = cadv[k] * pi1[k] * (1.0 - pi1[k])
    m = n - n % 4
    for j in range(q):
        a0 = a1 = a2 = a3 = 0.0
        for k in range(0, m, 4):
            a0 += d[k] * PhiT[j, k]
            a1 += d[k + 1] * PhiT[j, k + 1]
            a2 += d[k + 2] * PhiT[j, k + 2]
            a3 += d[k + 3] * PhiT[j, k + 3]
        for k in range(m, n):
            a0 += d[k] * PhiT[j, k]
        out[j] = ((a0 + a1) + (a2 + a3)) - zeta * theta[j]


@njit(cache=True)
def _ascend(PhiT, cadv, const, zeta, theta0, max_iters, grad_tol, step_init, armijo_c, shrink):
    """Returns (theta, status, iterations); status 1 flags a non-finite objective."""
    q, n = PhiT.shape
    theta = theta0.copy()
    cand = np.empty(q)
    g = np.empty(q)
    z = np.empty(n)
    pi1 = np.empty(n)
    d = np.empty(n)
    kbuf = np.empty(n, dtype=np.int64)
    f = _value(PhiT, cadv, const, zeta, theta, z, pi1, kbuf)
    if not np.isfinite(f):
        return theta, 1, 0
    _gradient(PhiT, cadv, zeta, theta, pi1, d, g)
    it = 0
    while it < max_iters:
        if np.max(np.abs(g)) < grad_tol:
            break
        gg = 0.0
        tt = 0.0
        for j in range(q):
            gg += g[j] * g[j]
            tt += theta[j] * theta[j]
        step = step_init
        while True:
            for j in range(q):
                cand[j] = theta[j] + step * g[j]
            f_new = _value(PhiT, cadv, const, zeta, cand, z, pi1, kbuf)
            if not np.isfinite(f_new):
                return theta, 1, it
            if f_new >= f + armijo_c * step * gg and f_new >= f:
                break
            step *= shrink
            if step * np.sqrt(gg) < 1e-14 * (1.0 + np.sqrt(tt)):
                return theta, 0, it
        theta[:] = cand
        f = f_new
        _gradient(PhiT, cadv, zeta, theta, pi1, d, g)
        it += 1
    return theta, 0, it


class ActorProblem:
    """Objective and gradient for fixed critic weights and data.

    Everything theta-independent (policy features, advantages, the Q(s,0)
    baseline) is computed once on construction.
    """

    def __init__(self, w, D: Dataset, zeta_a: float, prior=None):
        t = len(D)
        if t == 0:
            raise ValueError("online dataset is empty")
        p = D.p
        w0, ws, wa, was = _split_w(w, p)
        Phi = policy_features(D.states)
        adv = wa + D.states @ was
        base = w0 + D.states @ ws
        if prior is None:
            c = np.full(t, 1.0 / t)
        else:
            pd = prior.data if isinstance(prior, PriorBlock) else prior
            if len(pd) == 0:
                raise ValueError("prior dataset is empty")
            nt = len(pd)
            Phi = np.vstack((policy_features(pd.states), Phi))
            adv = np.concatenate((wa + pd.states @ was, adv))
            base = np.concatenate((w0 + pd.states @ ws, base))
            c = np.concatenate((np.full(nt, 1.0 / ((t + 1) * nt)), np.full(t, 1.0 / (t + 1))))
        self.PhiT = np.ascontiguousarray(Phi.T)
        self.cadv = c * adv
        self.const = float(c @ base)
        self.zeta_a = float(zeta_a)

    @property
    def q(self) -> int:
        return self.PhiT.shape[0]

    def _theta(self, theta):
        theta = np.array(theta, dtype=float)
        if theta.shape != (self.q,):
            raise ValueError(f"theta must have length {self.q}, got {theta.shape}")
        return theta

    def _eval(self, theta):
        n = self.cadv.size
        pi1 = np.empty(n)
        f = _value(self.PhiT, self.cadv, self.const, self.zeta_a, theta, np.empty(n), pi1, np.empty(n, np.int64))
        return f, pi1

    def value(self, theta) -> float:
        return float(self._eval(self._theta(theta))[0])

    def gradient(self, theta) -> np.ndarray:
        theta = self._theta(theta)
        _, pi1 = self._eval(theta)
        g = np.empty(self.q)
        _gradient(self.PhiT, self.cadv, self.zeta_a, theta, pi1, np.empty(pi1.size), g)
        return g


def actor_objective(w, theta, D: Dataset, zeta_a: float) -> float:
    return ActorProblem(w, D, zeta_a).value(theta)


def actor_objective_warm(w, theta, D_prior, D: Dataset, zeta_a: float) -> float:
    """Warm objective; ``D_prior=None`` gives the plain objective."""
    return ActorProblem(w, D, zeta_a, prior=D_prior).value(theta)


def actor_gradient(w, theta, D_prior, D: Dataset, zeta_a: float) -> np.ndarray:
    return ActorProblem(w, D, zeta_a, prior=D_prior).gradient(theta)


def maximize_actor(w, theta_init, D_prior, D: Dataset, config: ActorConfig = ActorConfig()):
    """Gradient ascent with Armijo backtracking from ``theta_init``.

    Stops when the sup-norm of the gradient drops below ``grad_tol``, after
    ``max_iters`` iterations, or when no admissible step exists. Never
    accepts a step that lowers the objective.
    """
    problem = ActorProblem(w, D, config.zeta_a, prior=D_prior)
    return ascend(problem, theta_init, config)


def ascend(problem: ActorProblem, theta_init, config: ActorConfig) -> np.ndarray:
    theta, status, _ = _ascend(
        problem.PhiT, problem.cadv, problem.const, problem.zeta_a, problem._theta(theta_init),
        config.max_iters, config.grad_tol, config.step_init, config.armijo_c, config.backtrack_factor,
    )
    if status:
        raise NonFiniteObjective("actor objective evaluated to a non-finite value")
    return theta
