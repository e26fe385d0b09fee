import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from warmstart_ac.actor import (
    ActorConfig,
    ActorProblem,
    NonFiniteObjective,
    _sigmoid_into,
    actor_gradient,
    actor_objective,
    actor_objective_warm,
    maximize_actor,
)
from warmstart_ac.env import Dataset, Transition


def random_dataset(rng, n, p=3, scale=1.0):
    return Dataset(
        states=rng.normal(size=(n, p)) * scale,
        actions=rng.integers(0, 2, n),
        rewards=rng.normal(size=n),
        next_states=rng.normal(size=(n, p)),
        user_ids=np.zeros(n, dtype=int),
        times=np.arange(1, n + 1),
    )


def brute_objective(w, theta, rows, zeta):
    """sum_k c_k sum_a Q(s_k, a) pi(a | s_k) - zeta/2 |theta|^2, spelled out."""
    total = 0.0
    for c, s in rows:
        for a in (0, 1):
            x = np.concatenate(([1.0], s, [a], a * s))
            p1 = 1.0 / (1.0 + np.exp(-(theta[0] + theta[1:] @ s)))
            total += c * (x @ w) * (p1 if a else 1 - p1)
    return total - 0.5 * zeta * theta @ theta


def fd_gradient(f, theta, h=1e-5):
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def test_objective_matches_brute_force():
    rng = np.random.default_rng(0)
    D = random_dataset(rng, 9)
    prior = random_dataset(rng, 13)
    w = rng.normal(size=8) * 100
    theta = rng.normal(size=4)
    rows = [(1 / 9, s) for s in D.states]
    assert np.isclose(actor_objective(w, theta, D, 1e-3), brute_objective(w, theta, rows, 1e-3), rtol=1e-12)
    rows = [(1 / (10 * 13), s) for s in prior.states] + [(1 / 10, s) for s in D.states]
    assert np.isclose(
        actor_objective_warm(w, theta, prior, D, 1e-3), brute_objective(w, theta, rows, 1e-3), rtol=1e-12
    )
    assert actor_objective_warm(w, theta, None, D, 1e-3) == actor_objective(w, theta, D, 1e-3)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        D = random_dataset(rng, int(rng.integers(1, 30)))
        prior = random_dataset(rng, 20) if rng.random() < 0.5 else None
        w = rng.normal(size=8)
        theta = rng.normal(size=4)
        g = actor_gradient(w, theta, prior, D, 0.1)
        fd = fd_gradient(lambda th: actor_objective_warm(w, th, prior, D, 0.1), theta)
        worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8))
    assert worst < 1e-4


@settings(max_examples=200)
@given(z=st.floats(-800, 800))
def test_sigmoid_kernel_accuracy(z):
    out = np.empty(1)
    _sigmoid_into(np.array([z]), out, np.empty(1, np.int64))
    ref = expit(z)
    assert abs(out[0] - ref) <= 4e-16 * max(ref, 1e-300) + 1e-300


def test_sigmoid_kernel_extremes():
    z = np.array([-1e308, -745.0, -708.5, -40.0, 0.0, 40.0, 708.5, 1e308, np.inf, -np.inf])
    out = np.empty(z.size)
    _sigmoid_into(z, out, np.empty(z.size, np.int64))
    assert np.all(np.isfinite(out))
    assert np.allclose(out, expit(z), rtol=1e-15, atol=1e-300)


def test_maximizer_agrees_with_quasi_newton():
    # strong regularisation makes the problem well posed
    rng = np.random.default_rng(2)
    for _ in range(10):
        D = random_dataset(rng, 25)
        w = rng.normal(size=8)
        cfg = ActorConfig(zeta_a=0.5, max_iters=5000, grad_tol=1e-10)
        theta = maximize_actor(w, np.zeros(4), None, D, cfg)
        ref = minimize(
            lambda th: -actor_objective(w, th, D, 0.5),
            np.zeros(4),
            jac=lambda th: -actor_gradient(w, th, None, D, 0.5),
            method="BFGS",
            options={"gtol": 1e-12},
        )
        assert actor_objective(w, theta, D, 0.5) >= -ref.fun - 1e-10
        assert np.max(np.abs(theta - ref.x)) < 1e-5


def test_maximizer_beats_random_probes():
    rng = np.random.default_rng(3)
    D = random_dataset(rng, 30)
    w = rng.normal(size=8) * 50
    cfg = ActorConfig(zeta_a=1.0, max_iters=2000)
    theta = maximize_actor(w, np.zeros(4), None, D, cfg)
    best = actor_objective(w, theta, D, 1.0)
    probes = theta + rng.normal(size=(2000, 4)) * rng.choice([0.01, 0.1, 1.0], size=(2000, 1))
    assert max(actor_objective(w, th, D, 1.0) for th in probes) <= best + 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), iters=st.integers(1, 30))
def test_ascent_never_decreases(seed, iters):
    rng = np.random.default_rng(seed)
    D = random_dataset(rng, 15)
    prior = random_dataset(rng, 40)
    w = rng.normal(size=8) * 1000
    theta0 = rng.normal(size=4) * 3
    f0 = actor_objective_warm(w, theta0, prior, D, 1e-5)
    prev = f0
    for k in (1, iters):
        th = maximize_actor(w, theta0, prior, D, ActorConfig(zeta_a=1e-5, max_iters=k))
        f = actor_objective_warm(w, th, prior, D, 1e-5)
        assert f >= prev - 1e-9 * abs(prev)
        prev = f


def test_stronger_regularisation_shrinks_theta():
    rng = np.random.default_rng(4)
    D = random_dataset(rng, 40)
    w = rng.normal(size=8) * 10
    norms = []
    for zeta in (0.01, 0.1, 1.0, 10.0):
        th = maximize_actor(w, np.zeros(4), None, D, ActorConfig(zeta_a=zeta, max_iters=5000, grad_tol=1e-10))
        norms.append(np.linalg.norm(th))
    assert all(a >= b - 1e-9 for a, b in zip(norms, norms[1:]))


def test_zero_advantage_keeps_theta_at_origin():
    rng = np.random.default_rng(5)
    D = random_dataset(rng, 10)
    w = np.concatenate((rng.normal(size=4), np.zeros(4)))
    assert np.allclose(maximize_actor(w, np.zeros(4), None, D), 0.0)


def test_treatment_advantage_pushes_towards_treating():
    rng = np.random.default_rng(6)
    D = random_dataset(rng, 20)
    w = np.zeros(8)
    w[4] = 100.0
    th = maximize_actor(w, np.zeros(4), None, D, ActorConfig(zeta_a=1.0))
    assert th[0] > 0 and np.all(ActorProblem(w, D, 1.0).gradient(np.zeros(4))[:1] > 0)


def test_errors():
    rng = np.random.default_rng(7)
    D = random_dataset(rng, 5)
    with pytest.raises(ValueError):
        ActorConfig(zeta_a=0.0)
    with pytest.raises(ValueError):
        ActorConfig(armijo_c=1.0)
    with pytest.raises(ValueError):
        actor_objective(np.zeros(7), np.zeros(4), D, 1e-5)
    with pytest.raises(ValueError):
        actor_objective(np.zeros(8), np.zeros(3), D, 1e-5)
    with pytest.raises(ValueError):
        actor_objective(np.zeros(8), np.zeros(4), Dataset.empty(3), 1e-5)
    w = np.zeros(8)
    w[4] = np.inf
    with pytest.raises(NonFiniteObjective):
        maximize_actor(w, np.zeros(4), None, D)


def single_state(s):
    return Dataset.from_transitions([Transition(np.asarray(s, float), 0, 0.0, np.zeros(3))])


def test_uniform_policy_objective():
    rng = np.random.default_rng(8)
    D = random_dataset(rng, 12)
    w = rng.normal(size=8)
    X0 = np.hstack((np.ones((12, 1)), D.states, np.zeros((12, 4))))
    X1 = np.hstack((np.ones((12, 1)), D.states, np.ones((12, 1)), D.states))
    assert np.isclose(actor_objective(w, np.zeros(4), D, 1e-5), np.mean(0.5 * (X0 @ w + X1 @ w)), rtol=1e-13)


def test_single_state_objective_is_treatment_probability():
    D = single_state([0.7, -0.2, 1.1])
    w = np.zeros(8)
    w[4] = 1.0  # Q(s,0)=0, Q(s,1)=1
    for th in (np.zeros(4), np.array([3.0, 0, 0, 0]), np.array([30.0, 0, 0, 0])):
        p1 = expit(th[0] + th[1:] @ D.states[0])
        assert np.isclose(actor_objective(w, th, D, 1e-300), p1, rtol=1e-14)
    assert actor_objective(w, np.array([40.0, 0, 0, 0]), D, 1e-300) <= 1.0


def test_gradient_hand_example():
    D = single_state([0.0, 0.0, 0.0])
    w = np.zeros(8)
    w[4] = 4.0
    assert np.allclose(actor_gradient(w, np.zeros(4), None, D, 1e-300), [1.0, 0, 0, 0], atol=1e-15)
    # indifferent critic: only the regulariser pulls
    rng = np.random.default_rng(9)
    D = random_dataset(rng, 10)
    w = np.concatenate((rng.normal(size=4), np.zeros(4)))
    th = rng.normal(size=4)
    assert np.allclose(actor_gradient(w, th, None, D, 0.3), -0.3 * th, atol=1e-15)


def test_constant_advantage_meets_first_order_condition():
    rng = np.random.default_rng(10)
    D = random_dataset(rng, 20)
    w = np.zeros(8)
    w[4] = 2.0
    cfg = ActorConfig(zeta_a=0.1, max_iters=10000)
    th = maximize_actor(w, np.zeros(4), None, D, cfg)
    assert np.max(np.abs(ActorProblem(w, D, 0.1).gradient(th))) < cfg.grad_tol
    # already stationary: returned unchanged
    again = maximize_actor(w, th, None, D, cfg)
    assert np.max(np.abs(again - th)) < 1e-6


def test_huge_regularisation_pins_theta_to_zero():
    rng = np.random.default_rng(11)
    D = random_dataset(rng, 20)
    w = rng.normal(size=8)
    th = maximize_actor(w, np.ones(4), None, D, ActorConfig(zeta_a=1e6, step_init=1e-6, max_iters=1000))
    assert np.max(np.abs(th)) < 1e-6


def test_random_probes_in_radius_five_ball():
    rng = np.random.default_rng(12)
    D = random_dataset(rng, 8)
    w = rng.normal(size=8) * 10
    cfg = ActorConfig(zeta_a=0.5, max_iters=5000)
    th = maximize_actor(w, np.zeros(4), None, D, cfg)
    best = actor_objective(w, th, D, 0.5)
    dirs = rng.normal(size=(10000, 4))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    probes = th + dirs * 5 * rng.random((10000, 1)) ** 0.25
    vals = [actor_objective(w, p, D, 0.5) for p in probes]
    assert max(vals) <= best + 1e-9
