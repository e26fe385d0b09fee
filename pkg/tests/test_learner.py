import numpy as np
import pytest

from warmstart_ac.actor import ActorConfig
from warmstart_ac.env import BETA_BASIC, UserModel, constant_policy, gen_user_models, rollout
from warmstart_ac.learner import (
    LearnerConfig,
    PriorStudy,
    alternate,
    batch_learn,
    gen_prior_study,
    run_online,
)
from warmstart_ac.policy import action_prob


@pytest.fixture(scope="module")
def small_prior():
    return gen_prior_study(n_users=5, T_bar=12, seed=3)


def test_config_validation():
    cfg = LearnerConfig(mode="nws")
    assert cfg.mode == "NWS" and cfg.actor.zeta_a == cfg.zeta_a
    assert LearnerConfig(zeta_a=0.2, actor=ActorConfig(zeta_a=1.0)).actor.zeta_a == 0.2
    for bad in (dict(mode="x"), dict(gamma=1.0), dict(T0=0), dict(T0=31), dict(zeta_c=0.0), dict(alt_max_iters=0)):
        with pytest.raises(ValueError):
            LearnerConfig(**bad)


def test_gen_prior_study_shape_and_determinism():
    a = gen_prior_study(n_users=40, T_bar=42, seed=7)
    assert len(a.data) == 1680 and a.data.kind == "prior"
    assert sorted(set(a.data.user_ids)) == list(range(40))
    assert np.all(np.isfinite(a.theta_bar)) and a.theta_bar.shape == (4,)
    b = gen_prior_study(n_users=40, T_bar=42, seed=7)
    assert np.array_equal(a.theta_bar, b.theta_bar) and np.array_equal(a.data.rewards, b.data.rewards)
    # the prior study treats with probability one half
    assert abs(a.data.actions.mean() - 0.5) < 4 * 0.5 / np.sqrt(1680)


def test_prior_study_roundtrip(tmp_path, small_prior):
    small_prior.save(tmp_path)
    back = PriorStudy.load(tmp_path)
    assert np.array_equal(back.theta_bar, small_prior.theta_bar)
    assert np.array_equal(back.data.states, small_prior.data.states)
    assert back.meta["n_users"] == 5 and back.meta["T_bar"] == 12


def test_batch_learn_requires_two_tuples():
    D = rollout(UserModel(BETA_BASIC), constant_policy(0.5), 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        batch_learn(D, 0.0)


def test_alternate_fixed_point_with_strong_regularisation():
    D = rollout(UserModel(BETA_BASIC), constant_policy(0.5), 200, np.random.default_rng(1))
    res = alternate(D, np.zeros(4), 0.5, 1e-5, ActorConfig(zeta_a=50.0, max_iters=2000), alt_tol=1e-8, alt_max_iters=200)
    assert res.converged and res.iterations < 200
    # the returned pair is self-consistent: one more round changes nothing
    again = alternate(D, res.theta, 0.5, 1e-5, ActorConfig(zeta_a=50.0, max_iters=2000), alt_tol=1e-8, alt_max_iters=1)
    assert np.max(np.abs(again.theta - res.theta)) < 1e-6


def test_rws_update_schedule():
    m = gen_user_models(1, 0.005, seed=0)[0]
    cfg = LearnerConfig(T=30, T0=10, mode="RWS", alt_max_iters=5)
    res = run_online(m, None, cfg, np.random.default_rng(3))
    assert len(res.trace) == 30 and len(res.data) == 30
    assert sum(r.updated for r in res.trace) == 20
    assert not any(r.updated for r in res.trace[:10])
    assert all(r.n_tuples == r.t for r in res.trace)
    assert all(np.array_equal(r.theta, np.zeros(4)) for r in res.trace[:10])
    res.data.check_chaining()


def test_nws_update_schedule_and_start(small_prior):
    m = gen_user_models(1, 0.005, seed=1)[0]
    cfg = LearnerConfig(T=8, mode="NWS", gamma=0.4, alt_max_iters=5)
    res = run_online(m, small_prior, cfg, np.random.default_rng(4))
    assert sum(r.updated for r in res.trace) == 8
    assert [r.n_tuples for r in res.trace] == list(range(1, 9))
    with pytest.raises(ValueError):
        run_online(m, None, cfg)


def test_nws_first_action_uses_prior_rule(small_prior):
    # first action is drawn from the prior rule before any update
    m = UserModel(BETA_BASIC)
    prior = PriorStudy(small_prior.data, np.array([50.0, 0, 0, 0]))
    cfg = LearnerConfig(T=1, mode="NWS", alt_max_iters=1)
    for seed in range(5):
        assert run_online(m, prior, cfg, np.random.default_rng(seed)).trace[0].action == 1


def test_online_run_is_deterministic(small_prior):
    m = gen_user_models(1, 0.005, seed=2)[0]
    cfg = LearnerConfig(T=6, mode="NWS", alt_max_iters=3)
    a = run_online(m, small_prior, cfg, np.random.default_rng(5), np.random.default_rng(6))
    b = run_online(m, small_prior, cfg, np.random.default_rng(5), np.random.default_rng(6))
    assert np.array_equal(a.theta, b.theta)
    assert [r.action for r in a.trace] == [r.action for r in b.trace]


def test_rws_learns_to_treat_when_treatment_clearly_helps():
    beta = BETA_BASIC.copy()
    beta[8] = 5.0  # large main effect of treatment
    m = UserModel(beta)
    cfg = LearnerConfig(T=30, T0=10, mode="RWS", gamma=0.0)
    res = run_online(m, None, cfg, np.random.default_rng(7))
    probs = [action_prob(res.theta, s, 1) for s in res.data.states]
    assert np.mean(probs) > 0.9
    assert np.mean(res.data.actions[20:]) > 0.8


def test_rws_learns_not_to_treat_when_treatment_hurts():
    beta = BETA_BASIC.copy()
    beta[8] = -5.0
    res = run_online(UserModel(beta), None, LearnerConfig(T=30, T0=10, mode="RWS"), np.random.default_rng(8))
    # a handful of outlying states may still favour treatment after 10 coin flips
    assert np.median([action_prob(res.theta, s, 1) for s in res.data.states]) < 0.01
    assert np.mean(res.data.actions[10:]) < 0.3


def test_minimal_prior_study():
    tiny = gen_prior_study(n_users=1, T_bar=2, seed=0)
    assert len(tiny.data) == 2 and np.all(np.isfinite(tiny.theta_bar))


def test_indifferent_rewards_drive_theta_to_zero():
    # every state seen under both actions with the same reward: no advantage to learn
    from warmstart_ac.env import Dataset, Transition

    rng = np.random.default_rng(0)
    rows = []
    for _ in range(30):
        s = rng.normal(size=3)
        r = 1000.0 + 50 * s[0]
        rows += [Transition(s, 0, r, rng.normal(size=3)), Transition(s, 1, r, rng.normal(size=3))]
    # the critic ridge leaves an O(zeta_c * |w0|) advantage, so keep zeta_c tiny
    res = batch_learn(Dataset.from_transitions(rows), 0.0, zeta_c=1e-10, alt_tol=1e-4, alt_max_iters=50)
    assert res.converged and np.max(np.abs(res.theta)) < 1e-4
    assert np.max(np.abs(res.w[4:])) < 1e-5


def test_single_alternation_round():
    D = rollout(UserModel(BETA_BASIC), constant_policy(0.5), 20, np.random.default_rng(2))
    res = alternate(D, np.zeros(4), 0.0, 1e-5, ActorConfig(), alt_max_iters=1)
    assert res.iterations == 1
    from warmstart_ac.actor import maximize_actor
    from warmstart_ac.critic import lstdq

    w = lstdq(D, np.zeros(4), 0.0, 1e-5)
    assert np.array_equal(res.w, w)
    assert np.array_equal(res.theta, maximize_actor(w, np.zeros(4), None, D, ActorConfig()))


def test_rws_early_actions_are_fair_coin_flips():
    m = UserModel(BETA_BASIC)
    cfg = LearnerConfig(T=10, T0=10, mode="RWS")
    acts = np.concatenate([[r.action for r in run_online(m, None, cfg, np.random.default_rng(s)).trace] for s in range(300)])
    assert abs(acts.mean() - 0.5) < 4 * 0.5 / np.sqrt(acts.size)


def test_nws_single_step_matches_batch_on_two_copies():
    # deterministic user, prior made of copies of the very tuple the new user produces
    from warmstart_ac.env import Dataset

    m = UserModel(BETA_BASIC, 0.0, 0.0)
    s0 = np.array([0.5, -0.5, 1.0])
    cfg = LearnerConfig(T=1, mode="NWS", gamma=0.3, alt_max_iters=20)
    probe = run_online(m, None, LearnerConfig(T=1, T0=1, mode="RWS"), np.random.default_rng(1), np.random.default_rng(2), s0=s0)
    tau = probe.data[0]
    prior = PriorStudy(Dataset.from_transitions([tau] * 40, kind="prior"), np.zeros(4))
    res = run_online(m, prior, cfg, np.random.default_rng(1), np.random.default_rng(2), s0=s0)
    assert res.data[0].a == tau.a and np.array_equal(res.data[0].s, tau.s)
    ref = batch_learn(Dataset.from_transitions([tau, tau]), 0.3, alt_max_iters=20)
    assert np.allclose(res.theta, ref.theta, rtol=1e-6, atol=1e-6)
