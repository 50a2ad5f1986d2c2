import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vivrl.errors import TrainingError
from vivrl.nn import gaussian_logprob
from vivrl.ppo import (ActorCritic, Batch, Optimizers, PpoConfig, Trajectory, Transition,
                       act_deterministic, clipped_surrogate, compute_gae, make_batch, normalize,
                       ppo_loss, update)


def _traj(rewards, values, bootstrap=0.0, dones=None):
    tr = Trajectory(bootstrap_value=bootstrap)
    dones = dones or [False] * len(rewards)
    for r, v, d in zip(rewards, values, dones):
        tr.append(Transition(np.zeros(2), 0.0, 0.0, float(r), float(v), d))
    return tr


def _gae_brute(r, v, boot, gamma, lam):
    """Double sum over (t, k) of (gamma lam)^k delta_{t+k}."""
    n = len(r)
    vn = list(v[1:]) + [boot]
    delta = [r[t] + gamma * vn[t] - v[t] for t in range(n)]
    return np.array([sum((gamma * lam) ** k * delta[t + k] for k in range(n - t)) for t in range(n)])


def test_gae_lambda_zero_is_td_error():
    r, v = [1.0, -0.5, 0.2], [0.3, 0.1, -0.4]
    adv, _ = compute_gae(_traj(r, v, 0.7), 0.9, 0.0, normalize_adv=False)
    vn = [0.1, -0.4, 0.7]
    assert np.allclose(adv, [r[t] + 0.9 * vn[t] - v[t] for t in range(3)], rtol=0, atol=1e-15)


def test_gae_suffix_sums():
    r = [1.0, 2.0, -3.0, 0.5]
    adv, ret = compute_gae(_traj(r, [0.0] * 4), 1.0, 1.0, normalize_adv=False)
    assert np.allclose(adv, [0.5, -0.5, -2.5, 0.5])
    assert np.allclose(ret, adv)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_gae_matches_brute_force(seed, gamma, lam):
    rng = np.random.default_rng(seed)
    r, v = rng.standard_normal(8), rng.standard_normal(8)
    boot = float(rng.standard_normal())
    adv, ret = compute_gae(_traj(r, v, boot), gamma, lam, normalize_adv=False)
    want = _gae_brute(r, v, boot, gamma, lam)
    assert np.allclose(adv, want, rtol=0, atol=1e-10)
    assert np.allclose(ret, want + v, rtol=0, atol=1e-10)


def test_gae_terminal_stops_bootstrap():
    adv, _ = compute_gae(_traj([1.0, 1.0], [0.0, 0.0], 100.0, [False, True]), 0.9, 0.9,
                         normalize_adv=False)
    assert np.allclose(adv, [1.0 + 0.9 * 0.9, 1.0])
    with pytest.raises(TrainingError):
        compute_gae(Trajectory(), 0.9, 0.9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 200))
def test_advantage_normalization(seed, n):
    x = np.random.default_rng(seed).standard_normal(n) * 7 + 3
    z = normalize(x)
    assert abs(z.mean()) < 1e-10
    assert abs(z.var() - 1.0) < 1e-6


def test_clip_hand_examples():
    assert clipped_surrogate(1.5, 1.0, 0.2) == -1.2
    assert clipped_surrogate(0.5, -1.0, 0.2) == 0.8
    assert clipped_surrogate(1.0, 0.3, 0.2) == -0.3


def _single_batch(ac, obs, raw, logratio, adv):
    lp_new = float(gaussian_logprob(ac.mean(obs), ac.log_std, np.array([raw])))
    return Batch(obs[None, :], np.array([raw]), np.array([lp_new - logratio]), np.array([adv]),
                 np.array([0.0]))


def test_loss_uses_clipped_branch():
    ac = ActorCritic.create(2, np.random.default_rng(0))
    cfg = PpoConfig(entropy_coef=0.0, value_coef=0.0)
    obs = np.array([0.1, -0.2])
    b = _single_batch(ac, obs, 0.05, np.log(1.5), 1.0)
    loss, ga, gls, _, info = ppo_loss(b, ac, cfg)
    assert loss == pytest.approx(-1.2, rel=1e-12)
    assert info["clip_fraction"] == 1.0
    # clipped branch carries no policy gradient
    assert all(np.all(g == 0) for g in ga) and np.all(gls == 0)
    b = _single_batch(ac, obs, 0.05, np.log(0.5), -1.0)
    loss, *_ = ppo_loss(b, ac, cfg)
    assert loss == pytest.approx(0.8, rel=1e-12)


def test_same_policy_ratio_one():
    rng = np.random.default_rng(1)
    ac = ActorCritic.create(3, rng)
    obs = rng.standard_normal((16, 3))
    raw = rng.standard_normal(16) * 0.2
    lp = gaussian_logprob(ac.mean(obs), ac.log_std, raw[:, None])
    adv = normalize(rng.standard_normal(16))
    b = Batch(obs, raw, lp, adv, np.zeros(16))
    loss, *_, info = ppo_loss(b, ac, PpoConfig(entropy_coef=0.0, value_coef=0.0))
    assert abs(loss) < 1e-12
    assert info["clip_fraction"] == 0.0
    assert info["kl"] == 0.0


def test_loss_gradient_matches_finite_difference():
    rng = np.random.default_rng(2)
    ac = ActorCritic.create(3, rng, hidden=(8, 8), init_log_std=-0.7)
    obs = rng.standard_normal((6, 3))
    raw = 0.3 * rng.standard_normal(6)
    lp = gaussian_logprob(ac.mean(obs), ac.log_std, raw[:, None]) + 0.05 * rng.standard_normal(6)
    b = Batch(obs, raw, lp, rng.standard_normal(6), rng.standard_normal(6))
    cfg = PpoConfig(clip_eps=0.2)
    _, ga, gls, gc, _ = ppo_loss(b, ac, cfg)
    h = 1e-6
    params = ac.actor.params + [ac.log_std] + ac.critic.params
    grads = ga + [gls] + gc
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = ppo_loss(b, ac, cfg)[0]
            flat[i] = old - h
            fm = ppo_loss(b, ac, cfg)[0]
            flat[i] = old
            num = (fp - fm) / (2 * h)
            worst = max(worst, abs(num - gflat[i]) / max(1e-6, abs(num) + abs(gflat[i])))
    assert worst < 1e-4


def _fixture_traj(ac, seed, n=128):
    rng = np.random.default_rng(seed)
    tr = Trajectory()
    for k in range(n):
        obs = np.array([np.sin(0.3 * k), np.cos(0.3 * k)])
        duty, raw, lp, v = ac.act(obs, rng)
        tr.append(Transition(obs, duty, lp, -abs(obs[0] + duty), v, False, raw))
    return tr


def test_zero_advantage_leaves_actor_unchanged():
    ac = ActorCritic.create(2, np.random.default_rng(0))
    tr = _fixture_traj(ac, 1)
    for t in tr.transitions:
        t.reward, t.value = 0.0, 0.0
    tr.bootstrap_value = 0.0
    before = [p.copy() for p in ac.actor.params] + [ac.log_std.copy()]
    cfg = PpoConfig(entropy_coef=0.0, normalize_advantages=False)
    update(ac, tr, cfg, Optimizers.for_model(ac), np.random.default_rng(0))
    after = ac.actor.params + [ac.log_std]
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_update_kl_small_and_deterministic():
    runs = []
    for _ in range(2):
        ac = ActorCritic.create(2, np.random.default_rng(0))
        opt = Optimizers.for_model(ac)
        rng = np.random.default_rng(3)
        for ep in range(5):
            m = update(ac, _fixture_traj(ac, 10 + ep), PpoConfig(), opt, rng)
        runs.append((ac.to_bytes(), m))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1]["kl"] < 0.05
    assert 0.0 <= runs[0][1]["clip_fraction"] <= 1.0


def test_act_deterministic_examples():
    ac = ActorCritic.create(2, np.random.default_rng(0))
    obs = np.array([0.5, -0.5])
    assert abs(act_deterministic(ac, obs)) < 0.05
    assert act_deterministic(ac, obs) == act_deterministic(ac, obs)
    ac.actor.biases[-1][:] = 3.0
    assert act_deterministic(ac, obs) == 0.4
    ac.actor.biases[-1][:] = -3.0
    assert act_deterministic(ac, obs) == -0.4


def test_transition_validation():
    with pytest.raises(TrainingError):
        Transition(np.zeros(2), 0.5, 0.0, 0.0, 0.0)
    with pytest.raises(TrainingError):
        Transition(np.array([np.nan, 0.0]), 0.0, 0.0, 0.0, 0.0)


def _bandit(seed, updates=200, episodes=64, lr=1e-3):
    rng = np.random.default_rng(seed)
    ac = ActorCritic.create(1, rng)
    opt = Optimizers.for_model(ac)
    cfg = PpoConfig(lr_actor=lr, lr_critic=lr)
    obs = np.ones(1)
    for _ in range(updates):
        trajs = []
        for _ in range(episodes):
            duty, raw, lp, v = ac.act(obs, rng)
            tr = Trajectory()
            tr.append(Transition(obs, duty, lp, -abs(duty - 0.2), v, True, raw))
            trajs.append(tr)
        update(ac, trajs, cfg, opt, rng)
    return act_deterministic(ac, obs)


@pytest.mark.slow
def test_bandit_converges():
    hits = sum(abs(_bandit(s) - 0.2) <= 0.03 for s in range(5))
    assert hits >= 4


def test_make_batch_concatenates():
    ac = ActorCritic.create(2, np.random.default_rng(0))
    b = make_batch([_fixture_traj(ac, 1, 10), _fixture_traj(ac, 2, 6)], PpoConfig())
    assert len(b) == 16
    assert abs(b.advantages.mean()) < 1e-10
