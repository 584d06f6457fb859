import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from dribo import ndgrad as G
from dribo.agents import ppo as P
from dribo.agents import sac as S
from dribo.agents.carry import initial_carry
from dribo.agents.replay import SequenceReplay
from dribo.batch import SequenceBatch
from dribo.gradsuite import check_ppo, check_sac, jitter, tiny_rssm
from dribo.worlds.recording import Episode


def episode(rng, t, size=4, adim=1, tag=0.0):
    obs = rng.random((t + 1, size, size))
    obs[:, 0, 0] = tag + np.arange(t + 1)  # lets a window be traced back to its source
    return Episode(obs, rng.normal(size=(t, adim)), rng.random(t))


# -- replay --------------------------------------------------------------------


def test_replay_windows_are_uniform_over_valid_pairs():
    rng = np.random.default_rng(0)
    buf = SequenceReplay(seq_len=3)
    lengths = (4, 6, 9)
    for i, t in enumerate(lengths):
        buf.push(episode(rng, t, tag=1000.0 * i))
    valid = buf.window_index()
    assert len(valid) == sum(t - 2 for t in lengths)
    b = buf.sample(20_000, rng)
    first = b.observations[:, 0, 0, 0]
    ep, off = (first // 1000).astype(int), (first % 1000).astype(int)
    counts = np.zeros(len(valid))
    for k, (i, o) in enumerate(valid):
        counts[k] = np.sum((ep == i) & (off == o))
    assert counts.sum() == 20_000
    assert chisquare(counts).pvalue > 0.001
    # windows are contiguous
    np.testing.assert_array_equal(np.diff(b.observations[:, :, 0, 0], axis=1), 1.0)


def test_replay_fifo_and_errors():
    rng = np.random.default_rng(1)
    buf = SequenceReplay(seq_len=2, capacity=2)
    with pytest.raises(G.ContractError):
        buf.sample(1, rng)
    for i in range(3):
        buf.push(episode(rng, 3, tag=1000.0 * i))
    assert len(buf) == 2 and buf.steps == 6
    assert buf.episodes[0].observations[0, 0, 0] == 1000.0
    with pytest.raises(G.ContractError):
        buf.push(episode(rng, 1))
    with pytest.raises(G.ContractError):
        buf.sample(1, rng, seq_len=3)
    with pytest.raises(G.ContractError):
        SequenceReplay(seq_len=0)


def test_replay_sample_aligned():
    rng = np.random.default_rng(2)
    buf = SequenceReplay(seq_len=4)
    ep = episode(rng, 10)
    buf.push(ep)
    b = buf.sample(5, rng)
    for n in range(5):
        k = int(b.observations[n, 0, 0, 0])
        np.testing.assert_array_equal(b.actions[n], ep.actions[k:k + 4])
        np.testing.assert_array_equal(b.rewards[n], ep.rewards[k:k + 4])


# -- SAC -----------------------------------------------------------------------


def sac_setup(seed=0, **cfg):
    rng = np.random.default_rng(seed)
    model = tiny_rssm(0, seed)
    agent = S.SacAgent(model, S.SacConfig(hidden=6, **cfg), seed=seed + 1)
    batch = SequenceBatch(rng.random((3, 4, 4, 4)), rng.uniform(-1, 1, (3, 4, 1)), rng.random((3, 4)))
    return rng, agent, batch


def test_gamma_zero_zero_reward_target_is_zero():
    rng, agent, batch = sac_setup()
    batch = batch.replace(rewards=np.zeros((3, 4)))
    noise = S.SacNoise.draw(rng, 3, 4, 3, 1)
    out = S.sac_losses(agent, batch, noise, gamma=0.0)
    assert np.array_equal(out["target"].value, np.zeros(9))
    q1, q2 = agent.q_values(G.concat([st.state.features() for st in agent.model.encode_sequence(
        batch.observations, batch.actions, noise=noise.encoder)[:-1]], axis=0), S._time_major(batch.actions, 0, 3))
    want = np.mean(q1.value ** 2) + np.mean(q2.value ** 2)
    assert out["critic"].item() == pytest.approx(want, rel=1e-12)


def test_polyak_after_one_update_is_exact():
    rng, agent, batch = sac_setup(seed=1)
    critic_t = agent.critic_target.state()
    enc_t = agent.target_model.params.state()
    S.sac_update(agent, batch, rng)
    for name, p in agent.critic_target.items():
        assert np.array_equal(p.value, 0.01 * agent.critic[name].value + 0.99 * critic_t[name])
    for name, p in agent.target_model.params.items():
        assert np.array_equal(p.value, 0.05 * agent.model.params[name].value + 0.95 * enc_t[name])


def test_targets_only_move_every_other_update():
    rng, agent, batch = sac_setup(seed=2)
    S.sac_update(agent, batch, rng)
    snap = agent.critic_target.state()
    S.sac_update(agent, batch, rng)
    for name, p in agent.critic_target.items():
        assert np.array_equal(p.value, snap[name])


def test_entropy_target_and_alpha_gradient_sign():
    rng, agent, batch = sac_setup(seed=3)
    assert agent.target_entropy == -1.0
    noise = S.SacNoise.draw(rng, 3, 4, 3, 1)
    out = S.sac_losses(agent, batch, noise)
    agent.temperature.zero_grads()
    G.backward(out["alpha"])
    gap = np.mean(out["logp"].value) + agent.target_entropy
    # dJ/dlog_alpha = -alpha * mean(logp + target): entropy below target pushes alpha up
    assert float(agent.log_alpha.grad) == pytest.approx(-agent.alpha * gap, rel=1e-12)
    assert np.sign(agent.log_alpha.grad) == -np.sign(gap)


def test_targets_receive_no_gradients():
    rng, agent, batch = sac_setup(seed=4)
    out = S.sac_losses(agent, batch, S.SacNoise.draw(rng, 3, 4, 3, 1))
    for key in ("critic", "actor", "alpha"):
        S._zero_all(agent)
        G.backward(out[key])
        for reg in (agent.critic_target, agent.target_model.params):
            for p in reg.nodes():
                assert p.grad is None or not np.any(p.grad)


def test_actor_loss_does_not_touch_encoder_or_critic_step():
    rng, agent, batch = sac_setup(seed=5)
    out = S.sac_losses(agent, batch, S.SacNoise.draw(rng, 3, 4, 3, 1))
    S._zero_all(agent)
    G.backward(out["actor"])
    for p in agent.model.params.nodes():
        assert p.grad is None or not np.any(p.grad)


def test_sac_update_metrics_and_windows():
    rng, agent, batch = sac_setup(seed=6)
    m = S.sac_update(agent, batch, rng)
    assert set(m) == set(S.METRIC_KEYS) and all(np.isfinite(v) for v in m.values())
    with pytest.raises(G.ContractError):
        S.sac_losses(agent, batch.replace(observations=batch.observations[:, :1], actions=batch.actions[:, :1],
                                          rewards=batch.rewards[:, :1]), S.SacNoise.zeros(3, 1, 3, 1))
    with pytest.raises(G.ContractError):
        S.SacAgent(tiny_rssm(4))


def test_sac_nonfinite_aborts():
    rng, agent, batch = sac_setup(seed=7)
    agent.critic["q1.0.w"].value = np.full_like(agent.critic["q1.0.w"].value, np.nan)
    with pytest.raises(G.DomainError):
        S.sac_update(agent, batch, rng)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_squashed_actions_in_range(seed):
    rng, agent, _ = sac_setup(seed=seed % 5)
    jitter([agent.actor], rng, 3.0)
    s = G.Node(rng.normal(size=(8, 7)))
    a, logp = agent.policy_sample(s, 5 * rng.standard_normal((8, 1)))
    assert np.all(np.abs(a.value) <= 1.0) and np.all(np.isfinite(logp.value))


def test_sac_act_determinism():
    rng, agent, _ = sac_setup(seed=8)
    o = rng.random((4, 4))
    c = initial_carry(agent.model)
    a1, c1 = S.act(agent, o, c, "deterministic")
    a2, c2 = S.act(agent, o, c, "deterministic")
    assert np.array_equal(a1, a2) and np.array_equal(c1.state.h.value, c2.state.h.value)
    b1, _ = S.act(agent, o, c, "stochastic", np.random.default_rng(3))
    b2, _ = S.act(agent, o, c, "stochastic", np.random.default_rng(3))
    assert np.array_equal(b1, b2) and np.all(np.abs(b1) <= 1)
    assert np.array_equal(c1.action, a1)
    with pytest.raises(G.ContractError):
        S.act(agent, o, c, "greedy")


def test_sac_gradients():
    for rec in check_sac(seed=2):
        assert rec.passed, rec.line()


# -- PPO -----------------------------------------------------------------------


def test_gae_gamma_one_lambda_one_is_return_minus_value():
    r = np.array([1.0, 0.5, -2.0, 3.0])
    v = np.array([0.3, -0.1, 0.7, 1.1])
    adv, ret = P.compute_gae(r, v, 1.0, 1.0)
    togo = np.array([2.5, 1.5, 1.0, 3.0])
    np.testing.assert_allclose(adv, togo - v, atol=1e-15)
    np.testing.assert_allclose(ret, togo, atol=1e-15)


def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=6), rng.normal(size=6)
    adv, _ = P.compute_gae(r, v, 0.9, 0.0, last_value=0.4)
    nxt = np.append(v[1:], 0.4)
    np.testing.assert_allclose(adv, r + 0.9 * nxt - v, atol=1e-15)


def ppo_rollout(seed=0, episodes=2, steps=3):
    rng = np.random.default_rng(seed)
    model = tiny_rssm(4, seed)
    agent = P.PpoAgent(model, P.PpoConfig(hidden=6), seed=seed + 1)
    obs = rng.random((episodes, steps, 4, 4))
    rows = []
    for e in range(episodes):
        carry = initial_carry(model)
        for t in range(steps):
            a, carry, info = P.act(agent, obs[e, t], carry, "stochastic", rng)
            rows.append((a, info))
    stack = lambda k: np.array([i[k] for _, i in rows]).reshape((episodes, steps) + np.shape(rows[0][1][k]))
    ro = P.Rollout(obs, np.array([a for a, _ in rows]).reshape(episodes, steps), rng.random((episodes, steps)),
                   stack("old_state"), stack("prev_action"), stack("noise"), stack("logp"), stack("value"))
    return rng, agent, ro


def flat(x):
    return x.reshape((-1,) + x.shape[2:])


def test_first_ratio_is_one():
    rng, agent, ro = ppo_rollout()
    out = P.ppo_losses(agent, flat(ro.observations), flat(ro.actions), flat(ro.old_states), flat(ro.prev_actions),
                       flat(ro.noise), flat(ro.logp), np.ones(6), np.zeros(6))
    np.testing.assert_allclose(out["ratio"].value, 1.0, atol=1e-12)
    assert out["policy"].item() == pytest.approx(-1.0, abs=1e-12)


def test_clip_uses_one_point_two():
    rng, agent, ro = ppo_rollout(seed=1)
    logp_old = flat(ro.logp) - np.log(1.5)
    adv = np.full(6, 2.0)
    out = P.ppo_losses(agent, flat(ro.observations), flat(ro.actions), flat(ro.old_states), flat(ro.prev_actions),
                       flat(ro.noise), logp_old, adv, np.zeros(6))
    np.testing.assert_allclose(out["ratio"].value, 1.5, rtol=1e-12)
    assert out["policy"].item() == pytest.approx(-1.2 * 2.0, rel=1e-12)


def test_missing_old_states_rejected():
    rng, agent, ro = ppo_rollout(seed=2)
    ro.old_states = None
    with pytest.raises(G.ContractError):
        P.ppo_update(agent, ro, rng)


def test_ppo_update_metrics():
    rng, agent, ro = ppo_rollout(seed=3)
    m = P.ppo_update(agent, ro, rng)
    assert set(m) == set(P.METRIC_KEYS) and all(np.isfinite(v) for v in m.values())
    assert m["ppo/clip_fraction"] >= 0.0


def test_ppo_act_determinism_and_info():
    rng, agent, _ = ppo_rollout(seed=4)
    o = rng.random((4, 4))
    c = initial_carry(agent.model)
    a1, c1, i1 = P.act(agent, o, c, "deterministic")
    a2, c2, i2 = P.act(agent, o, c, "deterministic")
    assert a1 == a2 and i1["logp"] == i2["logp"]
    assert np.array_equal(c1.action, np.eye(4)[a1])
    b1 = P.act(agent, o, c, "stochastic", np.random.default_rng(9))[0]
    b2 = P.act(agent, o, c, "stochastic", np.random.default_rng(9))[0]
    assert b1 == b2
    with pytest.raises(G.ContractError):
        P.PpoAgent(tiny_rssm(0))


def test_log_softmax_normalizes():
    logits = G.Node(np.array([[1000.0, 0.0, -1000.0], [0.1, 0.2, 0.3]]))
    lp = P.log_softmax(logits).value
    np.testing.assert_allclose(np.exp(lp).sum(-1), 1.0, atol=1e-15)


def test_running_moments_match_numpy():
    rng = np.random.default_rng(5)
    m = P.RunningMoments(mean=0.0, var=1.0, count=1e-12)
    chunks = [rng.normal(3, 2, size=n) for n in (5, 17, 40)]
    for c in chunks:
        m.update(c)
    allx = np.concatenate(chunks)
    assert m.mean == pytest.approx(allx.mean(), rel=1e-9)
    assert m.var == pytest.approx(allx.var(), rel=1e-9)


def test_ppo_gradients():
    for rec in check_ppo(seed=3):
        assert rec.passed, rec.line()
