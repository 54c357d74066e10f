import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from conftest import fixture_env_config
from uavmec.env import EnvConfig, Scenario
from uavmec.nn import Mlp, log_sigmoid, sigmoid
from uavmec.trainer import (ExpertBuffer, Learner, RolloutBuffer, TrainConfig, collect_rollouts,
                            compute_gae, intrinsic_reward, load_snapshot, make_policy,
                            mixed_reward, normalize, train, train_ppo, update_expert_buffer)
from uavmec.trainer import losses
from uavmec.trainer.dppoil import _update_agent, disc_inputs
from uavmec.trainer.features import ObservationEncoder
from uavmec.trainer.rollout import partition, run_learning_episode, stream

TINY = dict(episodes=8, workers=1, episodes_per_update=4, epochs=2, minibatch=32,
            expert_batch=16, hidden=(8, 8), expert_capacity=3, disc_steps=2)


# -- advantage estimation ---------------------------------------------------

def gae_double_loop(r, v, gamma, lam):
    """A_t = sum_l (gamma lam)^l delta_{t+l}, episode terminal after the last step."""
    n = len(r)
    v_next = list(v[1:]) + [0.0]
    delta = [r[t] + gamma * v_next[t] - v[t] for t in range(n)]
    return np.array([sum((gamma * lam) ** (k - t) * delta[k] for k in range(t, n))
                     for t in range(n)])


def test_gae_single_step():
    adv, ret = compute_gae([1.0], [0.0], [True], 1.0, 1.0)
    assert adv[0] == 1.0 and ret[0] == 1.0


def test_gae_zero_at_true_values():
    gamma = 0.9
    r = np.array([1.0, 2.0, 0.5, -1.0])
    v = np.array([sum(gamma ** (k - t) * r[k] for k in range(t, 4)) for t in range(4)])
    adv, ret = compute_gae(r, v, [False, False, False, True], gamma, 0.7)
    np.testing.assert_allclose(adv, 0.0, atol=1e-12)
    np.testing.assert_allclose(ret, v)


def test_gae_matches_double_loop():
    rng = np.random.default_rng(0)
    for _ in range(10):
        r, v = rng.normal(size=30), rng.normal(size=30)
        dones = np.zeros(30, dtype=bool)
        dones[-1] = True
        adv, ret = compute_gae(r, v, dones, 0.99, 0.95)
        ref = gae_double_loop(r, v, 0.99, 0.95)
        assert np.max(np.abs(adv - ref) / np.maximum(np.abs(ref), 1.0)) < 1e-12
        np.testing.assert_array_equal(ret, adv + v)


def test_normalize():
    x = normalize(np.random.default_rng(1).normal(3, 5, 500))
    assert abs(x.mean()) < 1e-12 and abs(x.std() - 1) < 1e-6


# -- clipped surrogate ------------------------------------------------------

@pytest.mark.parametrize("ratio, adv, expected", [(1.0, 2.0, 2.0), (2.0, 1.0, 1.2),
                                                  (0.5, -1.0, -0.8)])
def test_clipped_objective_examples(ratio, adv, expected):
    assert losses.clipped_objective(np.array([ratio]), np.array([adv]), 0.2)[0] == pytest.approx(
        expected)


def test_clipped_objective_bound():
    rng = np.random.default_rng(2)
    r = np.exp(rng.normal(0, 0.5, 10_000))
    a = rng.normal(size=10_000)
    obj = losses.clipped_objective(r, a, 0.2)
    assert np.all(obj <= np.maximum(r * a, np.clip(r, 0.8, 1.2) * a))


def test_epoch_zero_ratio_is_one():
    cfg = fixture_env_config()
    rng = np.random.default_rng(3)
    snap = make_policy(cfg, rng, (8, 8))
    ep = run_learning_episode(snap, cfg, None, 0, 0)
    agent = snap.agents[0]
    _, _, i1 = losses.flight_actor_loss(agent.flight, ep.obs[0], ep.flight[0],
                                        ep.logp_flight[0], np.ones(10), 0.2)
    _, _, i2 = losses.alloc_actor_loss(agent.alloc, ep.obs[0], ep.alloc[0], ep.logp_alloc[0],
                                       np.ones(10), 0.2)
    np.testing.assert_allclose(i1["ratio"], 1.0, atol=1e-9)
    np.testing.assert_allclose(i2["ratio"], 1.0, atol=1e-9)


def test_nonfinite_ratio_is_skipped_and_counted():
    net = Mlp(2, 2, "gaussian", (3,), np.random.default_rng(4))
    obs = np.zeros((3, 2))
    u = np.zeros((3, 2))
    old = np.array([0.0, -np.inf, 0.0])
    loss, grads, info = losses.flight_actor_loss(net, obs, u, old, np.ones(3), 0.2)
    assert info["skipped"] == 1 and math.isfinite(loss)
    assert all(np.all(np.isfinite(g)) for g in grads.values())


# -- critic -----------------------------------------------------------------

def _constant_critic(value):
    net = Mlp(2, 1, "value", (3,))
    for k in net.params:
        net.params[k][:] = 0.0
    net.params["b1"][:] = value
    return net


def test_critic_loss_examples():
    assert losses.critic_loss(_constant_critic(2.5), np.zeros((4, 2)), np.full(4, 2.5))[0] == 0.0
    assert losses.critic_loss(_constant_critic(1.0), np.zeros((1, 2)), np.array([3.0]))[0] == 2.0


def test_critic_loss_matches_hand_mse():
    rng = np.random.default_rng(5)
    net = Mlp(3, 1, "value", (4, 4), rng, out_gain=1.0)
    obs, ret = rng.normal(size=(9, 3)), rng.normal(size=9)
    v = [reference_value(net, o) for o in obs]
    hand = sum((a - b) ** 2 for a, b in zip(v, ret)) / (2 * 9)
    assert losses.critic_loss(net, obs, ret)[0] == pytest.approx(hand, rel=1e-12)


def reference_value(net, o):
    h = o
    for i in range(net.num_layers - 1):
        h = np.tanh(h @ net.params[f"W{i}"] + net.params[f"b{i}"])
    last = net.num_layers - 1
    return float((h @ net.params[f"W{last}"] + net.params[f"b{last}"])[0])


# -- discriminator and intrinsic reward -------------------------------------

def _zero_disc(dim=4):
    net = Mlp(dim, 1, "discriminator", (3,))
    for k in net.params:
        net.params[k][:] = 0.0
    return net


def test_discriminator_symmetric_ignorance():
    loss, _, _ = losses.discriminator_loss(_zero_disc(), np.ones((5, 4)), np.ones((7, 4)))
    assert loss == pytest.approx(2 * math.log(2), rel=1e-14)


def test_discriminator_perfect_separation():
    net = _zero_disc(1)
    net.params["W0"][:] = 1.0
    net.params["W1"][:] = 100.0
    agent, expert = np.full((4, 1), -5.0), np.full((4, 1), 5.0)
    loss, _, info = losses.discriminator_loss(net, agent, expert)
    assert loss < 1e-30
    assert info["d_expert"] > 1 - 1e-12 and info["d_agent"] < 1e-12


def test_discriminator_matches_independent_cross_entropy():
    rng = np.random.default_rng(6)
    for _ in range(10):
        net = Mlp(4, 1, "discriminator", (5, 5), rng, out_gain=1.0)
        a, e = rng.normal(size=(6, 4)), rng.normal(size=(8, 4))
        da = [1 / (1 + math.exp(-reference_value(net, x))) for x in a]
        de = [1 / (1 + math.exp(-reference_value(net, x))) for x in e]
        ref = -sum(math.log(d) for d in de) / 8 - sum(math.log(1 - d) for d in da) / 6
        assert losses.discriminator_loss(net, a, e)[0] == pytest.approx(ref, rel=1e-10)


def test_discriminator_literal_variant():
    net = _zero_disc()
    loss, _, _ = losses.discriminator_loss(net, np.ones((2, 4)), np.ones((2, 4)), "paper_literal")
    assert loss == pytest.approx(math.log(2) - (1 + math.log(2)))
    with pytest.raises(ValueError):
        losses.discriminator_loss(net, np.ones((2, 4)), np.ones((2, 4)), "nope")


def test_intrinsic_reward_values():
    net = _zero_disc()
    np.testing.assert_allclose(intrinsic_reward(net, np.ones((3, 4))), -math.log(2))
    net.params["b1"][:] = 40.0
    r = intrinsic_reward(net, np.ones((3, 4)))
    assert np.all(r <= 0) and np.all(r > -1e-15)
    assert float(log_sigmoid(np.array([-800.0]))[0]) == pytest.approx(-800.0)
    assert float(sigmoid(np.array([800.0]))[0]) == 1.0


def test_mixed_reward_identity():
    r_e = np.array([1.0, -2.0, 3.5])
    assert np.array_equal(mixed_reward(r_e, np.array([-0.1, -5.0, -0.7]), 0.0), r_e)
    np.testing.assert_allclose(mixed_reward(r_e, np.array([-1.0, -1.0, -1.0]), 0.1), r_e - 0.1)


# -- expert buffer ----------------------------------------------------------

def test_expert_first_admitted_and_median_rule():
    buf = ExpertBuffer(capacity=3)
    assert buf.offer(np.zeros((2, 1)), -10.0)
    buf.offer(np.zeros((2, 1)), 5.0)
    buf.offer(np.zeros((2, 1)), 7.0)
    before = list(buf.returns)
    assert not buf.offer(np.zeros((2, 1)), 4.0)
    assert not buf.offer(np.zeros((2, 1)), 5.0)
    assert buf.returns == before
    assert buf.offer(np.ones((2, 1)), 6.0)
    assert sorted(buf.returns) == [5.0, 6.0, 7.0] and buf.evicted == [-10.0]


def test_expert_increasing_stream_keeps_best():
    buf = ExpertBuffer(capacity=10)
    for r in range(40):
        update_expert_buffer(buf, np.full((1, 1), r), float(r))
        assert len(buf) <= 10
    assert sorted(buf.returns) == list(map(float, range(30, 40)))
    assert sorted(float(t[0, 0]) for t in buf.tuples) == buf.returns


def test_expert_invariants_random_stream():
    rng = np.random.default_rng(7)
    buf = ExpertBuffer(capacity=5)
    for r in rng.normal(size=300):
        n_evicted = len(buf.evicted)
        buf.offer(np.zeros((1, 1)), r)
        assert len(buf) <= 5
        if len(buf.evicted) > n_evicted:
            assert min(buf.returns) >= buf.evicted[-1]


# -- rollouts ---------------------------------------------------------------

def test_partition():
    assert partition(list(range(10)), 4) == [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9]]
    assert sum(partition(list(range(5)), 8), []) == list(range(5))


def test_single_episode_transition_count():
    cfg = EnvConfig()
    snap = make_policy(cfg, np.random.default_rng(8), (8, 8))
    eps = collect_rollouts(snap, cfg, None, 0, [0])
    buf = RolloutBuffer()
    buf.extend(eps)
    assert len(buf) == 120
    assert buf.agent_arrays(2)["obs"].shape == (30, ObservationEncoder.for_config(cfg).dim)


def _assert_same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.episode == y.episode and x.metrics == y.metrics
        for k in ("obs", "flight", "alloc", "logp_flight", "logp_alloc", "rewards", "values",
                  "offloads"):
            assert getattr(x, k).tobytes() == getattr(y, k).tobytes()


def test_worker_count_does_not_change_buffers(fixture_scenario):
    cfg = fixture_env_config()
    snap = make_policy(cfg, np.random.default_rng(9), (8, 8))
    episodes = list(range(6))
    one = collect_rollouts(snap, cfg, fixture_scenario, 11, episodes, workers=1)
    with ProcessPoolExecutor(4) as pool:
        four = collect_rollouts(snap, cfg, fixture_scenario, 11, episodes, workers=4, pool=pool)
    _assert_same(one, four)
    sequential = [run_learning_episode(snap, cfg, fixture_scenario, 11, e) for e in episodes]
    _assert_same(one, sequential)


def test_worker_failure_is_reported():
    cfg = fixture_env_config()
    snap = make_policy(cfg, np.random.default_rng(10), (8, 8))
    bad = Scenario(np.zeros((4, 2)))
    with ProcessPoolExecutor(2) as pool:
        with pytest.raises(RuntimeError, match="rollout worker"):
            collect_rollouts(snap, cfg, bad, 0, [0, 1], workers=2, pool=pool)


def test_streams_are_disjoint():
    a = stream(0, 1 << 40).random(4)
    b = stream(0, (1 << 40) + 1).random(4)
    assert not np.array_equal(a, b)


# -- training loop ----------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        TrainConfig(discriminator_loss="mse")


def test_per_agent_independence():
    cfg = EnvConfig()
    tc = TrainConfig(**TINY)
    learner = Learner(cfg, tc, 0)
    buf = RolloutBuffer()
    buf.extend(collect_rollouts(learner.snapshot(), cfg, None, 0, [0, 1]))
    before = {k: v.copy() for k, v in learner.agents[1].policy.flight.params.items()}
    _update_agent(learner, 0, buf, cfg.world.num_slots)
    after = learner.agents[1].policy.flight.params
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_is_deterministic(tmp_path):
    cfg = fixture_env_config()
    tc = TrainConfig(**TINY)
    train(tc, cfg, 3, out_dir=tmp_path / "a")
    train(tc, cfg, 3, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a.startswith(b"# metrics-version 1\n")
    assert (tmp_path / "a" / "checkpoints" / "final" / "checkpoint.json").exists()


def test_metrics_rows_ordered_and_finite():
    res = train(TrainConfig(**TINY), fixture_env_config(), 4)
    eps = [int(r[0]) for r in res.rows]
    assert eps == list(range(8))
    for r in res.rows:
        assert all(math.isfinite(float(x)) for x in r[2:-2])


def test_disabled_discriminator_matches_plain_ppo():
    cfg = fixture_env_config()
    off = TrainConfig(**TINY, discriminator_enabled=False, intrinsic_scale=0.0)
    assert train(off, cfg, 5).metrics_csv() == train_ppo(off, cfg, 5).metrics_csv()


def test_zero_alpha_discriminator_is_inert():
    cfg = fixture_env_config()
    on = train(TrainConfig(**TINY, intrinsic_scale=0.0), cfg, 6)
    ppo = train_ppo(TrainConfig(**TINY), cfg, 6)
    cut = lambda rows: [r[:-2] for r in rows]  # drop loss_disc, intrinsic
    assert cut(on.rows) == cut(ppo.rows)
    assert any(r[-2] != "nan" for r in on.rows)
    for a, b in zip(on.learner.agents, ppo.learner.agents):
        for k in a.policy.flight.params:
            assert np.array_equal(a.policy.flight.params[k], b.policy.flight.params[k])


def test_discriminator_changes_training_when_alpha_positive():
    cfg = fixture_env_config()
    on = train(TrainConfig(**TINY, intrinsic_scale=0.5), cfg, 6)
    ppo = train_ppo(TrainConfig(**TINY), cfg, 6)
    # the expert buffer is empty during the first update, so only the last update differs
    a, b = on.learner.agents[0].policy.critic, ppo.learner.agents[0].policy.critic
    assert not np.array_equal(a.params["W0"], b.params["W0"])


def test_expert_buffer_filled_from_rollouts():
    res = train(TrainConfig(**TINY), fixture_env_config(), 7)
    buf = res.learner.agents[0].expert
    assert 0 < len(buf) <= 3
    dim = ObservationEncoder.for_config(fixture_env_config()).dim
    assert buf.tuples[0].shape == (10, dim + 2 + 3)


def test_checkpoint_load_and_dim_check(tmp_path):
    cfg = fixture_env_config()
    learner = Learner(cfg, TrainConfig(**TINY), 0)
    learner.save(tmp_path)
    snap = load_snapshot(tmp_path, cfg)
    obs = np.ones(learner.encoder.dim)
    assert np.array_equal(snap.agents[0].flight(obs), learner.agents[0].policy.flight(obs))
    with pytest.raises(ValueError, match="do not match"):
        load_snapshot(tmp_path, EnvConfig())


def test_disc_inputs_layout():
    x = disc_inputs(np.zeros((2, 3)), np.full((2, 2), 100.0), np.full((2, 4), 0.25))
    assert x.shape == (2, 9)
    np.testing.assert_allclose(x[:, 3:5], 1.0)


def test_encoder_layout():
    cfg = EnvConfig()
    enc = ObservationEncoder.for_config(cfg)
    assert enc.dim == cfg.obs_dim + cfg.observed_sds + cfg.world.num_peer_uavs
    raw = np.zeros(cfg.obs_dim)
    raw[:3] = [500.0, 250.0, 120.0]
    raw[3:8] = [np.pi / 2, 100.0, 2.0, 5e8, 1.0]  # one SD straight north
    x = enc(raw)
    k = cfg.observed_sds + cfg.world.num_peer_uavs
    cos, sin = x[-2 * k:-k], x[-k:]
    assert cos[0] == pytest.approx(0.0, abs=1e-15) and sin[0] == 1.0
    assert not cos[1:].any() and not sin[1:].any()  # padded entries
    np.testing.assert_allclose(x[:3], [0.5, 0.25, 1.0])
    batch = enc(np.stack([raw, raw]))
    np.testing.assert_array_equal(batch[0], x)


def test_encoder_continuous_across_east():
    enc = ObservationEncoder.for_config(fixture_env_config())
    a, b = np.zeros(enc.scale.size), np.zeros(enc.scale.size)
    a[3], a[7] = 1e-9, 1.0
    b[3], b[7] = 2 * np.pi - 1e-9, 1.0
    assert np.max(np.abs(enc(a) - enc(b))) < 1e-8
