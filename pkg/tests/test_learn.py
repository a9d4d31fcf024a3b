import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from liftmg.learn import checkpoint as C
from liftmg.learn import dqn as D
from liftmg.learn import nn
from liftmg.learn import sac as A
from liftmg.learn.replay import ReplayBuffer, decode_map, encode_map
from liftmg.motion import BASE_R_MAX, ArmSubgoal, BaseSubgoal, subgoal_in_bounds
from liftmg.sense import N_CHANNELS, TASK_VEC_DIM

F64 = np.float64


def tiny_sac(seed=0, dtype=F64, **kw):
    cfg = A.SacConfig(map_pool=8, conv_widths=(4, 4, 4), task_width=8, hidden=16, **kw)
    return A.SacAgent(cfg, seed=seed, dtype=dtype)


def tiny_dqn(seed=0, dtype=F64, **kw):
    return D.DqnAgent(D.DqnConfig(widths=(4, 8, 8, 8), **kw), seed=seed, dtype=dtype)


def sac_batch(rng, n, d=8, pooled=8):
    return {"map": rng.random((n, N_CHANNELS, pooled, pooled)), "vec": rng.standard_normal((n, TASK_VEC_DIM)),
            "action": rng.uniform(-1, 1, (n, d)), "reward": rng.standard_normal(n),
            "done": (rng.random(n) < 0.3).astype(float),
            "next_map": rng.random((n, N_CHANNELS, pooled, pooled)),
            "next_vec": rng.standard_normal((n, TASK_VEC_DIM))}


def sq_loss(y):
    return 0.5 * float(np.sum(y ** 2)), y


def dense_forward(head, x):
    """Independent forward pass through a Dense-ReLU-Dense-ReLU-Dense head."""
    l0, l2, l4 = head.layers[0], head.layers[2], head.layers[4]
    h = np.maximum(x @ l0.W + l0.b, 0.0)
    h = np.maximum(h @ l2.W + l2.b, 0.0)
    return (h @ l4.W + l4.b)[:, 0]


# -- gradient checks ------------------------------------------------------------------

def test_dense_quadratic_gradient():
    rng = np.random.default_rng(0)
    layer = nn.Dense(5, 3, rng, F64)
    x = rng.standard_normal((4, 5))
    assert nn.grad_check(layer, x, sq_loss, n_probe=30, h=1e-5, check_input=True) <= 1e-7


def test_tanh_mlp_gradient():
    rng = np.random.default_rng(1)
    net = nn.Sequential([nn.Dense(6, 8, rng, F64), nn.Tanh(), nn.Dense(8, 8, rng, F64), nn.Tanh(),
                         nn.Dense(8, 2, rng, F64)])
    x = rng.standard_normal((5, 6))
    assert nn.grad_check(net, x, sq_loss, n_probe=60, check_input=True) <= 1e-4


def test_conv_and_transposed_conv_gradient():
    rng = np.random.default_rng(2)
    net = nn.Sequential([nn.Conv2d(3, 4, 4, 2, 1, rng, F64), nn.Tanh(),
                         nn.Conv2d(4, 5, 4, 2, 1, rng, F64), nn.Tanh(),
                         nn.ConvTranspose2d(5, 2, rng, F64), nn.Tanh(),
                         nn.AvgPool2d(2), nn.Flatten(), nn.Dense(2 * 2 * 2, 3, rng, F64)])
    x = rng.standard_normal((2, 3, 8, 8))
    assert nn.grad_check(net, x, sq_loss, n_probe=80, check_input=True) <= 1e-4


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(3)
    net = nn.Sequential([nn.Dense(4, 6, rng, F64), nn.ReLU(), nn.Dense(6, 1, rng, F64)])
    x = rng.standard_normal((8, 4))
    net.layers[0].b[...] = 0.3
    # probes of size 1e-6 cannot flip any pre-activation sign that is this far from 0
    pre = x @ net.layers[0].W + net.layers[0].b
    assert np.min(np.abs(pre)) > 1e-3
    assert nn.grad_check(net, x, sq_loss, n_probe=40, h=1e-6, check_input=True) <= 1e-4


def test_dqn_loss_gradient():
    agent = tiny_dqn(huber_delta=100.0)
    rng = np.random.default_rng(4)
    batch = {"map": rng.random((3, N_CHANNELS, 64, 64)), "next_map": rng.random((3, N_CHANNELS, 64, 64)),
             "action": rng.integers(D.N_ACTIONS, size=3), "reward": rng.standard_normal(3),
             "done": np.array([0.0, 1.0, 0.0])}

    def f():
        loss, _, _ = agent.loss(batch)
        return loss, list(agent.online.grads)

    # the target net is a separate copy, so probing the online weights also
    # moves the double-DQN argmax only if a tie flips; 1e-6 probes do not
    assert nn.grad_check_fn(agent.online.params, f, n_probe=40, h=1e-6) <= 1e-4


def test_sac_critic_loss_gradient():
    agent = tiny_sac()
    rng = np.random.default_rng(5)
    batch = sac_batch(rng, 4)
    y = rng.standard_normal(4)

    def f():
        loss, _ = agent.critic_loss(batch, y)
        return loss, list(agent.critic_grads)

    assert nn.grad_check_fn(agent.critic_params, f, n_probe=60, h=1e-6) <= 1e-4


def test_sac_actor_loss_gradient():
    agent = tiny_sac()
    rng = np.random.default_rng(6)
    f_feat = rng.standard_normal((4, agent.enc.dim))
    eps = rng.standard_normal((4, 8))

    def f():
        loss, _ = agent.actor_loss(f_feat, eps)
        return loss, list(agent.actor.grads)

    assert nn.grad_check_fn(agent.actor.params, f, n_probe=60, h=1e-6) <= 1e-4


def test_squashed_log_prob_matches_change_of_variables():
    rng = np.random.default_rng(7)
    mu, ls, eps = rng.standard_normal((3, 5, 2))
    a, logp = A.squash_log_prob(mu, ls, eps)
    u = mu + np.exp(ls) * eps
    gauss = stats.norm.logpdf(u, mu, np.exp(ls)).sum(axis=1)
    np.testing.assert_allclose(logp, gauss - np.log(1 - np.tanh(u) ** 2).sum(axis=1), rtol=1e-9)
    np.testing.assert_allclose(a, np.tanh(u))


# -- SAC decoding ---------------------------------------------------------------------------

def test_zero_base_action_is_midpoint_subgoal():
    sg = A.base_from_action(np.zeros(8))
    assert sg == BaseSubgoal(BASE_R_MAX / 2, 0.0, 0.0)
    # a zero phase entry is not > 0, so the full decoder takes the arm branch
    assert isinstance(A.decode_subgoal(np.zeros(8)), ArmSubgoal)


def test_positive_phase_selects_base():
    a = np.zeros(8)
    a[7] = 0.7
    assert isinstance(A.decode_subgoal(a), BaseSubgoal)
    a[7] = -0.7
    assert isinstance(A.decode_subgoal(a), ArmSubgoal)


@settings(max_examples=200, deadline=None)
@given(a=st.lists(st.floats(-1, 1), min_size=8, max_size=8))
def test_every_squashed_action_decodes_in_bounds(a):
    assert subgoal_in_bounds(A.decode_subgoal(np.array(a)))
    flat = A.decode_flat(np.array(a[:4]))
    assert abs(flat.v) <= 0.5 + 1e-12 and abs(flat.w) <= 1.0 + 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 50.0))
def test_policy_outputs_in_range_for_any_parameters(seed, scale):
    agent = tiny_sac(seed, dtype=np.float32)
    rng = np.random.default_rng(seed)
    for p in agent.actor.params:
        p[...] = rng.standard_normal(p.shape) * scale
    maps = rng.random((3, N_CHANNELS, 8, 8)).astype(np.float32)
    vecs = rng.standard_normal((3, TASK_VEC_DIM)).astype(np.float32) * 10
    for det in (True, False):
        raw = agent.act_raw(maps, vecs, deterministic=det, rng=rng)
        assert np.all(np.isfinite(raw)) and np.all(np.abs(raw) <= 1.0)
        for row in raw:
            assert subgoal_in_bounds(A.decode_subgoal(row))


# -- SAC losses ----------------------------------------------------------------------------------

def test_critic_loss_on_two_transitions_by_hand():
    agent = tiny_sac()
    rng = np.random.default_rng(8)
    batch = sac_batch(rng, 2)
    y = np.array([0.5, -1.25])
    loss, f = agent.critic_loss(batch, y)
    x = np.concatenate([f, batch["action"]], axis=1)
    q1, q2 = dense_forward(agent.q1, x), dense_forward(agent.q2, x)
    expect = ((q1[0] - y[0]) ** 2 + (q1[1] - y[1]) ** 2) / 2 + ((q2[0] - y[0]) ** 2 + (q2[1] - y[1]) ** 2) / 2
    assert loss == pytest.approx(expect, rel=1e-12)


def test_critic_targets_by_hand():
    agent = tiny_sac(init_log_alpha=math.log(0.3))
    rng = np.random.default_rng(9)
    batch = sac_batch(rng, 2)
    batch["done"] = np.array([1.0, 0.0])
    eps = rng.standard_normal((2, 8))
    y = agent.critic_targets(batch, eps)
    assert y[0] == batch["reward"][0]
    mu, ls = agent.policy_outputs(batch["next_map"], batch["next_vec"])
    a2, logp = A.squash_log_prob(mu, ls, eps)
    ft = agent.enc_t.forward(batch["next_map"], batch["next_vec"])
    x = np.concatenate([ft, a2], axis=1)
    soft = min(dense_forward(agent.q1_t, x)[1], dense_forward(agent.q2_t, x)[1]) - 0.3 * logp[1]
    assert y[1] == pytest.approx(batch["reward"][1] + 0.99 * soft, rel=1e-12)


def test_tau_one_copies_online_into_target():
    agent = tiny_sac(tau=1.0)
    agent.update(sac_batch(np.random.default_rng(10), 4))
    for t, o in zip(agent.target_params, agent.critic_params):
        np.testing.assert_array_equal(t, o)


def test_small_tau_moves_target_partially():
    agent = tiny_sac(tau=0.005)
    before = [p.copy() for p in agent.target_params]
    agent.update(sac_batch(np.random.default_rng(10), 4))
    for b, t, o in zip(before, agent.target_params, agent.critic_params):
        np.testing.assert_allclose(t, 0.995 * b + 0.005 * o, rtol=1e-12, atol=1e-15)


def test_raising_alpha_scales_the_entropy_term():
    agent = tiny_sac()
    rng = np.random.default_rng(11)
    f = rng.standard_normal((6, agent.enc.dim))
    eps = rng.standard_normal((6, 8))
    losses = []
    for alpha in (0.1, 0.5, 2.0):
        agent.log_alpha[0] = math.log(alpha)
        loss, logp = agent.actor_loss(f, eps)
        losses.append(loss)
    m = float(np.mean(logp))
    # loss = alpha * mean(log pi) - mean(min Q): the entropy term grows linearly in alpha
    assert losses[1] - losses[0] == pytest.approx(0.4 * m, rel=1e-9)
    assert losses[2] - losses[1] == pytest.approx(1.5 * m, rel=1e-9)
    assert abs(0.1 * m) < abs(0.5 * m) < abs(2.0 * m)


def test_alpha_grows_when_entropy_is_below_target():
    agent = tiny_sac()
    loss, grad = agent.alpha_loss(np.full(4, 20.0))   # entropy -20 < target -8
    assert grad[0] < 0    # a descent step increases log alpha


# -- DQN ----------------------------------------------------------------------------------------

def test_greedy_picks_unique_argmax():
    q = np.zeros((24, 16, 16))
    q[13, 4, 9] = 1.0
    assert D.select_action(q, 0.0, np.random.default_rng(0)) == 13 * 256 + 4 * 16 + 9


def test_ties_go_to_the_lowest_index():
    q = np.zeros((24, 16, 16))
    q[3, 0, 0] = q[7, 5, 5] = 2.0
    assert D.select_action(q, 0.0, np.random.default_rng(0)) == 3 * 256


def test_full_epsilon_is_uniform():
    rng = np.random.default_rng(12)
    q = np.zeros(D.N_ACTIONS)
    q[0] = 9.0
    draws = np.array([D.select_action(q, 1.0, rng) for _ in range(10_000)])
    # 24 channels x 256 cells; test uniformity over channels and over cells
    ch = np.bincount(draws // 256, minlength=24)
    cell = np.bincount(draws % 256, minlength=256)
    assert stats.chisquare(ch).pvalue > 1e-3
    assert stats.chisquare(cell).pvalue > 1e-3


def test_terminal_target_is_reward():
    rng = np.random.default_rng(13)
    y = D.double_dqn_targets(rng.standard_normal((2, 10)), rng.standard_normal((2, 10)),
                             np.array([1.5, -2.0]), np.array([1.0, 1.0]), 0.99)
    np.testing.assert_array_equal(y, [1.5, -2.0])


def test_double_dqn_uses_online_argmax_and_target_value():
    qo = np.array([[1.0, 2.0]])   # online prefers action 1
    qt = np.array([[5.0, 3.0]])   # target would prefer action 0
    y = D.double_dqn_targets(qo, qt, np.array([0.5]), np.array([0.0]), 0.9)
    assert y[0] == pytest.approx(0.5 + 0.9 * 3.0)


def test_gradient_norm_clipped_to_ten():
    g = [np.array([15.0, 0.0]), np.array([[0.0, 20.0]])]
    pre = nn.clip_grad_norm(g, 10.0)
    assert pre == pytest.approx(25.0)
    assert nn.global_norm(g) == pytest.approx(10.0)
    np.testing.assert_allclose(g[0], [6.0, 0.0])


def test_q_map_shape():
    agent = tiny_dqn(dtype=np.float32)
    q = agent.q_maps(np.zeros((N_CHANNELS, 64, 64), np.float32))
    assert q.shape == (1, 24, 16, 16)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.sampled_from(["exp", "affine", "cube"]))
def test_greedy_action_invariant_under_monotone_transform(seed, k):
    q = np.random.default_rng(seed).standard_normal((24, 16, 16))
    g = {"exp": np.exp, "affine": lambda v: 3.0 * v + 7.0, "cube": lambda v: v ** 3}[k]
    rng = np.random.default_rng(0)
    assert D.select_action(q, 0.0, rng) == D.select_action(g(q), 0.0, rng)


def test_action_decoding():
    # base channel 0, cell (0, 0): forward-left of the robot, heading unchanged
    sg = D.decode_action(0)
    assert isinstance(sg, BaseSubgoal) and sg.dtheta == 0.0 and sg.phi > 0
    # base channel 3 is a quarter turn
    assert D.decode_action(3 * 256).dtheta == pytest.approx(math.pi / 2)
    # arm channel 12 + 6: push towards pi from the upsampled cell centre
    sg = D.decode_action(18 * 256 + 2 * 16 + 5)
    assert isinstance(sg, ArmSubgoal)
    assert sg.cell == (10, 22)
    assert abs(sg.push_dir) == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        D.decode_action(D.N_ACTIONS)
    for idx in np.random.default_rng(0).integers(D.N_ACTIONS, size=200):
        assert subgoal_in_bounds(D.decode_action(idx))


def test_epsilon_schedule():
    cfg = D.DqnConfig()
    assert D.epsilon_at(0, 100, cfg) == 0.8
    assert D.epsilon_at(25, 100, cfg) == pytest.approx(0.425)
    assert D.epsilon_at(50, 100, cfg) == pytest.approx(0.05)
    assert D.epsilon_at(99, 100, cfg) == pytest.approx(0.05)


def test_target_net_syncs_on_period():
    agent = tiny_dqn(dtype=np.float32, target_period=2, batch_size=2)
    rng = np.random.default_rng(14)
    batch = {"map": rng.random((2, N_CHANNELS, 64, 64)), "next_map": rng.random((2, N_CHANNELS, 64, 64)),
             "action": np.array([0, 5]), "reward": np.array([1.0, 0.0]), "done": np.array([1.0, 0.0])}
    agent.update(batch)
    assert any(not np.array_equal(t, o) for t, o in zip(agent.target.params, agent.online.params))
    agent.update(batch)
    assert all(np.array_equal(t, o) for t, o in zip(agent.target.params, agent.online.params))


# -- replay -----------------------------------------------------------------------------------------

def test_replay_evicts_oldest_first():
    buf = ReplayBuffer(3)
    for k in range(5):
        buf.add(x=np.array([k]), r=float(k))
    assert len(buf) == 3
    np.testing.assert_array_equal(buf.ids(), [2, 3, 4])
    assert sorted(buf.store["x"][:, 0]) == [2, 3, 4]
    with pytest.raises(ValueError):
        buf.sample(4, np.random.default_rng(0))
    with pytest.raises(KeyError):
        buf.add(x=np.array([9]))


def test_map_encoding_is_exact_for_map_values():
    vals = np.array([0.0, 1.0] + [k / 11 for k in range(12)], np.float32)
    np.testing.assert_array_equal(decode_map(encode_map(vals)), vals)


# -- checkpoints ------------------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    agent = tiny_sac(dtype=np.float32)
    agent.update(sac_batch(np.random.default_rng(15), 4))
    C.save(tmp_path / "a.ckpt", agent.named_arrays(), {"kind": "sac", "step": 3})
    arrays, meta = C.load(tmp_path / "a.ckpt")
    assert meta == {"kind": "sac", "step": 3}
    fresh = tiny_sac(seed=99, dtype=np.float32)
    fresh.load_arrays(arrays)
    for k, a in agent.named_arrays().items():
        np.testing.assert_array_equal(fresh.named_arrays()[k], a)
    assert fresh.updates == 1


def test_checkpoint_corruption_is_detected():
    blob = C.dumps({"w": np.arange(6, dtype=np.float32).reshape(2, 3)}, {"a": 1})
    with pytest.raises(C.CheckpointError):
        C.loads(b"XXXXXXXX" + blob[8:])
    with pytest.raises(C.CheckpointError):
        C.loads(blob[:-5])
    with pytest.raises(C.CheckpointError):
        C.loads(blob + b"\0")
    with pytest.raises(C.CheckpointError):
        C.loads(blob[:8] + b"\x09" + blob[9:])   # unknown version
    with pytest.raises(ValueError):
        tiny_dqn().load_arrays({"w": np.zeros(1)})


# -- learning smoke tests ------------------------------------------------------------------------------

GOOD_CHANNEL = 5


def test_dqn_learns_a_one_step_bandit():
    agent = tiny_dqn(dtype=np.float32, lr=1e-3, batch_size=8)
    rng = np.random.default_rng(16)
    maps = rng.random((8, N_CHANNELS, 64, 64)).astype(np.float32)
    for _ in range(2000):
        a = rng.integers(D.N_ACTIONS, size=8)
        batch = {"map": maps[rng.integers(8, size=8)], "action": a,
                 "reward": (a // 256 == GOOD_CHANNEL).astype(np.float32), "done": np.ones(8)}
        batch["next_map"] = batch["map"]
        agent.update(batch)
    test_maps = rng.random((100, N_CHANNELS, 64, 64)).astype(np.float32)
    q = agent.q_maps(test_maps)
    best = np.argmax(q.reshape(100, -1), axis=1)
    assert np.mean(best // 256 == GOOD_CHANNEL) >= 0.95


def test_sac_learns_a_one_step_bandit():
    agent = tiny_sac(dtype=np.float32, batch_size=64, lr=1e-3)
    rng = np.random.default_rng(17)

    def reward(a):
        # a base subgoal in the outer half of the range pays 1
        return ((a[:, 7] > 0) & (a[:, 0] > 0)).astype(np.float32)

    for _ in range(2000):
        maps = rng.random((64, N_CHANNELS, 8, 8)).astype(np.float32)
        vecs = rng.standard_normal((64, TASK_VEC_DIM)).astype(np.float32)
        a = agent.act_raw(maps, vecs, rng=rng)
        batch = {"map": maps, "vec": vecs, "action": a, "reward": reward(a), "done": np.ones(64),
                 "next_map": maps, "next_vec": vecs}
        agent.update(batch, rng)
    maps = rng.random((100, N_CHANNELS, 8, 8)).astype(np.float32)
    vecs = rng.standard_normal((100, TASK_VEC_DIM)).astype(np.float32)
    assert np.mean(reward(agent.act_raw(maps, vecs, deterministic=True))) >= 0.95
