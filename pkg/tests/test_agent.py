import math

import numpy as np
import pytest

from autoloop import agent as ag
from autoloop.agent import (
    AgentConfig,
    CurriculumState,
    DdpgAgent,
    DimensionMismatch,
    InsufficientSamples,
    Mlp,
    ReplayBuffer,
    Transition,
    UninitializedEma,
)


class TestCurriculum:
    def test_weight_interpolation(self):
        cs = CurriculumState(w0=0.1, wF=1.0)
        assert ag.curriculum_weight(cs, 0.0) == 0.1
        assert ag.curriculum_weight(cs, 1.0) == 1.0
        assert math.isclose(ag.curriculum_weight(cs, 0.5), 0.55, rel_tol=1e-12)

    def test_weight_clamps_action(self):
        cs = CurriculumState()
        assert ag.curriculum_weight(cs, -0.5) == cs.w0
        assert ag.curriculum_weight(cs, 1.5) == cs.wF

    def test_ema_recurrence(self):
        cs = CurriculumState(alpha=0.9)
        cs = ag.update_ema(cs, 2.0)
        assert cs.ema == 2.0  # first observation initializes
        cs = ag.update_ema(cs, -1.0)  # absolute value enters the average
        assert math.isclose(cs.ema, 0.9 * 2.0 + 0.1 * 1.0, rel_tol=1e-12)

    def test_state_and_reward(self):
        cs = CurriculumState()
        with pytest.raises(UninitializedEma):
            ag.build_state(cs)
        with pytest.raises(UninitializedEma):
            ag.reward(cs)
        cs = ag.update_ema(cs, 0.7)
        cs.progress = 0.25
        assert np.allclose(ag.build_state(cs), [0.25, 0.7])
        assert ag.reward(cs) == -0.7

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            CurriculumState(w0=2.0, wF=1.0)
        with pytest.raises(ValueError):
            CurriculumState(alpha=1.0)


class TestMlp:
    def test_shape_limits(self):
        with pytest.raises(ValueError):
            Mlp([2, 64, 64, 64, 1], ["tanh"] * 4)  # 4 weight layers
        with pytest.raises(ValueError):
            Mlp([2, 128, 1], ["tanh", "linear"])   # hidden too wide
        with pytest.raises(DimensionMismatch):
            Mlp([2, 8, 1], ["tanh"])

    def test_input_dim_check(self):
        net = Mlp([3, 8, 1], ["tanh", "linear"], rng=np.random.default_rng(0))
        with pytest.raises(DimensionMismatch):
            net.forward(np.zeros(2))

    def test_backward_fd(self):
        # d(sum of outputs)/d(params) against central differences
        rng = np.random.default_rng(0)
        worst = 0.0
        for seed in range(100):
            r = np.random.default_rng(seed)
            net = Mlp([2, 6, 4, 1], ["tanh", "sigmoid", "linear"], rng=r)
            x = r.normal(size=(5, 2))
            _, cache = net.forward_cached(x)
            w_g, b_g, g_in = net.backward(cache, np.ones((5, 1)))
            h = 1e-6
            for arr, grad in zip(net.params(), w_g + b_g):
                flat = arr.ravel()
                gflat = grad.ravel()
                for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                    old = flat[idx]
                    flat[idx] = old + h
                    up = float(net.forward(x).sum())
                    flat[idx] = old - h
                    down = float(net.forward(x).sum())
                    flat[idx] = old
                    fd = (up - down) / (2 * h)
                    worst = max(worst, abs(fd - gflat[idx])
                                / max(abs(fd), abs(gflat[idx]), 1e-8))
        assert worst < 1e-4

    def test_grad_input_fd(self):
        net = Mlp([3, 8, 1], ["tanh", "linear"], rng=np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(1, 3))
        _, cache = net.forward_cached(x)
        _, _, g_in = net.backward(cache, np.ones((1, 1)))
        h = 1e-6
        for j in range(3):
            xp = x.copy()
            xm = x.copy()
            xp[0, j] += h
            xm[0, j] -= h
            fd = float((net.forward(xp) - net.forward(xm))[0, 0]) / (2 * h)
            assert abs(fd - g_in[0, j]) < 1e-6

    def test_state_dict_roundtrip_exact(self):
        import json
        net = Mlp([2, 8, 1], ["tanh", "sigmoid"], rng=np.random.default_rng(3))
        restored = Mlp.from_state_dict(json.loads(json.dumps(net.state_dict())))
        for a, b in zip(net.params(), restored.params()):
            assert np.array_equal(a, b)

    def test_zero_init_without_rng(self):
        net = Mlp([2, 4, 1], ["tanh", "linear"])
        assert all(np.all(w == 0) for w in net.weights)


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(capacity=3, seed=0)
        for k in range(5):
            buf.store(Transition(np.array([k, 0.0]), 0.0, float(k), np.zeros(2)))
        assert len(buf) == 3
        rewards = sorted(t.reward for t in buf._data)
        assert rewards == [2.0, 3.0, 4.0]

    def test_sample_requires_enough(self):
        buf = ReplayBuffer(capacity=10, seed=0)
        buf.store(Transition(np.zeros(2), 0.0, 0.0, np.zeros(2)))
        with pytest.raises(InsufficientSamples):
            buf.sample(2)

    def test_sampling_deterministic(self):
        def fill(seed):
            buf = ReplayBuffer(capacity=50, seed=seed)
            for k in range(50):
                buf.store(Transition(np.array([k, 0.0]), 0.0, float(k), np.zeros(2)))
            return [t.reward for t in buf.sample(10)]
        assert fill(7) == fill(7)

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(capacity=20, seed=1)
        for k in range(20):
            buf.store(Transition(np.array([k, 0.0]), 0.0, float(k), np.zeros(2)))
        rewards = [t.reward for t in buf.sample(20)]
        assert len(set(rewards)) == 20


class TestDdpgAgent:
    def test_network_shapes(self):
        agent = DdpgAgent(AgentConfig(seed=0))
        assert agent.actor.sizes == [2, 64, 64, 1]
        assert agent.critic.sizes == [3, 64, 64, 1]
        assert agent.actor.activations[-1] == "sigmoid"
        assert agent.critic.activations[-1] == "linear"

    def test_action_range(self):
        agent = DdpgAgent(AgentConfig(seed=1))
        for _ in range(200):
            a = agent.select_action(np.array([0.5, 0.1]), explore=True)
            assert 0.0 <= a <= 1.0

    def test_noise_decay(self):
        agent = DdpgAgent(AgentConfig(seed=2, noise_decay_steps=100))
        assert agent.noise_sigma() == 0.3
        for _ in range(100):
            agent.select_action(np.zeros(2), explore=True)
        assert math.isclose(agent.noise_sigma(), 0.02, rel_tol=1e-9)

    def test_deterministic_without_exploration(self):
        agent = DdpgAgent(AgentConfig(seed=3))
        s = np.array([0.3, 0.4])
        assert agent.select_action(s) == agent.select_action(s)

    def test_critic_gradient_fd(self):
        # analytic critic weight gradient vs finite differences of the TD loss
        rng = np.random.default_rng(4)
        agent = DdpgAgent(AgentConfig(seed=4))
        batch = 8
        states = rng.normal(size=(batch, 2))
        actions = rng.uniform(size=(batch, 1))
        y = rng.normal(size=(batch, 1))
        sa = np.concatenate([states, actions], axis=1)

        def loss():
            q = agent.critic.forward(sa)
            return float(np.mean((q - y) ** 2))

        q, cache = agent.critic.forward_cached(sa)
        w_g, b_g, _ = agent.critic.backward(cache, 2.0 * (q - y) / batch)
        h = 1e-6
        worst = 0.0
        for arr, grad in zip(agent.critic.params(), w_g + b_g):
            flat = arr.ravel()
            gflat = grad.ravel()
            for idx in rng.choice(flat.size, size=min(5, flat.size), replace=False):
                old = flat[idx]
                flat[idx] = old + h
                up = loss()
                flat[idx] = old - h
                down = loss()
                flat[idx] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - gflat[idx])
                            / max(abs(fd), abs(gflat[idx]), 1e-8))
        assert worst < 1e-4

    def test_train_step_runs_and_updates_targets(self):
        agent = DdpgAgent(AgentConfig(seed=5))
        rng = np.random.default_rng(5)
        for _ in range(80):
            s = rng.uniform(size=2)
            agent.store(Transition(s, float(rng.uniform()), float(-rng.uniform()),
                                   rng.uniform(size=2)))
        before = [p.copy() for p in agent.critic_target.params()]
        critic_loss, actor_obj = agent.train_step(64)
        assert np.isfinite(critic_loss) and np.isfinite(actor_obj)
        moved = any(not np.array_equal(a, b)
                    for a, b in zip(before, agent.critic_target.params()))
        assert moved

    def test_convergence_smoke(self):
        # reward -(a - 0.5)^2: the actor should move toward 0.5 quickly
        target = 0.5
        agent = DdpgAgent(AgentConfig(seed=6))
        rng = np.random.default_rng(6)
        state = np.array([0.0, 1.0])
        for step in range(1500):
            a = agent.select_action(state, explore=True)
            r = -(a - target) ** 2
            agent.store(Transition(state, a, r, state))
            if (step + 1) % 10 == 0 and len(agent.buffer) >= 64:
                agent.train_step(64)
        final = agent.select_action(state)
        assert abs(final - target) < 0.15

    def test_checkpoint_roundtrip_exact(self, tmp_path):
        agent = DdpgAgent(AgentConfig(seed=7))
        rng = np.random.default_rng(7)
        for _ in range(80):
            s = rng.uniform(size=2)
            agent.store(Transition(s, 0.5, -0.1, s))
        agent.train_step(64)
        path = tmp_path / "agent.json"
        agent.save(path)
        restored = DdpgAgent.load(path)
        for a, b in zip(agent.actor.params() + agent.critic.params(),
                        restored.actor.params() + restored.critic.params()):
            assert np.array_equal(a, b)
        s = np.array([0.2, 0.8])
        assert agent.select_action(s) == restored.select_action(s)

    def test_checkpoint_version_check(self, tmp_path):
        import json
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"version": 99}))
        with pytest.raises(ValueError):
            DdpgAgent.load(path)

    def test_ou_noise_process(self):
        agent = DdpgAgent(AgentConfig(seed=8, noise_process="ou"))
        for _ in range(50):
            a = agent.select_action(np.zeros(2), explore=True)
            assert 0.0 <= a <= 1.0
        assert agent._ou_state != 0.0
