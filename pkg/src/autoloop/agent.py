"""DDPG curriculum agent: numpy MLPs with manual backprop, replay buffer,
target networks, exploration noise, and the loop-weight schedule machinery
(interpolated weight, EMA loss smoothing, state/reward construction).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class DimensionMismatch(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


class UninitializedEma(RuntimeError):
    pass


# --- curriculum schedule ---------------------------------------------------

@dataclass
class CurriculumState:
    w0: float = 0.1
    wF: float = 1.0
    alpha: float = 0.9
    ema: float | None = None
    progress: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.w0 <= self.wF):
            raise ValueError("need 0 <= w0 <= wF")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must be in (0, 1)")


def curriculum_weight(cs: CurriculumState, a: float) -> float:
    """w = w0 + (wF - w0) * a, with a clamped to [0, 1]."""
    if a < 0.0 or a > 1.0:
        log.warning("action %s outside [0, 1]; clamping", a)
        a = min(max(a, 0.0), 1.0)
    return cs.w0 + (cs.wF - cs.w0) * a


def update_ema(cs: CurriculumState, loop_loss_value: float) -> CurriculumState:
    """ema <- alpha*ema + (1-alpha)*|L|; first call initializes ema = |L|."""
    x = abs(loop_loss_value)
    ema = x if cs.ema is None else cs.alpha * cs.ema + (1.0 - cs.alpha) * x
    return CurriculumState(cs.w0, cs.wF, cs.alpha, ema, cs.progress)


def build_state(cs: CurriculumState) -> np.ndarray:
    if cs.ema is None:
        raise UninitializedEma("EMA not initialized; call update_ema first")
    return np.array([cs.progress, cs.ema])


def reward(cs: CurriculumState) -> float:
    if cs.ema is None:
        raise UninitializedEma("EMA not initialized; call update_ema first")
    return -cs.ema


# --- MLP with manual backprop ----------------------------------------------

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "sigmoid": (lambda x: 1.0 / (1.0 + np.exp(-x)), lambda y: y * (1.0 - y)),
    "linear": (lambda x: x, lambda y: np.ones_like(y)),
}


class Mlp:
    """Fully connected net; activations named per layer ('tanh', 'sigmoid', 'linear')."""

    def __init__(self, sizes, activations, rng=None, scale=None):
        if len(activations) != len(sizes) - 1:
            raise DimensionMismatch("need one activation per weight layer")
        if len(sizes) - 1 > 3:
            raise ValueError("at most 3 weight layers")
        if any(h > 64 for h in sizes[1:-1]):
            raise ValueError("hidden width capped at 64")
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                w = np.zeros((fan_out, fan_in))
            else:
                lim = scale if scale is not None else 1.0 / math.sqrt(fan_in)
                w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def forward(self, x):
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x):
        """Returns (output, cache) with cache holding post-activation values."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise DimensionMismatch(
                f"input dim {x.shape[1]} != expected {self.sizes[0]}")
        acts = [x]
        for w, b, name in zip(self.weights, self.biases, self.activations):
            f, _ = _ACTIVATIONS[name]
            x = f(x @ w.T + b)
            acts.append(x)
        return x, acts

    def backward(self, cache, grad_out):
        """Backprop grad_out (dL/doutput, same shape as output) through the net.

        Returns (weight_grads, bias_grads, grad_input), summed over the batch.
        """
        grad = np.atleast_2d(np.asarray(grad_out, dtype=float))
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.weights)
        for layer in range(len(self.weights) - 1, -1, -1):
            _, dfun = _ACTIVATIONS[self.activations[layer]]
            grad = grad * dfun(cache[layer + 1])
            w_grads[layer] = grad.T @ cache[layer]
            b_grads[layer] = grad.sum(axis=0)
            grad = grad @ self.weights[layer]
        return w_grads, b_grads, grad

    def copy(self):
        out = Mlp(self.sizes, self.activations)
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out

    def params(self):
        return self.weights + self.biases

    def state_dict(self):
        return {
            "sizes": self.sizes,
            "activations": self.activations,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @staticmethod
    def from_state_dict(d):
        net = Mlp(d["sizes"], d["activations"])
        net.weights = [np.array(w, dtype=float) for w in d["weights"]]
        net.biases = [np.array(b, dtype=float) for b in d["biases"]]
        return net


class _Adam:
    """Adam optimizer over a list of parameter arrays (updated in place)."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# --- replay buffer ---------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray
    done: bool = False


class ReplayBuffer:
    """FIFO ring of transitions with seeded uniform sampling (no replacement)."""

    def __init__(self, capacity=5000, seed=0):
        self.capacity = capacity
        self._data = []
        self._head = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self._data)

    def store(self, transition: Transition):
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self._head] = transition
            self._head = (self._head + 1) % self.capacity

    def sample(self, batch: int):
        if len(self._data) < batch:
            raise InsufficientSamples(
                f"buffer holds {len(self._data)} < batch {batch}")
        idx = self.rng.choice(len(self._data), size=batch, replace=False)
        return [self._data[i] for i in idx]


# --- DDPG agent ------------------------------------------------------------

@dataclass
class AgentConfig:
    state_dim: int = 2
    hidden: int = 64
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    noise_sigma_start: float = 0.3
    noise_sigma_end: float = 0.02
    noise_decay_steps: int = 3360
    noise_process: str = "gaussian"   # gaussian | ou
    ou_theta: float = 0.15
    buffer_capacity: int = 5000
    batch_size: int = 64
    train_every: int = 30
    seed: int = 0


class DdpgAgent:
    """Actor 2->h->h->1 (sigmoid out), critic (2+1)->h->h->1 (linear out)."""

    def __init__(self, config: AgentConfig = AgentConfig()):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        h = config.hidden
        self.actor = Mlp([config.state_dim, h, h, 1],
                         ["tanh", "tanh", "sigmoid"], rng=self.rng)
        self.critic = Mlp([config.state_dim + 1, h, h, 1],
                          ["tanh", "tanh", "linear"], rng=self.rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.buffer = ReplayBuffer(config.buffer_capacity, seed=config.seed + 1)
        self._actor_opt = _Adam(self.actor.params(), config.actor_lr)
        self._critic_opt = _Adam(self.critic.params(), config.critic_lr)
        self._noise_step = 0
        self._ou_state = 0.0

    def noise_sigma(self):
        c = self.config
        frac = min(self._noise_step / max(c.noise_decay_steps, 1), 1.0)
        return c.noise_sigma_start + (c.noise_sigma_end - c.noise_sigma_start) * frac

    def select_action(self, state, explore: bool = False) -> float:
        a = float(self.actor.forward(state)[0, 0])
        if not explore:
            return a
        sigma = self.noise_sigma()
        if self.config.noise_process == "ou":
            self._ou_state += (-self.config.ou_theta * self._ou_state
                               + sigma * self.rng.normal())
            noise = self._ou_state
        else:
            noise = sigma * self.rng.normal()
        self._noise_step += 1
        return float(min(max(a + noise, 0.0), 1.0))

    def store(self, transition: Transition):
        self.buffer.store(transition)

    def train_step(self, batch: int | None = None):
        """One DDPG update; returns (critic_loss, actor_objective)."""
        c = self.config
        batch = batch or c.batch_size
        trans = self.buffer.sample(batch)
        states = np.stack([t.state for t in trans])
        actions = np.array([[t.action] for t in trans])
        rewards = np.array([[t.reward] for t in trans])
        done = np.array([[1.0 if t.done else 0.0] for t in trans])
        next_states = np.stack([t.next_state for t in trans])

        # critic: minimize mean squared TD error against frozen targets
        next_actions = self.actor_target.forward(next_states)
        q_next = self.critic_target.forward(
            np.concatenate([next_states, next_actions], axis=1))
        y = rewards + c.gamma * (1.0 - done) * q_next
        sa = np.concatenate([states, actions], axis=1)
        q, cache = self.critic.forward_cached(sa)
        td = q - y
        critic_loss = float(np.mean(td * td))
        w_g, b_g, _ = self.critic.backward(cache, 2.0 * td / batch)
        self._critic_opt.step(w_g + b_g)

        # actor: ascend mean Q(s, mu(s)) -> descend its negative
        mu, actor_cache = self.actor.forward_cached(states)
        sa_mu = np.concatenate([states, mu], axis=1)
        q_mu, critic_cache = self.critic.forward_cached(sa_mu)
        actor_objective = float(np.mean(q_mu))
        _, _, grad_in = self.critic.backward(critic_cache, np.ones_like(q_mu) / batch)
        grad_action = grad_in[:, -1:]          # dQ/da per sample
        w_g, b_g, _ = self.actor.backward(actor_cache, -grad_action)
        self._actor_opt.step(w_g + b_g)

        self._soft_update(self.actor_target, self.actor)
        self._soft_update(self.critic_target, self.critic)
        return critic_loss, actor_objective

    def _soft_update(self, target: Mlp, main: Mlp):
        tau = self.config.tau
        for tp, mp in zip(target.params(), main.params()):
            tp *= 1.0 - tau
            tp += tau * mp

    # --- checkpointing ----------------------------------------------------

    def save(self, path):
        """Versioned JSON checkpoint of all network weights (buffer excluded)."""
        payload = {
            "version": CHECKPOINT_VERSION,
            "config": vars(self.config),
            "actor": self.actor.state_dict(),
            "critic": self.critic.state_dict(),
            "actor_target": self.actor_target.state_dict(),
            "critic_target": self.critic_target.state_dict(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)

    @staticmethod
    def load(path):
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        agent = DdpgAgent(AgentConfig(**payload["config"]))
        agent.actor = Mlp.from_state_dict(payload["actor"])
        agent.critic = Mlp.from_state_dict(payload["critic"])
        agent.actor_target = Mlp.from_state_dict(payload["actor_target"])
        agent.critic_target = Mlp.from_state_dict(payload["critic_target"])
        agent._actor_opt = _Adam(agent.actor.params(), agent.config.actor_lr)
        agent._critic_opt = _Adam(agent.critic.params(), agent.config.critic_lr)
        return agent
