"""Double-DQN feature-masking agent with prioritized experience replay.

One action per training step: pick a single input feature, zero it for
that step's forward pass, and collect the negative prediction loss as
the reward. Features the agent rarely masks are the important ones; the
ranking is the ascending mask-count order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import Tensor

GAMMA = 0.95
BUFFER_CAPACITY = 10_000
REPLAY_BATCH = 64
TARGET_SYNC_EVERY = 100
PER_ALPHA = 0.6
PER_BETA_START = 0.4
PER_BETA_END = 1.0
PRIORITY_EPS = 1e-6
HIDDEN_UNITS = 128


@dataclass
class MaskState:
    """Binary feature masks with at most one zero across both blocks."""
    m_temp: np.ndarray
    m_spatial: np.ndarray
    action: int | None

    @classmethod
    def all_ones(cls, f_t, f_s):
        return cls(np.ones(f_t), np.ones(f_s), None)


def apply_mask(action, f_t, f_s):
    """Mask the single feature selected by `action` (temporal-first order)."""
    if not 0 <= action < f_t + f_s:
        raise ValueError(f"action {action} outside [0, {f_t + f_s})")
    mask = MaskState.all_ones(f_t, f_s)
    if action < f_t:
        mask.m_temp[action] = 0.0
    else:
        mask.m_spatial[action - f_t] = 0.0
    mask.action = action
    return mask


def build_state(feature_tensors):
    """State vector: batch/time mean of temporal features, batch mean of
    spatial features, concatenated."""
    if not feature_tensors:
        raise ValueError("empty batch")
    temp = np.concatenate([ft.temporal.reshape(-1, ft.temporal.shape[-1])
                           for ft in feature_tensors], axis=0)
    spat = np.concatenate([ft.spatial for ft in feature_tensors], axis=0)
    return np.concatenate([temp.mean(axis=0), spat.mean(axis=0)])


def compute_reward(loss):
    if not np.isfinite(loss):
        raise ValueError("non-finite prediction loss")
    return -float(loss)


@dataclass
class EpsilonSchedule:
    start: float = 1.0
    decay: float = 0.995
    minimum: float = 0.05
    steps: int = 0

    def value(self, n=None):
        n = self.steps if n is None else n
        return max(self.minimum, self.start * self.decay ** n)

    def advance(self):
        eps = self.value()
        self.steps += 1
        return eps


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    priority: float


class ReplayBuffer:
    """Proportional prioritized replay: P(i) ∝ priority_i ** alpha."""

    def __init__(self, capacity=BUFFER_CAPACITY, alpha=PER_ALPHA):
        self.capacity = capacity
        self.alpha = alpha
        self.items = []
        self._next = 0

    def __len__(self):
        return len(self.items)

    def push(self, transition):
        if transition.priority <= 0:
            raise ValueError("priority must be positive")
        if len(self.items) < self.capacity:
            self.items.append(transition)
        else:
            self.items[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def probabilities(self):
        prios = np.array([t.priority for t in self.items]) ** self.alpha
        return prios / prios.sum()

    def sample(self, batch_size, beta, rng):
        """Returns (transitions, importance weights, indices).

        Weights are (N * P(i))^-beta normalized by their max. A batch
        larger than the buffer samples with replacement (it always
        samples with replacement, matching proportional selection).
        """
        if not self.items:
            raise ValueError("replay buffer is empty")
        probs = self.probabilities()
        idx = rng.choice(len(self.items), size=batch_size, p=probs)
        weights = (len(self.items) * probs[idx]) ** (-beta)
        weights = weights / weights.max()
        return [self.items[i] for i in idx], weights, idx

    def update_priorities(self, indices, priorities):
        for i, p in zip(indices, priorities):
            self.items[i].priority = float(p)


class QNetwork:
    """MLP (F,) -> 128 -> 128 -> (F,) with ReLU hidden activations."""

    def __init__(self, n_features, hidden=HIDDEN_UNITS, seed=0):
        rng = np.random.default_rng(seed)
        sizes = [n_features, hidden, hidden, n_features]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound,
                                                   (fan_in, fan_out)),
                                       requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def trainable(self):
        return self.weights + self.biases

    def forward(self, states):
        """states: (B, F) or (F,) -> Q-values of the same leading shape."""
        x = Tensor(np.atleast_2d(np.asarray(states, dtype=float)))
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = nc.matmul(x, w) + b
            if k < len(self.weights) - 1:
                x = nc.relu(x)
        return x

    def q_values(self, state):
        return self.forward(state).data[0]

    def copy_from(self, other):
        for dst, src in zip(self.trainable(), other.trainable()):
            dst.data = src.data.copy()

    def state_dict(self):
        return {"weights": [w.data.copy() for w in self.weights],
                "biases": [b.data.copy() for b in self.biases]}

    def load_state_dict(self, state):
        for w, data in zip(self.weights, state["weights"]):
            w.data = data.copy()
        for b, data in zip(self.biases, state["biases"]):
            b.data = data.copy()


def argmax_lowest_index(values):
    return int(np.argmax(values))  # np.argmax already ties to lowest index


def select_action(state, online, epsilon, rng, n_actions):
    """ε-greedy: uniform with prob ε, else greedy on online Q-values."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon outside [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(n_actions))
    return argmax_lowest_index(online.q_values(state))


def ddqn_target(reward, next_state, gamma, online, target):
    """Online net selects the next action, target net evaluates it."""
    a_star = argmax_lowest_index(online.q_values(next_state))
    return reward + gamma * float(target.q_values(next_state)[a_star])


@dataclass
class MaskCounter:
    counts: np.ndarray
    total: int = 0

    @classmethod
    def zeros(cls, n_features):
        return cls(np.zeros(n_features, dtype=np.int64))

    def record(self, action):
        self.counts[action] += 1
        self.total += 1


def ranking(counter, feature_names):
    """Features sorted ascending by mask count (least masked first = most
    important); registry order breaks ties. Returns
    (rank, name, count, fraction) rows."""
    if counter.total <= 0:
        raise ValueError("no recorded actions")
    order = np.argsort(counter.counts, kind="stable")
    rows = []
    for rank, k in enumerate(order, start=1):
        rows.append((rank, feature_names[k], int(counter.counts[k]),
                     counter.counts[k] / counter.total))
    return rows


def write_ranking_csv(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rank,feature_name,mask_count,mask_fraction\n")
        for rank, name, count, frac in rows:
            fh.write(f"{rank},{name},{count},{frac!r}\n")


class Agent:
    """Bundles the DDQN pieces and the training-side bookkeeping."""

    def __init__(self, n_features, seed=0, gamma=GAMMA,
                 capacity=BUFFER_CAPACITY, batch_size=REPLAY_BATCH,
                 sync_every=TARGET_SYNC_EVERY, lr=1e-3,
                 total_steps_hint=10_000):
        self.n_features = n_features
        self.gamma = gamma
        self.batch_size = batch_size
        self.sync_every = sync_every
        self.rng = np.random.default_rng(seed)
        self.online = QNetwork(n_features, seed=seed)
        self.target = QNetwork(n_features, seed=seed)
        self.target.copy_from(self.online)
        self.buffer = ReplayBuffer(capacity)
        self.schedule = EpsilonSchedule()
        self.counter = MaskCounter.zeros(n_features)
        self.optimizer = nc.Adam(self.online.trainable(), lr=lr)
        self.updates = 0
        self.total_steps_hint = max(1, total_steps_hint)

    def beta(self):
        frac = min(1.0, self.updates / self.total_steps_hint)
        return PER_BETA_START + frac * (PER_BETA_END - PER_BETA_START)

    def act(self, state):
        eps = self.schedule.advance()
        action = select_action(state, self.online, eps, self.rng,
                               self.n_features)
        self.counter.record(action)
        return action, eps

    def observe(self, state, action, reward, next_state):
        prio = max(t.priority for t in self.buffer.items) \
            if self.buffer.items else 1.0
        self.buffer.push(Transition(state, action, reward, next_state, prio))

    def learn(self):
        """One prioritized DDQN update; returns the mean |TD error|."""
        if not self.buffer.items:
            return None
        batch, weights, idx = self.buffer.sample(self.batch_size,
                                                 self.beta(), self.rng)
        targets = np.array([ddqn_target(t.reward, t.next_state, self.gamma,
                                        self.online, self.target)
                            for t in batch])
        states = np.stack([t.state for t in batch])
        actions = np.array([t.action for t in batch])

        self.optimizer.zero_grad()
        q_all = self.online.forward(states)  # (B, F)
        onehot = np.zeros((len(batch), self.n_features))
        onehot[np.arange(len(batch)), actions] = 1.0
        q_taken = (q_all * onehot).sum(axis=1)
        td = q_taken - Tensor(targets)
        loss = (Tensor(weights) * td * td).mean()
        loss.backward()
        self.optimizer.step()

        abs_td = np.abs(td.data)
        self.buffer.update_priorities(idx, abs_td + PRIORITY_EPS)
        self.updates += 1
        if self.updates % self.sync_every == 0:
            self.target.copy_from(self.online)
        return float(abs_td.mean())

    def state_dict(self):
        return {"online": self.online.state_dict(),
                "target": self.target.state_dict(),
                "counts": self.counter.counts.copy(),
                "total": self.counter.total,
                "schedule_steps": self.schedule.steps,
                "updates": self.updates}

    def load_state_dict(self, state):
        self.online.load_state_dict(state["online"])
        self.target.load_state_dict(state["target"])
        self.counter = MaskCounter(state["counts"].copy(), state["total"])
        self.schedule.steps = state["schedule_steps"]
        self.updates = state["updates"]
