"""Double DQN from scratch: numpy MLP, SGD, replay memory, epsilon-greedy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import LearningConfig
from .perception import NUM_ACTIONS
from .simcore import STATE_SIZE

_MAGIC = b"PQOSMLP"


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Immutable flat parameter vector plus the layer sizes it belongs to.

    Layout: for each layer, weights (out x in, row-major) then biases.
    """

    sizes: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size != param_count(self.sizes):
            raise ShapeError(f"{vals.size} values do not fit layer sizes {self.sizes}")
        vals.flags.writeable = False
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.sizes == other.sizes and self.values.tobytes() == other.values.tobytes()

    def to_bytes(self) -> bytes:
        header = _MAGIC + b" " + " ".join(str(s) for s in self.sizes).encode() + b"\n"
        return header + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelParams":
        header, sep, body = data.partition(b"\n")
        parts = header.split()
        if not sep or not parts or parts[0] != _MAGIC:
            raise ShapeError("not a model checkpoint")
        sizes = tuple(int(p) for p in parts[1:])
        if len(body) != 8 * param_count(sizes):
            raise ShapeError(f"checkpoint body has {len(body)} bytes, expected {8 * param_count(sizes)}")
        return cls(sizes, np.frombuffer(body, dtype="<f8").astype(np.float64))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_bytes(Path(path).read_bytes())


def param_count(sizes) -> int:
    return sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))


class Mlp:
    """Fully connected network, ReLU on hidden layers, linear output.

    Parameters live in one flat float64 vector; ``weights``/``biases`` are views.
    """

    def __init__(self, sizes, params: np.ndarray | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ShapeError("need at least input and output sizes")
        n = param_count(self.sizes)
        if params is None:
            params = np.zeros(n)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got shape {params.shape}")
        self.params = params
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        off = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(self.params[off:off + o * i].reshape(o, i))
            off += o * i
            self.biases.append(self.params[off:off + o])
            off += o

    @classmethod
    def initialized(cls, sizes, rng: np.random.Generator) -> "Mlp":
        """Uniform Glorot weights, zero biases."""
        m = cls(sizes)
        for w in m.weights:
            o, i = w.shape
            lim = math.sqrt(6.0 / (i + o))
            w[...] = rng.uniform(-lim, lim, size=(o, i))
        return m

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.params.copy())


def _check_input(m: Mlp, s) -> np.ndarray:
    x = np.asarray(s, dtype=np.float64)
    if x.shape[-1] != m.sizes[0] or x.ndim not in (1, 2):
        raise ShapeError(f"input shape {x.shape} does not match network input {m.sizes[0]}")
    return x


def forward(m: Mlp, s) -> np.ndarray:
    """Q-values for one state (1-D) or a batch of states (2-D)."""
    h = _check_input(m, s)
    last = len(m.weights) - 1
    for k, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def _forward_cached(m: Mlp, x: np.ndarray):
    """Forward pass keeping layer inputs and pre-activations for backprop."""
    acts = [x]
    pre = []
    last = len(m.weights) - 1
    h = x
    for k, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if k < last else z
        acts.append(h)
    return acts, pre


def _gradient(m: Mlp, acts, pre, a: np.ndarray, y: np.ndarray) -> np.ndarray:
    q = acts[-1]
    batch = q.shape[0]
    rows = np.arange(batch)
    delta = np.zeros_like(q)
    delta[rows, a] = 2.0 * (q[rows, a] - y) / batch
    grad = np.empty_like(m.params)
    offsets = []
    off = 0
    for w in m.weights:
        offsets.append(off)
        off += w.size + w.shape[0]
    for k in range(len(m.weights) - 1, -1, -1):
        w = m.weights[k]
        o = offsets[k]
        grad[o:o + w.size] = (delta.T @ acts[k]).ravel()
        grad[o + w.size:o + w.size + w.shape[0]] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ w) * (pre[k - 1] > 0)
    return grad


def backward(m: Mlp, s, td_targets, a_taken) -> np.ndarray:
    """Gradient of mean((Q(s, a_taken) - y)^2) with respect to the flat parameters.

    Only the taken action's output carries error, so the other output rows get zero.
    """
    x = np.atleast_2d(_check_input(m, s))
    y = np.atleast_1d(np.asarray(td_targets, dtype=np.float64))
    a = np.atleast_1d(np.asarray(a_taken, dtype=np.intp))
    if y.shape != (x.shape[0],) or a.shape != (x.shape[0],):
        raise ShapeError("targets and actions must have one entry per state")
    acts, pre = _forward_cached(m, x)
    return _gradient(m, acts, pre, a, y)


def mse_loss(m: Mlp, s, td_targets, a_taken) -> float:
    q = np.atleast_2d(forward(m, s))
    a = np.atleast_1d(np.asarray(a_taken, dtype=np.intp))
    err = q[np.arange(q.shape[0]), a] - np.atleast_1d(td_targets)
    return float(np.mean(err ** 2))


def sgd_update(m: Mlp, grad, lr: float) -> Mlp:
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != m.params.shape:
        raise ShapeError(f"gradient shape {g.shape} != parameter shape {m.params.shape}")
    m.params -= lr * g
    return m


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int, state_size: int = STATE_SIZE):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, state_size))
        self.s_next = np.zeros((self.capacity, state_size))
        self.a = np.zeros(self.capacity, dtype=np.intp)
        self.r = np.zeros(self.capacity)
        self.terminal = np.zeros(self.capacity)
        self.size = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s_next, terminal) -> None:
        i = self.inserted % self.capacity
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.terminal[i] = float(terminal)
        self.inserted += 1
        self.size = min(self.size + 1, self.capacity)

    def push(self, t: Transition) -> None:
        self.add(t.s, t.a, t.r, t.s_next, t.terminal)

    def sample_indices(self, rng: np.random.Generator, k: int) -> np.ndarray:
        """Uniform, with replacement."""
        return rng.integers(0, self.size, size=k)

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        start = self.inserted - self.size
        out = []
        for j in range(start, self.inserted):
            i = j % self.capacity
            out.append(Transition(self.s[i].copy(), int(self.a[i]), float(self.r[i]),
                                  self.s_next[i].copy(), bool(self.terminal[i])))
        return out

    def state_digest(self) -> bytes:
        return b"".join(arr[: self.size].tobytes() for arr in (self.s, self.a, self.r, self.s_next, self.terminal)) \
            + str(self.inserted).encode()


class DdqnAgent:
    def __init__(self, lc: LearningConfig, rng: np.random.Generator,
                 state_size: int = STATE_SIZE, num_actions: int = NUM_ACTIONS):
        self.sizes = (state_size, *lc.hidden_dims, num_actions)
        self.primary = Mlp.initialized(self.sizes, rng)
        self.target = self.primary.copy()
        self.buffer = ReplayBuffer(lc.replay_capacity_transitions, state_size)
        self.gamma = lc.discount
        self.lr = lc.learning_rate
        self.batch_size = lc.batch_size
        self.target_sync_interval = lc.target_sync_interval_steps
        self.learn_step_counter = 0
        self.steps_since_sync = 0


def epsilon_at(episode: int, lc: LearningConfig) -> float:
    """Linear decay from epsilon_start to epsilon_end, then held."""
    if episode < 0:
        raise ValueError("episode must be >= 0")
    decay_end = lc.epsilon_decay_fraction * lc.train_episodes
    if decay_end <= 0:
        return lc.epsilon_end
    frac = min(episode / decay_end, 1.0)
    return lc.epsilon_start + (lc.epsilon_end - lc.epsilon_start) * frac


def greedy(q: np.ndarray) -> int:
    """Argmax with ties going to the lowest index."""
    return int(np.argmax(q))


def act_from_q(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice given the Q-values of one state."""
    if rng.random() < epsilon:
        return int(rng.integers(len(q)))
    return greedy(q)


def act(agent: DdqnAgent, s, epsilon: float, rng: np.random.Generator) -> int:
    return act_from_q(forward(agent.primary, s), epsilon, rng)


def ddqn_targets(agent: DdqnAgent, r, s_next, terminal) -> np.ndarray:
    """y = r for terminal transitions, else r + gamma * Q_target(s', argmax_a Q_primary(s', a))."""
    r = np.asarray(r, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty batch")
    s_next = np.atleast_2d(s_next)
    best = np.argmax(forward(agent.primary, s_next), axis=1)
    q_t = forward(agent.target, s_next)[np.arange(len(best)), best]
    done = np.asarray(terminal, dtype=np.float64)
    return r + agent.gamma * (1.0 - done) * q_t


def sync_target(agent: DdqnAgent) -> None:
    agent.target.params[...] = agent.primary.params
    agent.steps_since_sync = 0


def train_step(agent: DdqnAgent, rng: np.random.Generator) -> float | None:
    """One minibatch SGD update; returns the pre-update loss, or None while warming up."""
    buf = agent.buffer
    if len(buf) < agent.batch_size:
        return None
    idx = buf.sample_indices(rng, agent.batch_size)
    k = len(idx)
    a = buf.a[idx]
    s_next = buf.s_next[idx]
    # one primary pass over s and s' together; rows [k:] pick the bootstrap action
    acts, pre = _forward_cached(agent.primary, np.concatenate((buf.s[idx], s_next)))
    best = np.argmax(acts[-1][k:], axis=1)
    q_t = forward(agent.target, s_next)[np.arange(k), best]
    y = buf.r[idx] + agent.gamma * (1.0 - buf.terminal[idx]) * q_t
    acts = [h[:k] for h in acts]
    pre = [z[:k] for z in pre]
    q = acts[-1][np.arange(k), a]
    loss = float(np.mean((q - y) ** 2))
    sgd_update(agent.primary, _gradient(agent.primary, acts, pre, a, y), agent.lr)
    agent.learn_step_counter += 1
    agent.steps_since_sync += 1
    if agent.learn_step_counter % agent.target_sync_interval == 0:
        sync_target(agent)
    return loss


def snapshot(agent: DdqnAgent) -> ModelParams:
    return ModelParams(agent.sizes, agent.primary.params.copy())


def load_snapshot(agent: DdqnAgent, params: ModelParams, include_target: bool = True) -> None:
    if tuple(params.sizes) != tuple(agent.sizes):
        raise ShapeError(f"snapshot sizes {params.sizes} do not match agent {agent.sizes}")
    agent.primary.params[...] = params.values
    if include_target:
        agent.target.params[...] = params.values
