"""Masked deep Q-learning admission agent.

Each call to :meth:`DqnAgent.decide` runs one iteration of the decision loop:
record the outcome of the previous execution, store the transition, train the
evaluation network on a replay batch, then pick the next allow/block action
under the validity mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from . import core
from .core import EnvironmentState
from .nn import MlpNetwork, TrainingConfig


@dataclass(frozen=True)
class Experience:
    env: np.ndarray
    next_env: np.ndarray
    action: int
    reward: float
    next_mask: np.ndarray


class ReplayMemory:
    """Bounded experience store with uniformly random eviction.

    Entries live in preallocated arrays, so insertion order is not kept: an
    evicted slot is simply overwritten by the newcomer.
    """

    def __init__(self, capacity: int = 100_000, rng: Optional[np.random.Generator] = None):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng()
        self._size = 0
        self._env = self._next_env = self._next_mask = None
        self._action = np.empty(0, dtype=np.intp)
        self._reward = np.empty(0)

    def __len__(self) -> int:
        return self._size

    def _allocate(self, exp: Experience) -> None:
        # grow geometrically rather than reserving `capacity` rows up front
        cap = min(self.capacity, max(64, 2 * len(self._action)))
        obs_len, mask_len = len(exp.env), len(exp.next_mask)

        def grow(old, shape, dtype):
            new = np.zeros(shape, dtype=dtype)
            if old is not None:
                new[: self._size] = old[: self._size]
            return new

        self._env = grow(self._env, (cap, obs_len), np.float64)
        self._next_env = grow(self._next_env, (cap, obs_len), np.float64)
        self._next_mask = grow(self._next_mask, (cap, mask_len), bool)
        self._action = grow(self._action, cap, np.intp)
        self._reward = grow(self._reward, cap, np.float64)

    def push(self, exp: Experience) -> Optional[int]:
        """Insert ``exp``; when full, first evict one uniformly chosen entry.

        Returns the evicted slot index, or None when nothing was evicted.
        """
        evicted = None
        if self._size == self.capacity:
            slot = evicted = int(self.rng.integers(self._size))
        else:
            if self._size == len(self._action):
                self._allocate(exp)
            slot = self._size
            self._size += 1
        self._env[slot] = exp.env
        self._next_env[slot] = exp.next_env
        self._action[slot] = exp.action
        self._reward[slot] = exp.reward
        self._next_mask[slot] = exp.next_mask
        return evicted

    def __getitem__(self, i: int) -> Experience:
        if not 0 <= i < self._size:
            raise IndexError(i)
        return Experience(self._env[i].copy(), self._next_env[i].copy(), int(self._action[i]),
                          float(self._reward[i]), self._next_mask[i].copy())

    def __iter__(self) -> Iterator[Experience]:
        return (self[i] for i in range(self._size))

    def sample(self, batch_size: int):
        """Uniform draw with replacement; returns column arrays."""
        idx = self.rng.integers(0, self._size, size=batch_size)
        return (self._env[idx], self._next_env[idx], self._action[idx],
                self._reward[idx], self._next_mask[idx])


def remember(memory: ReplayMemory, exp: Experience) -> None:
    memory.push(exp)


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    """Index of the largest mask-valid value; ties go to the lowest index."""
    return int(np.argmax(np.where(mask, q, -np.inf)))


def select_action(q: np.ndarray, mask: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy choice restricted to mask-valid actions.

    One uniform draw decides explore vs exploit; exploring consumes a second
    draw to pick among valid indices.
    """
    if epsilon > 0.0 and rng.random() < epsilon:
        valid = np.flatnonzero(mask)
        return int(valid[rng.integers(len(valid))])
    return masked_argmax(q, mask)


def q_target(reward: float, next_q: np.ndarray, next_mask: np.ndarray, gamma: float) -> float:
    return float(reward + gamma * np.max(np.where(next_mask, next_q, -np.inf)))


def q_targets(rewards: np.ndarray, next_q: np.ndarray, next_masks: np.ndarray,
              gamma: float) -> np.ndarray:
    """Row-wise :func:`q_target` for a batch."""
    return rewards + gamma * np.where(next_masks, next_q, -np.inf).max(axis=1)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.1
    batch_size: int = 10
    start_size: int = 10
    memory_capacity: int = 100_000
    target_sync_period: int = 100
    epsilon_start: float = 0.1
    epsilon_min: float = 0.01
    epsilon_decay: float = 0.999
    greedy: bool = False
    learning_rate: float = 0.001
    hidden_width: int = 150
    hidden_layers: int = 1
    activation: str = "relu"
    step_norm: float = 1.0
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        for name in ("batch_size", "memory_capacity", "target_sync_period", "hidden_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.start_size < 0 or self.hidden_layers < 0:
            raise ValueError("start_size and hidden_layers must be non-negative")
        if not 0.0 <= self.epsilon_min <= 1.0 or not 0.0 <= self.epsilon_start <= 1.0:
            raise ValueError("epsilon values must lie in [0, 1]")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError(f"epsilon_decay must be in (0, 1], got {self.epsilon_decay}")
        if self.step_norm <= 0 or self.reward_scale <= 0:
            raise ValueError("step_norm and reward_scale must be positive")
        TrainingConfig(self.learning_rate, self.batch_size)

    @property
    def training(self) -> TrainingConfig:
        return TrainingConfig(self.learning_rate, self.batch_size)

    def layer_sizes(self, n_devices: int) -> list[int]:
        return ([n_devices + 2] + [self.hidden_width] * self.hidden_layers
                + [core.n_actions(n_devices)])


@dataclass
class DqnAgent:
    """Stateful decision loop for one cluster.

    ``init_rng`` seeds the network weights; ``rng`` drives exploration and
    ``replay_rng`` drives replay eviction and batch sampling.
    """

    n_devices: int
    config: AgentConfig = field(default_factory=AgentConfig)
    init_rng: Optional[np.random.Generator] = None
    rng: Optional[np.random.Generator] = None
    replay_rng: Optional[np.random.Generator] = None
    eval_net: Optional[MlpNetwork] = None

    def __post_init__(self):
        if self.n_devices < 1:
            raise ValueError("n_devices must be >= 1")
        cfg = self.config
        self.init_rng = self.init_rng if self.init_rng is not None else np.random.default_rng()
        self.rng = self.rng if self.rng is not None else np.random.default_rng()
        self.replay_rng = self.replay_rng if self.replay_rng is not None else np.random.default_rng()
        if self.eval_net is None:
            self.eval_net = MlpNetwork.create(cfg.layer_sizes(self.n_devices), self.init_rng,
                                              cfg.activation)
        elif self.eval_net.layer_sizes[0] != self.n_devices + 2 or \
                self.eval_net.layer_sizes[-1] != core.n_actions(self.n_devices):
            raise ValueError(f"network {self.eval_net.layer_sizes} does not fit "
                             f"{self.n_devices} devices")
        self.target_net = self.eval_net.clone()
        self.memory = ReplayMemory(cfg.memory_capacity, self.replay_rng)
        self.epsilon = 0.0 if cfg.greedy else cfg.epsilon_start
        self.train_steps = 0
        self.env = EnvironmentState.initial(self.n_devices)
        self.next_env = replace(self.env, step=1)
        self.action: Optional[int] = None
        self.last_loss: Optional[float] = None
        self.last_reward: Optional[int] = None

    def encode(self, state: EnvironmentState) -> np.ndarray:
        return core.encode_observation(state, self.config.step_norm)

    def q_values(self, state: EnvironmentState) -> np.ndarray:
        return self.eval_net.forward(self.encode(state))

    def select_action(self, state: EnvironmentState) -> int:
        mask = core.generate_mask(state)
        return select_action(self.q_values(state), mask, self.epsilon, self.rng)

    def train_step(self) -> Optional[float]:
        cfg = self.config
        if len(self.memory) <= cfg.start_size:
            return None
        env, next_env, actions, rewards, next_masks = self.memory.sample(cfg.batch_size)
        next_q = self.target_net.forward(next_env)
        targets = q_targets(rewards * cfg.reward_scale, next_q, next_masks, cfg.gamma)
        loss = self.eval_net.train_batch(env, targets, actions, cfg.training)
        self.train_steps += 1
        if self.train_steps % cfg.target_sync_period == 0:
            self.target_net.copy_from(self.eval_net)
        return loss

    def decide(self, prev_disrupted: bool = False) -> tuple[bool, ...]:
        """Run one loop iteration and return the blocked vector for the next execution.

        The first call has no prior action, so it stores no experience and
        ignores ``prev_disrupted``.
        """
        if self.action is not None:
            self.next_env = replace(self.next_env, failed=bool(prev_disrupted))
            reward = core.compute_reward(self.next_env.blocked, self.next_env.failed)
            self.last_reward = reward
            next_mask = core.generate_mask(self.next_env)
            self.memory.push(Experience(self.encode(self.env), self.encode(self.next_env),
                                        self.action, reward, next_mask))
            self.last_loss = self.train_step()
            self.env = self.next_env
        self.action = self.select_action(self.env)
        self.next_env = core.apply_action(self.env, self.action)
        if not self.config.greedy:
            self.epsilon = max(self.config.epsilon_min, self.epsilon * self.config.epsilon_decay)
        return self.next_env.blocked
