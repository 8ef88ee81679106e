"""State, mask, action and reward algebra shared by every admission policy.

A cluster of ``N`` devices is described by which devices are blocked, whether
the previous service execution was disrupted and a step counter. Devices are
indexed from 0. The action space has ``2N + 1`` entries: ``2i`` allows device
``i``, ``2i + 1`` blocks it and ``2N`` leaves everything unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidAction

POINTS = 10


@dataclass(frozen=True)
class EnvironmentState:
    blocked: tuple[bool, ...]
    failed: bool = False
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocked", tuple(bool(b) for b in self.blocked))
        if len(self.blocked) < 1:
            raise ValueError("a cluster needs at least one device")
        if self.step < 0:
            raise ValueError(f"step must be non-negative, got {self.step}")

    @property
    def n_devices(self) -> int:
        return len(self.blocked)

    @classmethod
    def initial(cls, n_devices: int) -> "EnvironmentState":
        """All devices allowed, no failure, step 0."""
        return cls(blocked=(False,) * n_devices)

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "EnvironmentState":
        """Inverse of :func:`encode_observation` with ``step_norm=1``."""
        *blocked, failed, step = vector
        return cls(tuple(bool(b) for b in blocked), bool(failed), int(step))


def n_actions(n_devices: int) -> int:
    return 2 * n_devices + 1


def noop_action(n_devices: int) -> int:
    return 2 * n_devices


def encode_observation(state: EnvironmentState, step_norm: float = 1.0) -> np.ndarray:
    n = state.n_devices
    obs = np.empty(n + 2)
    obs[:n] = state.blocked
    obs[n] = state.failed
    obs[n + 1] = state.step / step_norm
    return obs


def generate_mask(state: EnvironmentState) -> np.ndarray:
    blocked = np.asarray(state.blocked, dtype=bool)
    mask = np.empty(2 * len(blocked) + 1, dtype=bool)
    mask[0:-1:2] = blocked
    mask[1:-1:2] = ~blocked
    mask[-1] = True
    return mask


def apply_action(state: EnvironmentState, action: int) -> EnvironmentState:
    """Return the state reached by taking ``action``.

    ``failed`` is cleared; the simulator sets it again once the outcome of the
    next execution is known.
    """
    n = state.n_devices
    action = int(action)
    if not 0 <= action <= 2 * n:
        raise InvalidAction(f"action {action} outside [0, {2 * n}]")
    blocked = list(state.blocked)
    if action < 2 * n:
        device, block = divmod(action, 2)
        if blocked[device] == bool(block):
            verb = "block" if block else "allow"
            raise InvalidAction(f"cannot {verb} device {device}: mask forbids action {action}")
        blocked[device] = bool(block)
    return EnvironmentState(tuple(blocked), False, state.step + 1)


def compute_reward(blocked: Sequence[bool], disrupted: bool) -> int:
    if disrupted:
        return -POINTS * len(blocked)
    return POINTS * sum(1 for b in blocked if not b)
