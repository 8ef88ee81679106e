"""Baseline admission policies: telemetry heuristic (TEL) and random (RND).

Every policy exposes the same two calls the simulator needs:
``decide() -> blocked`` before an execution and ``update(volatile, disrupted)``
once its outcome is known. :class:`DrlPolicy` adapts :class:`DqnAgent` to it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .dqn import DqnAgent
from .errors import InvalidAcceptanceRatio

# absorbs binary rounding in products like 10 * 0.3
_EPS = 1e-9


def check_ratio(ratio: float) -> float:
    if not (isinstance(ratio, (int, float)) and 0.0 < ratio <= 1.0):
        raise InvalidAcceptanceRatio(f"acceptance_ratio must be in (0, 1], got {ratio!r}")
    return float(ratio)


def block_count(n_devices: int, ratio: float) -> int:
    """Devices to block: floor(N - N*a)."""
    check_ratio(ratio)
    if n_devices < 1:
        raise ValueError("n_devices must be >= 1")
    return max(0, math.floor(n_devices - n_devices * ratio + _EPS))


@dataclass
class AvailabilityTable:
    """Per-device telemetry counters and the availability estimate built from them.

    With ``smoothing`` the estimate is ``1 - (failures + 1) / (executions + 2)``
    instead of the plain empirical ratio.
    """

    n_devices: int
    smoothing: bool = False
    executions: np.ndarray = field(init=False)
    failures: np.ndarray = field(init=False)
    availability: np.ndarray = field(init=False)

    def __post_init__(self):
        self.executions = np.zeros(self.n_devices, dtype=np.int64)
        self.failures = np.zeros(self.n_devices, dtype=np.int64)
        self.availability = np.ones(self.n_devices)

    def recompute(self) -> None:
        if self.smoothing:
            self.availability = 1.0 - (self.failures + 1) / (self.executions + 2)
        else:
            self.availability = 1.0 - self.failures / np.maximum(1, self.executions)


def tel_decide(table: AvailabilityTable, n_blocked: int, rng: np.random.Generator) -> np.ndarray:
    """Block the ``n_blocked`` least available devices, ties broken at random."""
    n = table.n_devices
    # draw unconditionally so the stream does not depend on whether ties occur
    tiebreak = rng.random(n)
    blocked = np.zeros(n, dtype=bool)
    if n_blocked:
        order = np.lexsort((tiebreak, table.availability))
        blocked[order[:n_blocked]] = True
    return blocked


def tel_update(table: AvailabilityTable, volatile, disrupted: bool) -> AvailabilityTable:
    table.executions += 1
    if disrupted:
        table.failures[np.asarray(volatile, dtype=bool)] += 1
        table.recompute()
    return table


def rnd_decide(n_devices: int, n_blocked: int, rng: np.random.Generator) -> np.ndarray:
    keys = rng.random(n_devices)
    blocked = np.zeros(n_devices, dtype=bool)
    if n_blocked:
        blocked[np.argsort(keys, kind="stable")[:n_blocked]] = True
    return blocked


class Policy(Protocol):
    name: str

    def decide(self) -> np.ndarray: ...

    def update(self, volatile: np.ndarray, disrupted: bool) -> None: ...


class TelPolicy:
    name = "tel"

    def __init__(self, n_devices: int, ratio: float, rng: np.random.Generator,
                 smoothing: bool = False):
        self.n_blocked = block_count(n_devices, ratio)
        self.table = AvailabilityTable(n_devices, smoothing)
        self.rng = rng

    def decide(self) -> np.ndarray:
        return tel_decide(self.table, self.n_blocked, self.rng)

    def update(self, volatile, disrupted: bool) -> None:
        tel_update(self.table, volatile, disrupted)


class RndPolicy:
    name = "rnd"

    def __init__(self, n_devices: int, ratio: float, rng: np.random.Generator):
        self.n_devices = n_devices
        self.n_blocked = block_count(n_devices, ratio)
        self.rng = rng

    def decide(self) -> np.ndarray:
        return rnd_decide(self.n_devices, self.n_blocked, self.rng)

    def update(self, volatile, disrupted: bool) -> None:
        pass


class DrlPolicy:
    name = "drl"

    def __init__(self, agent: DqnAgent):
        self.agent = agent
        self._disrupted = False

    def decide(self) -> np.ndarray:
        return np.array(self.agent.decide(self._disrupted), dtype=bool)

    def update(self, volatile, disrupted: bool) -> None:
        self._disrupted = bool(disrupted)
