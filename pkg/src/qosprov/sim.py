"""Device volatility emulation and the service disruption rule."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import compute_reward
from .policies import Policy, check_ratio

_EPS = 1e-9

DISRUPTION_RULES = ("available-fraction", "literal")
VOLATILITY_MODELS = ("fixed", "per-execution")


def draw_profiles(n_devices: int, rng: np.random.Generator) -> np.ndarray:
    """Per-device failure probabilities, U(0, 1), fixed for the whole run."""
    return rng.random(n_devices)


def draw_volatility(fail_probability: np.ndarray, blocked: np.ndarray,
                    rng: np.random.Generator, model: str = "fixed") -> np.ndarray:
    """Which allowed devices fail during this execution.

    ``model="per-execution"`` redraws each device's failure threshold from
    U(0, 1) on every call instead of using the fixed profile.
    """
    n = len(fail_probability)
    if model == "per-execution":
        fail_probability = rng.random(n)
    elif model != "fixed":
        raise ValueError(f"unknown volatility model {model!r}")
    return (rng.random(n) < fail_probability) & ~np.asarray(blocked, dtype=bool)


def is_disrupted(blocked, volatile, ratio: float, rule: str = "available-fraction") -> bool:
    """Whether the execution misses its acceptance ratio.

    With ``U`` allowed and ``V`` volatile devices, the default rule disrupts when
    ``U == 0`` or the surviving fraction ``(U - V) / U`` drops below ``ratio``.
    ``rule="literal"`` instead disrupts when ``V / U > ratio``.
    """
    blocked = np.asarray(blocked, dtype=bool)
    used = int(blocked.size - np.count_nonzero(blocked))
    if used == 0:
        return True
    failed = int(np.count_nonzero(volatile))
    if rule == "available-fraction":
        return (used - failed) < ratio * used - _EPS
    if rule == "literal":
        return failed > ratio * used + _EPS
    raise ValueError(f"unknown disruption rule {rule!r}")


@dataclass
class ExecutionRecord:
    step: int
    blocked: np.ndarray
    volatile: np.ndarray
    disrupted: bool
    reward: Optional[int]
    decision_latency: float  # seconds


@dataclass
class Cluster:
    fail_probability: np.ndarray
    ratio: float
    rng: np.random.Generator
    disruption_rule: str = "available-fraction"
    volatility_model: str = "fixed"

    def __post_init__(self):
        check_ratio(self.ratio)
        if self.disruption_rule not in DISRUPTION_RULES:
            raise ValueError(f"unknown disruption rule {self.disruption_rule!r}")
        if self.volatility_model not in VOLATILITY_MODELS:
            raise ValueError(f"unknown volatility model {self.volatility_model!r}")
        self.fail_probability = np.asarray(self.fail_probability, dtype=np.float64)
        self.step = 0

    @property
    def n_devices(self) -> int:
        return len(self.fail_probability)


def run_execution(cluster: Cluster, policy: Policy) -> ExecutionRecord:
    t0 = time.perf_counter()
    blocked = policy.decide()
    latency = time.perf_counter() - t0
    volatile = draw_volatility(cluster.fail_probability, blocked, cluster.rng,
                               cluster.volatility_model)
    disrupted = is_disrupted(blocked, volatile, cluster.ratio, cluster.disruption_rule)
    policy.update(volatile, disrupted)
    reward = compute_reward(blocked, disrupted) if hasattr(policy, "agent") else None
    record = ExecutionRecord(cluster.step, blocked, volatile, disrupted, reward, latency)
    cluster.step += 1
    return record


@dataclass
class RunTrace:
    """Compact per-execution outcome of a whole run."""

    disrupted: np.ndarray
    latency: np.ndarray
    n_blocked: np.ndarray

    @property
    def error_ratio(self) -> float:
        return float(self.disrupted.mean()) if len(self.disrupted) else 0.0


def simulate(cluster: Cluster, policy: Policy, executions: int) -> RunTrace:
    """Drive ``policy`` for ``executions`` consecutive service executions."""
    disrupted = np.zeros(executions, dtype=bool)
    latency = np.zeros(executions)
    n_blocked = np.zeros(executions, dtype=np.int32)
    fail_p, rng, ratio = cluster.fail_probability, cluster.rng, cluster.ratio
    model, rule = cluster.volatility_model, cluster.disruption_rule
    clock = time.perf_counter
    for k in range(executions):
        t0 = clock()
        blocked = policy.decide()
        latency[k] = clock() - t0
        volatile = draw_volatility(fail_p, blocked, rng, model)
        hit = is_disrupted(blocked, volatile, ratio, rule)
        policy.update(volatile, hit)
        disrupted[k] = hit
        n_blocked[k] = np.count_nonzero(blocked)
    cluster.step += executions
    return RunTrace(disrupted, latency, n_blocked)
