"""Experiment sweeps over cluster sizes, acceptance ratios and policies.

Each (size, ratio, policy) cell is one independent simulation run. Random
streams are derived from the master seed by hashing, so a cell's outcome does
not depend on which other cells are in the sweep or on execution order. Device
failure profiles depend only on (seed, size) and per-execution volatility draws
only on (seed, size, ratio): every policy faces the same devices and the same
failure coin flips.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .dqn import AgentConfig, DqnAgent
from .errors import InsufficientSamples
from .nn import MlpNetwork
from .policies import DrlPolicy, RndPolicy, TelPolicy, check_ratio
from .sim import Cluster, RunTrace, draw_profiles, simulate

log = logging.getLogger(__name__)

POLICIES = ("drl", "tel", "rnd")
CSV_HEADER = ["policy", "devices", "acceptance_ratio", "executions", "seed", "error_ratio",
              "latency_mean_us", "latency_std_us"]
SERIES_HEADER = ["step", "running_avg"]
DEFAULT_RATIOS = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3)


def default_agent_config() -> AgentConfig:
    """Agent settings used for sweeps.

    The step counter is divided by the 100k-execution horizon so the input
    stays within [0, 1] over a full run.
    """
    return AgentConfig(learning_rate=0.005, step_norm=100_000.0)


@dataclass
class ExperimentSpec:
    sizes: Sequence[int] = (5, 10, 15)
    ratios: Sequence[float] = DEFAULT_RATIOS
    executions: int = 100_000
    policies: Sequence[str] = POLICIES
    seed: int = 0
    window: Optional[int] = None
    agent: AgentConfig = field(default_factory=default_agent_config)
    disruption_rule: str = "available-fraction"
    volatility_model: str = "fixed"
    tel_smoothing: bool = False
    record_latency: bool = False
    max_series_points: int = 5000
    workers: int = 1

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        self.ratios = [round(float(r), 10) for r in self.ratios]
        self.policies = [p.lower() for p in self.policies]
        if self.executions < 1:
            raise ValueError(f"executions must be >= 1, got {self.executions}")
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError(f"cluster sizes must be >= 1, got {self.sizes}")
        for r in self.ratios:
            check_ratio(r)
        for p in self.policies:
            if p not in POLICIES:
                raise ValueError(f"unknown policy {p!r}; expected one of {POLICIES}")
        if self.window is not None and self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")

    def cells(self) -> list[tuple[str, int, float]]:
        return [(p, n, r) for n in self.sizes for r in self.ratios for p in self.policies]


@dataclass
class RunSummary:
    policy: str
    devices: int
    acceptance_ratio: float
    executions: int
    seed: int
    error_ratio: Optional[float]
    latency_mean_us: Optional[float] = None
    latency_std_us: Optional[float] = None
    status: str = "ok"
    message: str = ""
    wall_time_s: float = field(default=0.0, compare=False)
    series: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    agent: Optional[DqnAgent] = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> tuple:
        return (self.policy, self.devices, self.acceptance_ratio)


def derive_seed(master: int, *parts) -> int:
    """Stable 64-bit child seed from the master seed and a path of labels."""
    label = "/".join([str(int(master))] + [f"{p:.6g}" if isinstance(p, float) else str(p)
                                           for p in parts])
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")


def stream(master: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))


def cell_profiles(seed: int, size: int) -> np.ndarray:
    return draw_profiles(size, stream(seed, size, "profiles"))


def build_cluster(spec: ExperimentSpec, size: int, ratio: float,
                  profiles: Optional[np.ndarray] = None) -> Cluster:
    if profiles is None:
        profiles = cell_profiles(spec.seed, size)
    return Cluster(profiles, ratio, stream(spec.seed, size, ratio, "volatility"),
                   spec.disruption_rule, spec.volatility_model)


def build_policy(spec: ExperimentSpec, policy: str, size: int, ratio: float,
                 network: Optional[MlpNetwork] = None):
    rng = stream(spec.seed, size, ratio, policy, "policy")
    if policy == "tel":
        return TelPolicy(size, ratio, rng, spec.tel_smoothing)
    if policy == "rnd":
        return RndPolicy(size, ratio, rng)
    if policy == "drl":
        agent = DqnAgent(size, spec.agent,
                         init_rng=stream(spec.seed, size, ratio, policy, "init"),
                         rng=rng,
                         replay_rng=stream(spec.seed, size, ratio, policy, "replay"),
                         eval_net=network.clone() if network is not None else None)
        return DrlPolicy(agent)
    raise ValueError(f"unknown policy {policy!r}")


def running_average(flags, window: Optional[int] = None) -> np.ndarray:
    """Cumulative mean of the flags, or the mean of the last ``window`` flags."""
    x = np.asarray(flags, dtype=np.float64)
    if x.size == 0:
        raise ValueError("running average of an empty series")
    csum = np.cumsum(x)
    k = np.arange(1, x.size + 1)
    if window is None:
        return csum / k
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    lagged = np.concatenate([np.zeros(window), csum[:-window]]) if x.size > window else \
        np.zeros(x.size)
    return (csum - lagged[: x.size]) / np.minimum(k, window)


def downsample(series: np.ndarray, max_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Evenly spaced subset (always keeping the last point); returns (steps, values)."""
    n = len(series)
    if n <= max_points:
        steps = np.arange(n)
    else:
        steps = np.unique(np.linspace(0, n - 1, max_points).round().astype(np.int64))
    return steps, series[steps]


def latency_stats(latencies, warmup: int = 10) -> tuple[float, float]:
    """Mean and sample standard deviation after dropping ``warmup`` leading samples."""
    x = np.asarray(latencies, dtype=np.float64)[warmup:]
    if x.size < 1:
        raise InsufficientSamples(f"no latency samples left after {warmup} warmups")
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return float(np.mean(x)), std


def run_cell(spec: ExperimentSpec, policy: str, size: int, ratio: float,
             network: Optional[MlpNetwork] = None) -> tuple[RunSummary, RunTrace]:
    t0 = time.perf_counter()
    cluster = build_cluster(spec, size, ratio)
    pol = build_policy(spec, policy, size, ratio, network)
    trace = simulate(cluster, pol, spec.executions)
    mean, std = latency_stats(trace.latency, warmup=min(10, spec.executions - 1))
    summary = RunSummary(policy, size, ratio, spec.executions, spec.seed, trace.error_ratio,
                         mean * 1e6, std * 1e6,
                         wall_time_s=time.perf_counter() - t0,
                         series=running_average(trace.disrupted, spec.window),
                         agent=getattr(pol, "agent", None))
    return summary, trace


def _run_cell_safe(args) -> RunSummary:
    spec, policy, size, ratio = args
    try:
        summary, _ = run_cell(spec, policy, size, ratio)
        summary.agent = None  # keep results cheap to pickle
        return summary
    except Exception as exc:  # a failed cell must not abort the sweep
        log.exception("run %s/%s/%s failed", policy, size, ratio)
        return RunSummary(policy, size, ratio, spec.executions, spec.seed, None,
                          status="failed", message=f"{type(exc).__name__}: {exc}")


def run_experiment(spec: ExperimentSpec, progress=None) -> list[RunSummary]:
    """Run every cell of the sweep; results come back sorted by (policy, size, ratio)."""
    jobs = [(spec, p, n, r) for p, n, r in spec.cells()]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = []
            for s in pool.map(_run_cell_safe, jobs):
                results.append(s)
                if progress:
                    progress(s)
    else:
        results = []
        for job in jobs:
            s = _run_cell_safe(job)
            results.append(s)
            if progress:
                progress(s)
    return sorted(results, key=lambda s: s.key)


@dataclass
class BenchResult:
    policy: str
    devices: int
    mean_ms: float
    std_ms: float
    decisions: list = field(repr=False, default_factory=list)


def benchmark(spec: ExperimentSpec, warmup: int = 10, repetitions: int = 100,
              ratio: Optional[float] = None) -> list[BenchResult]:
    """Time ``repetitions`` decisions per (policy, size) after ``warmup`` untimed ones."""
    ratio = spec.ratios[0] if ratio is None else ratio
    results = []
    for size in spec.sizes:
        for policy in spec.policies:
            cluster = build_cluster(spec, size, ratio)
            pol = build_policy(spec, policy, size, ratio)
            decisions = []
            orig_decide = pol.decide

            def decide(_orig=orig_decide, _log=decisions):
                blocked = _orig()
                _log.append(tuple(bool(b) for b in blocked))
                return blocked

            pol.decide = decide
            trace = simulate(cluster, pol, warmup + repetitions)
            mean, std = latency_stats(trace.latency, warmup)
            results.append(BenchResult(policy, size, mean * 1e3, std * 1e3, decisions))
    return results


def _fmt(x: Optional[float], digits: int) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.{digits}f}"


def _row(s: RunSummary, include_latency: bool) -> list[str]:
    return [s.policy, str(s.devices), str(s.acceptance_ratio), str(s.executions),
            str(s.seed), _fmt(s.error_ratio, 6),
            _fmt(s.latency_mean_us, 3) if include_latency else "",
            _fmt(s.latency_std_us, 3) if include_latency else ""]


def summaries_to_csv(summaries: Iterable[RunSummary], include_latency: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in sorted(summaries, key=lambda s: s.key):
        w.writerow(_row(s, include_latency))
    return buf.getvalue()


def _json_record(s: RunSummary, include_latency: bool) -> dict:
    rec = {k: getattr(s, k) for k in CSV_HEADER}
    if not include_latency:
        rec["latency_mean_us"] = rec["latency_std_us"] = None
    rec["status"] = s.status
    rec["message"] = s.message
    return rec


def export_results(summaries: Iterable[RunSummary], fmt: str, path,
                   include_latency: bool = True) -> Path:
    path = Path(path)
    summaries = sorted(summaries, key=lambda s: s.key)
    if fmt.lower() == "csv":
        path.write_text(summaries_to_csv(summaries, include_latency))
    elif fmt.lower() == "json":
        records = [_json_record(s, include_latency) for s in summaries]
        path.write_text(json.dumps(records, indent=2) + "\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}; expected csv or json")
    return path


def load_json_results(path) -> list[RunSummary]:
    names = {f.name for f in fields(RunSummary)}
    return [RunSummary(**{k: v for k, v in rec.items() if k in names})
            for rec in json.loads(Path(path).read_text())]


def write_series(summary: RunSummary, directory, max_points: int = 5000) -> Optional[Path]:
    if summary.series is None:
        return None
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{summary.policy}_n{summary.devices}_a{summary.acceptance_ratio}.csv"
    steps, values = downsample(summary.series, max_points)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        w.writerows((int(k), f"{v:.6f}") for k, v in zip(steps, values))
    return path


def spec_as_dict(spec: ExperimentSpec) -> dict:
    d = asdict(replace(spec))
    d["sizes"], d["ratios"], d["policies"] = list(spec.sizes), list(spec.ratios), list(spec.policies)
    return d
