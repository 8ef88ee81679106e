"""YAML experiment configuration with command-line overrides.

Layout::

    experiment:   # devices, ratios, executions, policies, seed, window, ...
    agent:        # AgentConfig fields except step_norm
    sim:          # disruption_rule, volatility_model, step_norm, tel_smoothing

Unknown keys are rejected with their dotted path.
"""
from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .dqn import AgentConfig
from .errors import ConfigError
from .harness import ExperimentSpec, default_agent_config
from .sim import DISRUPTION_RULES, VOLATILITY_MODELS

EXPERIMENT_KEYS = {
    "devices": "sizes", "ratios": "ratios", "executions": "executions",
    "policies": "policies", "seed": "seed", "window": "window", "workers": "workers",
    "record_latency": "record_latency", "max_series_points": "max_series_points",
}
SIM_KEYS = {"disruption_rule", "volatility_model", "step_norm", "tel_smoothing"}
AGENT_KEYS = {f.name for f in fields(AgentConfig)} - {"step_norm"}
SECTIONS = {"experiment": set(EXPERIMENT_KEYS), "agent": AGENT_KEYS, "sim": SIM_KEYS}


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict:
    """Nested merge; values in ``overrides`` win."""
    out = {k: dict(v) if isinstance(v, Mapping) else v for k, v in base.items()}
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def validate_keys(data: Mapping[str, Any]) -> None:
    for section, body in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config key {section!r}")
        if body is None:
            continue
        if not isinstance(body, Mapping):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key in body:
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown config key '{section}.{key}'")


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def build_spec(data: Mapping[str, Any]) -> ExperimentSpec:
    validate_keys(data)
    exp = dict(data.get("experiment") or {})
    sim = dict(data.get("sim") or {})
    agent_over = dict(data.get("agent") or {})
    kwargs: dict[str, Any] = {}
    for key, attr in EXPERIMENT_KEYS.items():
        if key in exp and exp[key] is not None:
            kwargs[attr] = exp[key]
    if exp.get("window") is None:
        kwargs["window"] = None
    for key in ("devices", "ratios", "policies"):
        attr = EXPERIMENT_KEYS[key]
        if attr in kwargs:
            kwargs[attr] = _as_list(kwargs[attr])
    for r in kwargs.get("ratios", []):
        if not isinstance(r, (int, float)) or isinstance(r, bool) or not 0.0 < r <= 1.0:
            raise ConfigError(f"acceptance_ratio must be in (0, 1], got {r!r}")
    for key in ("disruption_rule", "volatility_model", "tel_smoothing"):
        if key in sim:
            kwargs[key] = sim[key]
    try:
        agent = default_agent_config()
        if "step_norm" in sim:
            agent_over["step_norm"] = sim["step_norm"]
        agent = replace(agent, **agent_over)
        kwargs["agent"] = agent
        spec = ExperimentSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if spec.disruption_rule not in DISRUPTION_RULES:
        raise ConfigError(f"sim.disruption_rule must be one of {DISRUPTION_RULES}")
    if spec.volatility_model not in VOLATILITY_MODELS:
        raise ConfigError(f"sim.volatility_model must be one of {VOLATILITY_MODELS}")
    return spec


def effective_config(spec: ExperimentSpec) -> dict:
    """The nested mapping that :func:`build_spec` would turn back into ``spec``."""
    agent = {f.name: getattr(spec.agent, f.name) for f in fields(AgentConfig)}
    step_norm = agent.pop("step_norm")
    return {
        "experiment": {
            "devices": list(spec.sizes), "ratios": list(spec.ratios),
            "executions": spec.executions, "policies": list(spec.policies),
            "seed": spec.seed, "window": spec.window, "workers": spec.workers,
            "record_latency": spec.record_latency,
            "max_series_points": spec.max_series_points,
        },
        "agent": agent,
        "sim": {"disruption_rule": spec.disruption_rule,
                "volatility_model": spec.volatility_model,
                "step_norm": step_norm, "tel_smoothing": spec.tel_smoothing},
    }


def dump_config(spec: ExperimentSpec, path: Optional[Path] = None) -> str:
    text = yaml.safe_dump(effective_config(spec), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
