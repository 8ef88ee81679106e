"""Command-line entry point: ``qosprov run | bench | checkpoint``.

Exit codes: 0 success, 1 at least one run failed, 2 configuration error,
3 I/O or checkpoint format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import harness
from .config import build_spec, dump_config, load_config_file, merge
from .errors import ConfigError, FormatError
from .nn import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("qosprov")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--devices", type=int, nargs="+", help="cluster sizes")
    p.add_argument("--ratio", type=float, nargs="+", help="acceptance ratios")
    p.add_argument("--policy", nargs="+", choices=harness.POLICIES, help="policies to run")
    p.add_argument("--executions", type=int, help="service executions per run")
    p.add_argument("--seed", type=int, help="master seed (random if omitted)")
    p.add_argument("--out-dir", type=Path, default=Path("runs"))
    p.add_argument("--greedy", action="store_true", default=None,
                   help="pure greedy DRL action selection (no exploration)")
    p.add_argument("--disruption-rule", choices=("available-fraction", "literal"))
    p.add_argument("--volatility-model", choices=("fixed", "per-execution"))
    p.add_argument("--window", type=int, help="sliding running-average window")
    p.add_argument("--step-norm", type=float)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--workers", type=int, help="parallel runs")
    p.add_argument("--record-latency", action="store_true", default=None,
                   help="write measured decision latencies into results.csv")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qosprov", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run an experiment sweep"))
    bench = sub.add_parser("bench", help="time policy decisions")
    _add_common(bench)
    bench.add_argument("--warmup", type=int, default=10)
    bench.add_argument("--repetitions", type=int, default=100)
    ck = sub.add_parser("checkpoint", help="save or resume DRL network weights")
    ck.add_argument("action", choices=("save", "load"))
    ck.add_argument("path", type=Path)
    _add_common(ck)
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    exp, sim, agent = {}, {}, {}
    for flag, key in (("devices", "devices"), ("ratio", "ratios"), ("policy", "policies"),
                      ("executions", "executions"), ("seed", "seed"), ("window", "window"),
                      ("workers", "workers"), ("record_latency", "record_latency")):
        value = getattr(args, flag, None)
        if value is not None:
            exp[key] = value
    for flag in ("disruption_rule", "volatility_model", "step_norm"):
        if getattr(args, flag, None) is not None:
            sim[flag] = getattr(args, flag)
    if args.greedy:
        agent["greedy"] = True
    if args.learning_rate is not None:
        agent["learning_rate"] = args.learning_rate
    return {k: v for k, v in (("experiment", exp), ("sim", sim), ("agent", agent)) if v}


def resolve_spec(args: argparse.Namespace) -> harness.ExperimentSpec:
    data = load_config_file(args.config) if args.config else {}
    data = merge(data, overrides_from_args(args))
    exp = data.setdefault("experiment", {}) or {}
    data["experiment"] = exp
    if exp.get("seed") is None:
        exp["seed"] = secrets.randbits(32)
        print(f"no seed given; using seed {exp['seed']}")
    return build_spec(data)


def make_run_dir(out_dir: Path, seed: int) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = out_dir / f"{stamp}_seed{seed}"
    n = 1
    while run_dir.exists():
        n += 1
        run_dir = out_dir / f"{stamp}_seed{seed}_{n}"
    run_dir.mkdir(parents=True)
    return run_dir


def _summary_line(s: harness.RunSummary) -> str:
    if s.status != "ok":
        return f"{s.policy:>3} devices={s.devices:<3} ratio={s.acceptance_ratio:<4g} FAILED {s.message}"
    return (f"{s.policy:>3} devices={s.devices:<3} ratio={s.acceptance_ratio:<4g} "
            f"executions={s.executions} error_ratio={s.error_ratio:.4f} "
            f"({s.wall_time_s:.1f}s)")


def write_outputs(spec: harness.ExperimentSpec, summaries, run_dir: Path) -> None:
    harness.export_results(summaries, "csv", run_dir / "results.csv", spec.record_latency)
    harness.export_results(summaries, "json", run_dir / "results.json", spec.record_latency)
    for s in summaries:
        harness.write_series(s, run_dir / "series", spec.max_series_points)


def cmd_run(args) -> int:
    spec = resolve_spec(args)
    run_dir = make_run_dir(args.out_dir, spec.seed)
    dump_config(spec, run_dir / "config.yaml")
    summaries = harness.run_experiment(spec, progress=lambda s: print(_summary_line(s), flush=True))
    write_outputs(spec, summaries, run_dir)
    print(f"results written to {run_dir}")
    return EXIT_RUN_FAILED if any(s.status != "ok" for s in summaries) else EXIT_OK


def cmd_bench(args) -> int:
    spec = resolve_spec(args)
    for r in harness.benchmark(spec, args.warmup, args.repetitions):
        print(f"{r.policy:>3} devices={r.devices:<3} latency {r.mean_ms:.4f} ± {r.std_ms:.4f} ms "
              f"({args.repetitions} decisions after {args.warmup} warmups)")
    return EXIT_OK


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def cmd_checkpoint(args) -> int:
    spec = resolve_spec(args)
    size, ratio = spec.sizes[0], spec.ratios[0]
    if args.action == "save":
        summary, _ = harness.run_cell(spec, "drl", size, ratio)
        save_checkpoint(summary.agent.eval_net, args.path)
        _sidecar(args.path).write_text(json.dumps(
            {"devices": size, "acceptance_ratio": ratio, "seed": spec.seed,
             "executions": spec.executions, "agent": asdict(spec.agent)}, indent=2) + "\n")
        print(_summary_line(summary))
        print(f"checkpoint written to {args.path}")
        return EXIT_OK
    net = load_checkpoint(args.path)
    if net.layer_sizes[0] != size + 2:
        raise ConfigError(f"checkpoint was trained for {net.layer_sizes[0] - 2} devices, "
                          f"--devices is {size}")
    summary, _ = harness.run_cell(spec, "drl", size, ratio, network=net)
    print(f"resumed from {args.path} (replay memory starts empty)")
    print(_summary_line(summary))
    run_dir = make_run_dir(args.out_dir, spec.seed)
    dump_config(spec, run_dir / "config.yaml")
    write_outputs(spec, [summary], run_dir)
    print(f"results written to {run_dir}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "checkpoint": cmd_checkpoint}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"FormatError: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
