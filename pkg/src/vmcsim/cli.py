"""Command line entry points: run, replay, sweep, enumerate-conflicts, serve."""

from __future__ import annotations

import asyncio
import csv
import json
import os
import pathlib

import click
import numpy as np
import yaml

from . import analysis, engine
from .config import ConfigError, RunConfig, load_config, load_preset, preset_names
from .scenario import build_layout
from .trace import read_trace, write_trace


def _out_dir(out) -> pathlib.Path:
    d = pathlib.Path(out or os.environ.get("VMCSIM_OUT", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _raw_config(preset: str | None, config_path: str | None) -> dict:
    if (preset is None) == (config_path is None):
        raise click.UsageError("give exactly one of --preset or --config")
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f)
    try:
        import importlib.resources
        root = importlib.resources.files("vmcsim") / "presets"
        return yaml.safe_load((root / f"{preset}.yaml").read_text())
    except FileNotFoundError:
        raise click.UsageError(f"unknown preset {preset!r}; "
                               f"available: {', '.join(preset_names())}")


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def _parse_value(s: str):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def _build(raw: dict, seed, negotiation) -> RunConfig:
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = seed
    if negotiation is not None:
        raw["negotiation"] = negotiation
    return RunConfig.from_dict(raw)


def _write_outputs(out: pathlib.Path, name: str, result) -> pathlib.Path:
    trace_path = out / f"{name}.trace.ndjson"
    write_trace(str(trace_path), result.records)
    metrics = result.metrics.to_dict()
    metrics["fairness"] = analysis.fairness_report(
        result.metrics.priority_counts)
    with open(out / f"{name}.metrics.json", "w", encoding="utf-8") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
    return trace_path


@click.group()
def main():
    """Deterministic multi-agent workspace simulator."""


@main.command(name="run")
@click.option("--preset", type=str, default=None,
              help=f"shipped preset, one of: {', '.join(preset_names())}")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="YAML config file")
@click.option("--seed", type=int, default=None)
@click.option("--negotiation/--no-negotiation", default=None)
@click.option("--out", type=click.Path(), default=None,
              help="output directory (default $VMCSIM_OUT or .)")
@click.option("--name", type=str, default="run", help="output file stem")
def run_cmd(preset, config_path, seed, negotiation, out, name):
    """Run one simulation; write trace and metrics."""
    try:
        cfg = _build(_raw_config(preset, config_path), seed, negotiation)
    except ConfigError as e:
        raise click.ClickException(str(e))
    result = engine.run(cfg)
    trace_path = _write_outputs(_out_dir(out), name, result)
    m = result.metrics
    click.echo(f"status={result.status} completion={m.completion_time} "
               f"d_min_rr={m.d_min_rr} d_min_rh={m.d_min_rh} "
               f"t_below_sp={m.t_below_sp:.3f}")
    click.echo(f"trace: {trace_path}")


@main.command(name="replay")
@click.argument("trace_path", type=click.Path(exists=True))
@click.option("--compare", type=click.Path(exists=True), default=None,
              help="stored metrics JSON to diff against")
def replay_cmd(trace_path, compare):
    """Verify a trace and recompute its metrics."""
    records = read_trace(trace_path, verify=True)
    metrics = engine.replay(records).to_dict()
    click.echo(json.dumps(metrics, indent=2, sort_keys=True))
    if compare:
        with open(compare, "r", encoding="utf-8") as f:
            stored = json.load(f)
        diffs = [k for k in metrics
                 if k in stored and stored[k] != metrics[k]]
        if diffs:
            click.echo(f"differs from stored metrics in: {', '.join(diffs)}")
            raise SystemExit(1)
        click.echo("matches stored metrics")


@main.command(name="sweep")
@click.option("--preset", type=str, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--axis", type=str, required=True,
              help="dotted.path=v1,v2,... applied to the config")
@click.option("--seeds", type=int, default=5)
@click.option("--out", type=click.Path(), default=None)
@click.option("--name", type=str, default="sweep")
def sweep_cmd(preset, config_path, axis, seeds, out, name):
    """One run per (axis value, seed); aggregate mean and std per cell."""
    base = _raw_config(preset, config_path)
    if "=" not in axis:
        raise click.UsageError("--axis must look like path=v1,v2,...")
    path, _, raw_values = axis.partition("=")
    values = [_parse_value(v) for v in raw_values.split(",") if v != ""]
    rows = []
    for value in values:
        times, faults = [], 0
        for seed in range(seeds):
            raw = json.loads(json.dumps(base))
            _set_path(raw, path, value)
            raw["seed"] = seed
            try:
                cfg = RunConfig.from_dict(raw)
            except ConfigError as e:
                raise click.ClickException(str(e))
            result = engine.run(cfg)
            if result.status == "faulted":
                faults += 1
            elif result.metrics.completion_time is not None:
                times.append(result.metrics.completion_time)
        rows.append({
            "value": value, "runs": seeds, "completed": len(times),
            "faulted": faults,
            "mean_completion": float(np.mean(times)) if times else None,
            "std_completion": float(np.std(times)) if times else None,
        })
    out_dir = _out_dir(out)
    with open(out_dir / f"{name}.json", "w", encoding="utf-8") as f:
        json.dump({"axis": path, "rows": rows}, f, indent=2)
    with open(out_dir / f"{name}.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]) if rows else ["value"])
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        mean = r["mean_completion"]
        std = r["std_completion"]
        cell = "faulted" if r["faulted"] else (
            f"{mean:.1f} +/- {std:.1f} s" if mean is not None else "incomplete")
        click.echo(f"{path}={r['value']}: {cell} "
                   f"({r['completed']}/{r['runs']} completed)")


@main.command(name="enumerate-conflicts")
@click.option("--scenario", type=str, default="A")
@click.option("--robots", "robot_counts", type=str, default="1,2,3,4")
@click.option("--mc-samples", type=int, default=0,
              help="also cross-check with this many Monte Carlo samples")
@click.option("--seed", type=int, default=0)
def enumerate_cmd(scenario, robot_counts, mc_samples, seed):
    """Exact conflict probability of simultaneous straight-line transfers."""
    layout = build_layout(2, scenario, seed)
    for n in (int(x) for x in robot_counts.split(",")):
        p = analysis.conflict_probability(layout, n)
        line = f"{n} robots: {float(p):.6f} ({p})"
        if mc_samples > 0 and n >= 2:
            est, se = analysis.monte_carlo_conflict(layout, n, mc_samples,
                                                    seed=seed)
            line += f"  mc={est:.6f} +/- {se:.6f}"
        click.echo(line)


@main.command(name="serve")
@click.option("--preset", type=str, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--seed", type=int, default=None)
@click.option("--port", type=int, default=8787)
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--realtime-factor", type=float, default=1.0,
              help="sim seconds per wall second (<1 is slow motion)")
@click.option("--out", type=click.Path(), default=None,
              help="write the session trace here on shutdown")
@click.option("--name", type=str, default="session")
def serve_cmd(preset, config_path, seed, port, host, realtime_factor, out,
              name):
    """Stream live state to cockpit clients; ingest hand input."""
    from .serve import ServeSession, serve as serve_session
    try:
        cfg = _build(_raw_config(preset, config_path), seed, None)
    except ConfigError as e:
        raise click.ClickException(str(e))
    click.echo(f"serving ws://{host}:{port} (schema 1, seed {cfg.seed}); "
               f"Ctrl-C to stop")
    session = ServeSession(cfg, realtime_factor=realtime_factor)
    try:
        asyncio.run(serve_session(cfg, port, host=host,
                                  realtime_factor=realtime_factor,
                                  session=session))
    except KeyboardInterrupt:
        pass
    finally:
        if out is not None:
            trace_path = _out_dir(out) / f"{name}.trace.ndjson"
            write_trace(str(trace_path), session.sim.records)
            click.echo(f"trace: {trace_path}")


if __name__ == "__main__":
    main()
