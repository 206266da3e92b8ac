"""Command line entry point: ``mlrdyn run | bench | decompose | validate``."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import engine
from .model import (
    InvalidMorphology,
    MorphologyVectors,
    RobotFileError,
    apply_damage,
    build_hexapod_default,
    load_robot,
    validate_morphology,
)


def _scenario(scenario_path, preset_name, path, dt, duration) -> engine.Scenario:
    if scenario_path and preset_name:
        raise click.UsageError("give either --scenario or --preset, not both")
    try:
        if scenario_path:
            sc = engine.load_scenario(scenario_path)
        else:
            sc = engine.preset(preset_name or "healthy")
        return sc.with_overrides(path=path, dt=dt, duration=duration)
    except (engine.ScenarioError, RobotFileError, ValueError) as exc:
        raise click.ClickException(str(exc)) from None


_common = [
    click.option("--scenario", "scenario_path", type=click.Path(exists=True, dir_okay=False),
                 help="Scenario JSON file."),
    click.option("--preset", "preset_name", type=click.Choice(["healthy", "scenario1", "scenario2"]),
                 help="Built-in scenario (default: healthy)."),
    click.option("--dt", type=float, help="Override the time step (s)."),
    click.option("--duration", type=float, help="Override the duration (s)."),
]


def common(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Modular multi-legged robot dynamics."""


@main.command()
@common
@click.option("--path", type=click.Choice(engine.PATHS), help="Structural-matrix evaluation route.")
@click.option("--out", type=click.Path(dir_okay=False), help="Log file; .json writes JSON, anything else CSV.")
def run(scenario_path, preset_name, dt, duration, path, out):
    """Simulate a scenario and print its summary."""
    sc = _scenario(scenario_path, preset_name, path, dt, duration)
    if out:
        key = "json" if out.endswith(".json") else "csv"
        sc = sc.with_overrides(outputs={key: out})
    engine.warm_up(sc.path)
    try:
        res = engine.run_scenario(sc)
    except (engine.NumericalDivergence, RuntimeError) as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(json.dumps(res.summary, indent=2))


@main.command()
@common
@click.option("--path", "paths", multiple=True, type=click.Choice(engine.PATHS),
              help="Route(s) to time; default both.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the report as JSON.")
def bench(scenario_path, preset_name, dt, duration, paths, out):
    """Time full runs and per-call structural evaluation."""
    sc = _scenario(scenario_path, preset_name, None, dt, duration)
    report = engine.benchmark(sc, paths=tuple(paths) or engine.PATHS)
    text = json.dumps(report, indent=2)
    if out:
        Path(out).write_text(text)
    click.echo(text)


@main.command()
@click.option("--robot", type=click.Path(exists=True, dir_okay=False), help="Robot JSON (default hexapod).")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Cache directory.")
@click.option("--force", is_flag=True, help="Rebuild even when a valid cache file exists.")
def decompose(robot, out, force):
    """Build or refresh the coefficient-table cache for every leg type."""
    from .fastdyn import decompose_leg, load_decomposition, save_decomposition, DecompositionCacheError

    model = load_robot(robot) if robot else build_hexapod_default()
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    for cat in model.catalog:
        f = outdir / engine.decomposition_filename(cat)
        if f.exists() and not force:
            try:
                load_decomposition(f, cat)
                click.echo(f"{f}: up to date")
                continue
            except DecompositionCacheError as exc:
                click.echo(f"{f}: stale ({exc}), rebuilding")
        dec = decompose_leg(cat)
        save_decomposition(dec, f)
        click.echo(f"{f}: {dec.gamma} basis functions, {dec.nnz()} nonzero coefficients")


@main.command()
@click.option("--robot", type=click.Path(exists=True, dir_okay=False), help="Robot JSON.")
@click.option("--scenario", "scenario_path", type=click.Path(exists=True, dir_okay=False))
def validate(robot, scenario_path):
    """Check a robot file and the morphologies a scenario's damage produces."""
    try:
        sc = engine.load_scenario(scenario_path) if scenario_path else None
        if robot:
            model = load_robot(robot)
        elif sc is not None:
            model = sc.model()
        else:
            model = build_hexapod_default()
        mv = MorphologyVectors.healthy(model)
        validate_morphology(model, mv)
        click.echo(f"robot {model.name!r}: {model.N} legs, {model.N_T} joints, ok")
        if sc is not None:
            for t, ev in sorted(sc.damage, key=lambda e: e[0]):
                mv = apply_damage(mv, ev)
                validate_morphology(model, mv)
                click.echo(f"t={t:g}: damage {ev} -> {mv.reduced_dof} dof, ok")
            if sc.controller:
                engine.GaitController(model, sc.gait, sc.pid)
                click.echo("gait reference reachable, ok")
    except (engine.ScenarioError, RobotFileError, InvalidMorphology, ValueError) as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
