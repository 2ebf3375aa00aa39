"""Command-line entry point: ``regretsls synthesize | sweep | plot | verify``.

Exit codes: 0 success, 1 infeasible syntheses (or failed checks) only,
2 usage error, 3 solver failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click

from .. import conic
from ..evaluation import NOISE_KINDS
from ..synthesis import solve_clairvoyant, synthesize
from . import report
from .plotting import emit_plot
from .scenarios import (CONTROLLERS, SCENARIO_DEFAULTS, SCENARIOS, ConfigError, ScenarioConfig, build_scenario,
                        read_config)
from .sweep import run_sweep, summarize
from .verify import run_checks

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("regretsls")


def _exit_for(status: str) -> int:
    if status == conic.OPTIMAL:
        return EXIT_OK
    if status == conic.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_SOLVER


def _build_config(config_path: Optional[str], flags: Dict[str, Any], hmin=None, hmax=None) -> ScenarioConfig:
    """Config file values, then flags on top (flags win)."""
    try:
        data = read_config(config_path) if config_path else {}
        data.update({k: v for k, v in flags.items() if v is not None and v != ()})
        if hmin is not None or hmax is not None:
            if "horizons" in data and data["horizons"]:
                lo0, hi0 = min(data["horizons"]), max(data["horizons"])
            else:
                d = SCENARIO_DEFAULTS[data.get("scenario", "synthetic-stable")]
                lo0, hi0 = 2, d["full_max"] if data.get("full_scale") else d["desk_max"]
            data["horizons"] = tuple(range(hmin if hmin is not None else lo0, (hmax if hmax is not None else hi0) + 1))
            if not data["horizons"]:
                raise ConfigError("empty horizon range")
        return ScenarioConfig(**data)
    except (ConfigError, TypeError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc


def _progress(quiet: bool):
    if quiet:
        return None
    return lambda msg: click.echo(msg, err=True)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """Safe regret-optimal output-feedback control: synthesis and benchmarks."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


scenario_opt = click.option("--scenario", type=click.Choice(SCENARIOS), default=None)
rho_opt = click.option("--rho", type=float, default=None, help="Spectral scale (synthetic scenarios).")
tol_opt = click.option("--tol", type=float, default=None, help="Solver feasibility tolerance.")
config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                          help="YAML config file; flags override its values.")


@main.command("synthesize")
@scenario_opt
@rho_opt
@click.option("--horizon", "-T", type=int, default=10, show_default=True)
@click.option("--controller", type=click.Choice(CONTROLLERS), default="regret", show_default=True)
@tol_opt
@config_opt
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for K.txt, Phi.txt, result.json.")
def synthesize_cmd(scenario, rho, horizon, controller, tol, config_path, out):
    """Synthesize one controller and dump its gains and response matrix."""
    cfg = _build_config(config_path, dict(scenario=scenario, rho=rho, tol=tol, horizons=(horizon,)))
    sc = build_scenario(cfg, horizon)
    out_dir = Path(out or cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    if controller == "clairvoyant":
        clair = solve_clairvoyant(sc.lifted, sc.cost)
        phi = clair.as_response(sc.lifted)
        info = {"controller": controller, "status": conic.OPTIMAL, "objective": clair.objective}
        report.write_matrix(out_dir / "Phi.txt", phi.full, "clairvoyant response (noncausal; no gains)")
        status = conic.OPTIMAL
    else:
        res = synthesize(controller, sc.lifted, sc.cost, sc.safety, sc.bounds, tol=cfg.tol, backend=cfg.backend)
        status = res.status
        info = {"controller": controller, "status": res.status, "objective": res.objective,
                "lambda": res.lam, "gamma": res.gamma, "solve_time": res.solve_time,
                "residuals": res.residuals}
        if res.optimal:
            dims = f"T={horizon} du={sc.system.du} dy={sc.system.dy} dx={sc.system.dx}"
            report.write_matrix(out_dir / "K.txt", res.gains.K, f"{controller} gains K ({dims})")
            report.write_matrix(out_dir / "Phi.txt", res.phi.full,
                                f"{controller} response [[Pxw, Pxe], [Puw, Pue]] ({dims})")
    info.update(scenario=cfg.scenario, T=horizon)
    (out_dir / "result.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    click.echo(f"{controller} T={horizon}: {status} objective={info['objective']:.10g}")
    sys.exit(_exit_for(status))


@main.command("sweep")
@config_opt
@scenario_opt
@rho_opt
@click.option("--horizon-min", type=int, default=None)
@click.option("--horizon-max", type=int, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--noise", multiple=True, type=click.Choice(NOISE_KINDS), help="Repeatable; default all kinds.")
@click.option("--controller", multiple=True, type=click.Choice(CONTROLLERS), help="Repeatable; default all.")
@click.option("--seed", type=int, default=None, help="Base seed; trial k uses seed + k.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@tol_opt
@click.option("--full-scale", is_flag=True, default=None, help="Horizons up to 30 (synthetic) / 25 (quadrotor).")
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel synthesis processes.")
@click.option("--timing/--no-timing", default=False, show_default=True,
              help="Write wall-clock solve times into records.csv (breaks byte-identical reruns).")
@click.option("--quiet", is_flag=True)
def sweep_cmd(config_path, scenario, rho, horizon_min, horizon_max, trials, noise, controller, seed, out, tol,
              full_scale, jobs, timing, quiet):
    """Full experiment: records.csv, summary.csv, synthesis.csv and cost_curves.svg."""
    flags = dict(scenario=scenario, rho=rho, trials=trials, noise=noise, controllers=controller, base_seed=seed,
                 output=out, tol=tol, full_scale=full_scale)
    cfg = _build_config(config_path, flags, horizon_min, horizon_max)
    if jobs < 1:
        raise click.UsageError("--jobs must be at least 1")
    result = run_sweep(cfg, jobs=jobs, progress=_progress(quiet))
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.emit_csv(result.records, out_dir / "records.csv", timing=timing)
    report.emit_csv(result.syntheses, out_dir / "synthesis.csv", kind="synthesis")
    summary = summarize(result.records)
    report.emit_csv(summary, out_dir / "summary.csv", kind="summary")
    emit_plot(summary, out_dir / "cost_curves.svg")
    click.echo(f"{len(result.records)} records, {len(summary)} summary rows -> {out_dir}")
    sys.exit(_exit_for(result.worst_status))


@main.command("plot")
@click.argument("summary_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default="cost_curves.svg", show_default=True)
def plot_cmd(summary_csv, out):
    """Render a summary.csv to an SVG of cost curves."""
    try:
        rows = report.read_csv(summary_csv)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    if not rows or type(rows[0]).__name__ != "SummaryRow":
        raise click.UsageError(f"{summary_csv} is not a non-empty summary table")
    emit_plot(rows, out)
    click.echo(f"wrote {out}")


@main.command("verify")
@config_opt
@scenario_opt
@rho_opt
@click.option("--horizon", "-T", type=int, default=6, show_default=True)
@click.option("--trials", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=None)
@tol_opt
def verify_cmd(config_path, scenario, rho, horizon, trials, seed, tol):
    """Run the property checks on one scenario and horizon."""
    cfg = _build_config(config_path, dict(scenario=scenario, rho=rho, tol=tol, base_seed=seed, trials=trials,
                                          horizons=(horizon,)))
    outcome = run_checks(cfg, horizon)
    for check in outcome.checks:
        click.echo(f"{'PASS' if check.passed else 'FAIL'}  {check.name}: {check.detail}")
    if outcome.solver_status not in (conic.OPTIMAL, conic.INFEASIBLE):
        sys.exit(EXIT_SOLVER)
    if outcome.solver_status == conic.INFEASIBLE or not all(c.passed for c in outcome.checks):
        sys.exit(EXIT_INFEASIBLE)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
