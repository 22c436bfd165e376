"""Command-line front end: simulate, estimate, test, calibrate.

Exit codes: 0 success (for `test`: model not rejected), 1 usage error,
2 data error, 3 model rejected, 4 numerical failure.  Every option can
also be supplied through an environment variable with prefix ``DDMTEST_``
(e.g. ``DDMTEST_TEST_MOMENTS=4``) or a JSON ``--config`` file; explicit
flags win over both.  Reports embed the fully resolved configuration, so
any report can be regenerated from itself.
"""

from __future__ import annotations

import dataclasses
import json
import math
import sys
from pathlib import Path

import click
import numpy as np
from click.core import ParameterSource

from .dataio import read_dataset_csv, to_jsonable, write_dataset_csv, write_report
from .errors import (
    DataValidationError,
    DdmTestError,
    DomainError,
    EstimationError,
    NumericalError,
    SimulationError,
)
from .model import Boundary, CollapsingBoundary, ConstantBoundary, DdmParameters
from .simulator import SimConfig, default_t_max, simulate_dataset
from .spectest import TestConfig, calibration_study, run_test

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REJECT = 3
EXIT_NUMERIC = 4

_EXIT_CODE_DOC = """\b
Exit codes:
  0  success / model not rejected
  1  usage error
  2  data error (unreadable or malformed input)
  3  model rejected by the specification test
  4  numerical failure (degenerate fit, ill-conditioned variance, ...)
"""


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one CLI run (embedded in every report)."""

    command: str
    input: str | None = None
    output: str | None = None
    knots: int | None = None
    moments: int = 5
    sims: int = 20000
    delta_step: float | None = None
    g_transform: str = "exponential"
    time_step: float = 1e-3
    t_max: float | None = None
    alpha: float = 0.05
    master_seed: int = 0
    reps: int | None = None
    n: int | None = None
    drift: float | None = None
    boundary: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items()}


def parse_boundary(text: str) -> Boundary:
    """Parse a boundary spec: constant:LEVEL, expdecay:B0,RATE, hyperbolic:B0,RATE."""
    name, _, rest = text.partition(":")
    try:
        params = [float(x) for x in rest.split(",")] if rest else []
    except ValueError:
        raise click.UsageError(f"boundary parameters in {text!r} must be numbers")
    if name == "constant" and len(params) == 1:
        return ConstantBoundary(level=params[0])
    if name == "expdecay" and len(params) == 2:
        return CollapsingBoundary("exponential", b0=params[0], rate=params[1])
    if name == "hyperbolic" and len(params) == 2:
        return CollapsingBoundary("hyperbolic", b0=params[0], rate=params[1])
    raise click.UsageError(
        f"cannot parse boundary {text!r}; expected constant:LEVEL, "
        "expdecay:B0,RATE or hyperbolic:B0,RATE"
    )


def _parse_transform(text: str) -> tuple[str, float | None]:
    family, _, param = text.partition(":")
    if family not in ("exponential", "rational"):
        raise click.UsageError(f"unknown transform family {family!r}")
    if param:
        try:
            return family, float(param)
        except ValueError:
            raise click.UsageError(f"transform parameter {param!r} must be a number")
    return family, None


def _merge_config_file(ctx: click.Context, values: dict) -> dict:
    """Overlay config-file values onto click defaults (explicit flags win)."""
    file_cfg = (ctx.obj or {}).get("config_file") or {}
    merged = {}
    for key, value in values.items():
        src = ctx.get_parameter_source(key)
        if src == ParameterSource.DEFAULT and key in file_cfg:
            merged[key] = file_cfg[key]
        else:
            merged[key] = value
    return merged


def _shared_options(func):
    opts = [
        click.option("--knots", type=int, default=None, help="Spline basis size K."),
        click.option("--moments", type=int, default=5, show_default=True,
                     help="Number of moment intervals J."),
        click.option("--sims", type=int, default=20000, show_default=True,
                     help="Simulated paths S per moment evaluation."),
        click.option("--delta-step", type=float, default=None,
                     help="Difference-quotient step (default 0.5*drift*n^-0.25)."),
        click.option("--g-transform", default="exponential", show_default=True,
                     help="Time transform: exponential|rational, optionally family:PARAM."),
        click.option("--time-step", type=float, default=1e-3, show_default=True,
                     help="Euler step for path simulation."),
        click.option("--t-max", type=float, default=None,
                     help="Censoring horizon (default: 1-1e-6 quantile of the transform)."),
        click.option("--alpha", type=float, default=0.05, show_default=True,
                     help="Significance level."),
        click.option("--seed", "master_seed", type=int, default=0, show_default=True,
                     help="Master seed; all randomness derives from it."),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


@click.group(epilog=_EXIT_CODE_DOC)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file with default option values.")
@click.pass_context
def cli(ctx, config_path):
    """Drift-diffusion identification and specification testing."""
    ctx.ensure_object(dict)
    if config_path:
        try:
            ctx.obj["config_file"] = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"cannot read config file {config_path}: {exc}")


@cli.command()
@click.option("--drift", type=float, required=True, help="True drift of the generator.")
@click.option("--boundary", required=True,
              help="Boundary spec: constant:LEVEL | expdecay:B0,RATE | hyperbolic:B0,RATE.")
@click.option("--n", type=int, required=True, help="Number of trials to simulate.")
@click.option("--output", "-o", required=True, type=click.Path(dir_okay=False),
              help="Output CSV path (a .meta.json sidecar is written next to it).")
@click.option("--time-step", type=float, default=1e-3, show_default=True)
@click.option("--t-max", type=float, default=None, help="Censoring horizon (default 50).")
@click.option("--seed", "master_seed", type=int, default=0, show_default=True)
@click.pass_context
def simulate(ctx, drift, boundary, n, output, time_step, t_max, master_seed):
    """Simulate a dataset from a known drift and boundary."""
    vals = _merge_config_file(ctx, dict(drift=drift, boundary=boundary, n=n, output=output,
                                        time_step=time_step, t_max=t_max,
                                        master_seed=master_seed))
    if vals["n"] is None or vals["n"] <= 0:
        raise click.UsageError("--n must be a positive integer")
    bound = parse_boundary(vals["boundary"])
    config = RunConfig(command="simulate", output=str(vals["output"]), n=vals["n"],
                       drift=vals["drift"], boundary=vals["boundary"],
                       time_step=vals["time_step"],
                       t_max=vals["t_max"] if vals["t_max"] is not None else 50.0,
                       master_seed=vals["master_seed"])
    sim_config = SimConfig(time_step=config.time_step, t_max=config.t_max,
                           master_seed=config.master_seed)
    data = simulate_dataset(DdmParameters(drift=config.drift), bound, config.n, sim_config)
    write_dataset_csv(data, config.output)
    sidecar = {
        "config": config.to_dict(),
        "truth": {"drift": config.drift, "boundary": config.boundary},
        "censoring": data.meta,
    }
    write_report(sidecar, str(config.output) + ".meta.json")
    click.echo(f"wrote {config.n} trials to {config.output} "
               f"({data.meta['censored']} censored)")
    return EXIT_OK


@cli.command()
@click.option("--input", "-i", "input_", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Input CSV (time,choice).")
@click.option("--output", "-o", required=True, type=click.Path(dir_okay=False),
              help="Output JSON report.")
@click.option("--knots", type=int, default=None, help="Spline basis size K.")
@click.option("--g-transform", default="exponential", show_default=True)
@click.option("--seed", "master_seed", type=int, default=0, show_default=True)
@click.pass_context
def estimate(ctx, input_, output, knots, g_transform, master_seed):
    """Estimate drift and boundary from a dataset."""
    from .estimator import estimate_ddm
    from .model import ExponentialTransform, RationalTransform

    vals = _merge_config_file(ctx, dict(input_=input_, output=output, knots=knots,
                                        g_transform=g_transform, master_seed=master_seed))
    family, g_param = _parse_transform(vals["g_transform"])
    config = RunConfig(command="estimate", input=str(vals["input_"]),
                       output=str(vals["output"]), knots=vals["knots"],
                       g_transform=vals["g_transform"], master_seed=vals["master_seed"])
    data = read_dataset_csv(config.input)
    transform = None
    if g_param is not None:
        transform = (ExponentialTransform(rate=g_param) if family == "exponential"
                     else RationalTransform(scale=g_param))
    result = estimate_ddm(data, K=config.knots, family=family, transform=transform)
    levels = np.round(np.linspace(0.0, 1.0, 101), 2)
    design = result.choice_model.basis.design_matrix(levels)
    eps = result.choice_model.clamp_epsilon
    p = np.clip(design @ result.choice_model.coefficients, eps, 1.0 - eps)
    b_vals = (np.log(p) - np.log1p(-p)) / (2.0 * result.drift_hat)
    grid = []
    for u, b in zip(levels, b_vals):
        t = result.transform.inverse(float(u))
        grid.append({"u": float(u), "t": None if math.isinf(t) else t, "b": float(b)})
    report = {
        "config": config.to_dict(),
        "n": result.n,
        "drift_hat": result.drift_hat,
        "mean_imbalance": result.mean_imbalance_hat,
        "mean_time": result.mean_time_hat,
        "K": result.K,
        "coefficients": list(result.choice_model.coefficients),
        "clamp_count": result.clamp_count,
        "outside_unit_count": result.outside_unit_count,
        "transform": result.transform.params(),
        "boundary_grid": grid,
    }
    write_report(report, config.output)
    click.echo(f"drift_hat = {result.drift_hat:.6f} (n = {result.n}, K = {result.K}); "
               f"report: {config.output}")
    return EXIT_OK


@cli.command()
@click.option("--input", "-i", "input_", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Input CSV (time,choice).")
@click.option("--output", "-o", required=True, type=click.Path(dir_okay=False),
              help="Output JSON report.")
@_shared_options
@click.pass_context
def test(ctx, input_, output, **kwargs):
    """Test whether the data are consistent with any drift-diffusion model."""
    vals = _merge_config_file(ctx, dict(input_=input_, output=output, **kwargs))
    family, g_param = _parse_transform(vals["g_transform"])
    config = RunConfig(command="test", input=str(vals["input_"]), output=str(vals["output"]),
                       knots=vals["knots"], moments=vals["moments"], sims=vals["sims"],
                       delta_step=vals["delta_step"], g_transform=vals["g_transform"],
                       time_step=vals["time_step"], t_max=vals["t_max"],
                       alpha=vals["alpha"], master_seed=vals["master_seed"])
    data = read_dataset_csv(config.input)
    report = run_test(data, TestConfig(
        moments=config.moments, knots=config.knots, sims=config.sims,
        delta_step=config.delta_step, g_family=family, g_param=g_param,
        time_step=config.time_step, t_max=config.t_max, alpha=config.alpha,
        master_seed=config.master_seed))
    payload = _test_report_payload(report, config)
    write_report(payload, config.output)
    click.echo(report.summary())
    return EXIT_REJECT if report.reject else EXIT_OK


def _test_report_payload(report, config: RunConfig) -> dict:
    comps = report.components
    return {
        "cli_config": config.to_dict(),
        "config": report.config,
        "statistic": report.statistic,
        "dof": report.dof,
        "p_value": report.p_value,
        "critical_value": report.critical_value,
        "alpha_level": report.alpha_level,
        "reject": report.reject,
        "sample_moments": list(report.sample_moments.values),
        "simulated_moments": list(report.simulated_moments.values),
        "estimation": report.estimation,
        "diagnostics": report.diagnostics,
        "components": {
            "v1": comps.v1,
            "v2": comps.v2,
            "v3": comps.v3,
            "m_delta": comps.m_delta,
            "m_beta": comps.m_beta,
            "d_beta": comps.d_beta,
            "sigma": comps.sigma,
            "lambda": comps.lambda_mat,
            "delta_step": comps.delta_step,
            "v3_v1_trace_ratio": comps.v3_v1_trace_ratio,
        },
    }


@cli.command()
@click.option("--drift", type=float, required=True, help="True drift of the null generator.")
@click.option("--boundary", required=True, help="True boundary spec of the null generator.")
@click.option("--n", type=int, required=True, help="Trials per replication.")
@click.option("--reps", type=int, required=True, help="Number of replications R.")
@click.option("--output", "-o", required=True, type=click.Path(dir_okay=False),
              help="Output JSON summary.")
@_shared_options
@click.pass_context
def calibrate(ctx, drift, boundary, n, reps, output, **kwargs):
    """Monte Carlo study: repeat simulate-then-test and compare with chi-squared."""
    vals = _merge_config_file(ctx, dict(drift=drift, boundary=boundary, n=n, reps=reps,
                                        output=output, **kwargs))
    if vals["reps"] is None or vals["reps"] < 1:
        raise click.UsageError("--reps must be >= 1")
    family, g_param = _parse_transform(vals["g_transform"])
    bound = parse_boundary(vals["boundary"])
    config = RunConfig(command="calibrate", output=str(vals["output"]), n=vals["n"],
                       drift=vals["drift"], boundary=vals["boundary"], reps=vals["reps"],
                       knots=vals["knots"], moments=vals["moments"], sims=vals["sims"],
                       delta_step=vals["delta_step"], g_transform=vals["g_transform"],
                       time_step=vals["time_step"], t_max=vals["t_max"],
                       alpha=vals["alpha"], master_seed=vals["master_seed"])
    result = calibration_study(
        DdmParameters(drift=config.drift), bound, config.n, config.reps,
        TestConfig(moments=config.moments, knots=config.knots, sims=config.sims,
                   delta_step=config.delta_step, g_family=family, g_param=g_param,
                   time_step=config.time_step, t_max=config.t_max, alpha=config.alpha,
                   master_seed=config.master_seed),
        data_t_max=config.t_max if config.t_max is not None else 50.0)
    payload = {"config": config.to_dict(), **result.to_dict()}
    write_report(payload, config.output)
    click.echo(f"rejection rate {result.rejection_rate:.3f} at alpha={config.alpha:g} "
               f"(mean A = {result.mean_statistic:.3f}, chi2 mean = {result.dof}); "
               f"report: {config.output}")
    return EXIT_OK


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        rv = cli.main(args=argv, standalone_mode=False, auto_envvar_prefix="DDMTEST")
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except DataValidationError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except DdmTestError as exc:
        click.echo(f"numeric error: {exc}", err=True)
        return EXIT_NUMERIC
    if rv is None:
        return EXIT_OK
    return int(rv)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
