"""Command-line interface.

Subcommands: simulate, theory, taustar, spectrum, sweep, validate.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .activation import builtin
from .harness import (
    ConfigError,
    NumericalError,
    SweepSpec,
    TAUSTAR_HEADER,
    build_spec,
    run as run_sweep,
    validate_config,
    write_csv,
    _spike_outputs,
    _taustar_outputs,
)
from .largelr import tau_star
from .theory import SolverError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_NUMERICAL = (SolverError, NumericalError, FloatingPointError, np.linalg.LinAlgError)


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except _NUMERICAL as e:
            click.echo(f"numerical failure: {e}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def _load(config: str, seed: int | None):
    settings = validate_config(config)
    if seed is not None:
        from dataclasses import replace

        settings = replace(settings, cfg=replace(settings.cfg, seed=seed))
    _log_centering(settings)
    return settings


def _log_centering(settings) -> None:
    for key in ("sigma", "sigma_star"):
        name = getattr(settings, key)
        raw = builtin(name, order=settings.order, centered=False)
        if abs(raw.mu0) > 1e-14:
            click.echo(f"note: centered {key}={name} by subtracting its Gaussian "
                       f"mean {raw.mu0:.6g}", err=True)


_config_opt = click.option("--config", required=True, type=click.Path(), help="Config file (key=value or JSON).")
_out_opt = click.option("--out", default="out", type=click.Path(), help="Output directory.")
_workers_opt = click.option("--workers", default=1, type=int, help="Worker threads.")
_seed_opt = click.option("--seed", default=None, type=int, help="Override the config seed.")


@click.group()
def main() -> None:
    """One-gradient-step feature learning laboratory."""


@main.command()
@_config_opt
def validate(config: str) -> None:
    """Check a config file and echo the normalized settings."""
    try:
        settings = validate_config(config)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(json.dumps(settings.as_dict(), indent=2, sort_keys=True))


@main.command()
@_config_opt
@_out_opt
@_workers_opt
@_seed_opt
@_handle_errors
def simulate(config: str, out: str, workers: int, seed: int | None) -> None:
    """Monte Carlo ridge risk before/after the gradient step at one setting."""
    settings = _load(config, seed)
    spec = SweepSpec(base=settings, axis="seed", values=(settings.cfg.seed,),
                     recipe="custom")
    manifest = run_sweep(spec, out, workers=workers)
    click.echo(f"wrote {', '.join(manifest.digests)} to {out}")


@main.command()
@_config_opt
@_out_opt
@_seed_opt
@_handle_errors
def theory(config: str, out: str, seed: int | None) -> None:
    """Closed-form risk-drop prediction (delta, tau table, resolvent pair)."""
    settings = _load(config, seed)
    if settings.cfg.lam <= 0.0:
        raise ConfigError("closed-form predictions require lam > 0")
    from dataclasses import replace

    spec = SweepSpec(base=replace(settings, recipe="theory-grid"),
                     axis="seed", values=(settings.cfg.seed,), recipe="theory-grid")
    manifest = run_sweep(spec, out, workers=1)
    click.echo(f"wrote {', '.join(manifest.digests)} to {out}")


@main.command()
@click.option("--config", default=None, type=click.Path(), help="Optional config naming the activation pair.")
@_out_opt
@_handle_errors
def taustar(config: str | None, out: str) -> None:
    """Minimal Gaussian-smoothed student/teacher mismatch tau* and kappa*."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config is None:
        (header, rows), = _taustar_outputs().values()
    else:
        settings = _load(config, None)
        act = settings.activation()
        star = builtin(settings.sigma_star, order=settings.order, centered=True)
        res = tau_star(act, star, order=settings.order)
        header = TAUSTAR_HEADER
        rows = [[settings.sigma, settings.sigma_star, res.tau_star,
                 res.kappa_star, res.achieved]]
    write_csv(out_dir / "taustar.csv", header, rows)
    click.echo(f"wrote taustar.csv to {out}")


@main.command()
@_config_opt
@_out_opt
@_workers_opt
@_seed_opt
@_handle_errors
def spectrum(config: str, out: str, workers: int, seed: int | None) -> None:
    """First-layer spectrum after the step: spike table and bulk histogram."""
    settings = _load(config, seed)
    spec = SweepSpec(base=settings, axis="seed", values=(settings.cfg.seed,),
                     recipe="custom")
    outputs = _spike_outputs(spec, workers)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in outputs.items():
        write_csv(out_dir / f"{name}.csv", header, rows)
    click.echo(f"wrote {', '.join(f'{n}.csv' for n in outputs)} to {out}")


@main.command()
@_config_opt
@_out_opt
@_workers_opt
@_seed_opt
@_handle_errors
def sweep(config: str, out: str, workers: int, seed: int | None) -> None:
    """Run the recipe named in the config (fig1/fig3/.../theory-grid/custom)."""
    settings = _load(config, seed)
    spec = build_spec(settings)
    manifest = run_sweep(spec, out, workers=workers)
    click.echo(f"recipe {spec.recipe}: wrote {', '.join(manifest.digests)} to {out}")


if __name__ == "__main__":
    main()
