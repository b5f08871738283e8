"""
Main CLI interface for the telecoupling toolkit.
"""

import functools
import sys
from datetime import date
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import click
import pandas as pd
from rich.console import Console

from . import __version__
from .accounting import CoefficientTable, build_ledger, standardize_loss
from .aoe import (
    PRESETS, aggregate_daily, aggregate_monthly, assign_bins, build_raw_scores, compute_bins,
    simulate_heatmap,
)
from .config import RunConfig, load_run_config
from .display import (
    create_balance_table, create_bin_table, create_bins_table, create_fit_table, create_iv_table,
    create_ledger_table, create_placebo_table, display_fit_summary, display_ledger_totals,
    display_matrix_summary,
)
from .econometrics import DesignSpec, build_downwind_panel, fit, fit_downwind_bins
from .errors import SpecificationError, TelecouplingError
from .ingest import (
    load_binned, load_city_registry, load_coefficients, load_forest, load_imports, load_land,
    load_outcomes, load_panel, load_region_population, load_trade, load_trade_shock, load_wind_samples,
)
from .models import PanelTable, WindRegime
from .shiftshare import ShiftShareDesign, balance_test, build_iv_panel, placebo_rejection
from .storage import ArtifactStore, build_report
from .synthetic import BALANCE_CHARACTERISTICS, bundle_frames, generate_data
from .utils import configure_logging, create_header, show_error, show_info, show_spinner, show_success
from .windfield import build_grid, grid_frame, rasterize_days

console = Console()


def handle_errors(func: Callable) -> Callable:
    """Map toolkit exceptions to exit codes; anything unexpected exits 1."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except TelecouplingError as e:
            show_error(str(e))
            sys.exit(e.exit_code)
        except Exception as e:
            show_error(f"Unexpected error: {type(e).__name__}: {e}")
            sys.exit(1)
    return wrapper


def _setup(ctx: click.Context, inputs: Optional[Dict[str, Optional[str]]] = None,
           **overrides: Any) -> Tuple[RunConfig, ArtifactStore]:
    """Load the run config with this command's flags and prepare the output directory."""
    obj = ctx.obj
    values = {**obj["overrides"], **overrides}
    given = {k: str(v) for k, v in (inputs or {}).items() if v is not None}
    if given:
        values["inputs"] = given
    config = load_run_config(obj["config_path"], values)
    verbose = obj["verbose"]
    configure_logging("DEBUG" if verbose >= 2 else "INFO" if verbose == 1 else config.log_level)
    return config, ArtifactStore(Path(config.out_dir))


def _finish(store: ArtifactStore) -> None:
    store.write_manifest()
    show_success(f"Wrote {len(store.hashes)} artifact(s) to {store.out_dir} (hash {store.content_hash()[:12]})")


def _load_panel(config: RunConfig) -> PanelTable:
    roles = config.inputs.get("panel_roles")
    return load_panel(config.input_path("panel"), roles)


def _design(config: RunConfig, panel: PanelTable) -> DesignSpec:
    spec = config.design_spec()
    return spec if spec is not None else DesignSpec.from_roles(panel)


def _iv_designs(config: RunConfig, years) -> Dict[int, ShiftShareDesign]:
    trade = load_trade(config.input_path("trade"))
    population = load_region_population(config.input_path("population"))
    return {int(y): ShiftShareDesign.from_inputs(trade, population, int(y), config.iv_horizon) for y in sorted(set(years))}


@click.group()
@click.version_option(version=__version__, prog_name="telecoupling")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON run configuration")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Seed for randomized commands")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker threads")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory")
@click.option("--verbose", "-v", count=True, help="More log output (-vv for debug)")
@click.pass_context
def cli(ctx, config_path, seed, threads, out_dir, verbose):
    """
    Telecoupling - downwind damages of land-use change.

    Build wind exposure matrices, shift-share instruments and regressions,
    then account for the deaths and costs a trade shock sends downwind.
    """
    ctx.ensure_object(dict)
    ctx.obj.update(
        config_path=config_path,
        overrides={"seed": seed, "threads": threads, "out_dir": out_dir},
        verbose=verbose,
    )


@cli.command("aoe-build")
@click.option("--cities", type=click.Path(dir_okay=False), help="City registry CSV")
@click.option("--wind", type=click.Path(dir_okay=False), help="Wind samples CSV")
@click.option("--params", type=click.Choice(list(PRESETS)), default=None, help="Score parameter preset")
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--rad0", type=float, default=None, help="Initial search radius (degrees)")
@click.option("--rad-inc", type=float, default=None, help="Search radius increment per step")
@click.option("--max-offaxis", type=float, default=None, help="Angular cutoff (radians)")
@click.option("--n-steps", type=int, default=None)
@click.option("--calm-speed-eps", type=float, default=None)
@click.option("--res", type=click.IntRange(min=2), default=None, help="Grid nodes along the longer side")
@click.option("--period-start", default=None, help="First month (YYYY-MM)")
@click.option("--period-end", default=None, help="Last month (YYYY-MM)")
@click.option("--heatmap-sender", default=None, help="Export a grid heatmap for this sender")
@click.option("--heatmap-day", default=None, help="Start day of the heatmap streamline (YYYY-MM-DD)")
@click.option("--dump-grid", is_flag=True, help="Also write the rasterized daily wind grids")
@click.pass_context
@handle_errors
def aoe_build(ctx, cities, wind, params, alpha, beta, gamma, rad0, rad_inc, max_offaxis, n_steps,
              calm_speed_eps, res, period_start, period_end, heatmap_sender, heatmap_day, dump_grid):
    """Build the monthly sender x receiver wind score matrix and its bins."""
    if (period_start is None) != (period_end is None):
        raise click.UsageError("--period-start and --period-end must be given together")
    score_overrides = {
        "alpha": alpha, "beta": beta, "gamma": gamma, "rad0": rad0, "rad_inc": rad_inc,
        "max_offaxis": max_offaxis, "n_steps": n_steps, "calm_speed_eps": calm_speed_eps,
    }
    score_overrides = {k: v for k, v in score_overrides.items() if v is not None}
    config, store = _setup(
        ctx, {"cities": cities, "wind": wind},
        params=params, res=res,
        score_overrides=score_overrides or None,
        period=(period_start, period_end) if period_start else None,
    )
    create_header("Area of Effect", f"Preset '{config.params}', grid res {config.res}")

    registry = load_city_registry(config.input_path("cities"))
    samples = load_wind_samples(config.input_path("wind"), registry)
    spec = build_grid(registry, config.res)
    fields = show_spinner("Rasterizing daily wind fields...",
                          lambda: rasterize_days(samples, registry, spec, threads=config.threads))
    score_params = config.score_params()
    raws = show_spinner("Tracing streamlines...",
                        lambda: build_raw_scores(registry, fields, score_params, threads=config.threads))
    monthly = aggregate_monthly(aggregate_daily(raws), config.period)
    bins = compute_bins(monthly)
    binned = assign_bins(monthly, bins)

    store.write_csv("monthly_matrix.csv", monthly.frame)
    store.write_csv("binned.csv", binned)
    store.write_json("bins.json", bins.to_dict())
    if dump_grid:
        store.write_csv("wind_grid.csv", pd.concat([grid_frame(fields[d]) for d in sorted(fields)], ignore_index=True))
    if heatmap_sender:
        day = date.fromisoformat(heatmap_day) if heatmap_day else min(fields)
        heatmap = simulate_heatmap(heatmap_sender, day, fields, registry, spec, score_params)
        store.write_csv(f"heatmap_{heatmap_sender}_{day.isoformat()}.csv", heatmap)
    payload = {
        "grid": spec.to_dict(),
        "n_days": len(fields),
        "n_raw_scores": len(raws),
        "n_pairs": len(monthly.pairs()),
        "period": list(monthly.period_range) if monthly.period_range else None,
        "bins": bins.to_dict(),
    }
    store.write_json("aoe_report.json", build_report("aoe-build", payload, config.to_dict()))

    display_matrix_summary(monthly)
    console.print(create_bins_table(bins))
    _finish(store)


@cli.command()
@click.option("--trade", type=click.Path(dir_okay=False), help="Trade CSV")
@click.option("--imports", type=click.Path(dir_okay=False), help="World imports CSV")
@click.option("--population", type=click.Path(dir_okay=False), help="Region population CSV")
@click.option("--horizon", type=click.IntRange(min=1, max=6), default=None, help="Differencing horizon (years)")
@click.option("--year", "years", type=int, multiple=True, help="Instrument year (repeatable)")
@click.pass_context
@handle_errors
def iv(ctx, trade, imports, population, horizon, years):
    """Build the shift-share instrument for every region and year."""
    config, store = _setup(ctx, {"trade": trade, "imports": imports, "population": population},
                           iv_horizon=horizon, iv_years=list(years) or None)
    create_header("Shift-Share Instrument", f"{config.iv_horizon}-year differences")

    trade_frame = load_trade(config.input_path("trade"))
    imports_frame = load_imports(config.input_path("imports"))
    population_frame = load_region_population(config.input_path("population"))
    h = config.iv_horizon
    if config.iv_years:
        iv_years = sorted(config.iv_years)
    else:
        trade_years = set(trade_frame["year"].astype(int))
        import_years = set(imports_frame["year"].astype(int))
        iv_years = sorted(y for y in trade_years if y - h in trade_years and y + h in import_years)
    if not iv_years:
        raise SpecificationError(f"No year has both base-year trade and a full {h}-year import window")

    panel = show_spinner("Computing exposures...",
                         lambda: build_iv_panel(trade_frame, imports_frame, population_frame, iv_years, h))
    concentration = pd.concat([
        ShiftShareDesign.from_inputs(trade_frame, population_frame, y, h).herfindahl()
        .rename_axis("region_id").reset_index().assign(year=y)
        for y in iv_years
    ], ignore_index=True)
    table = panel.merge(concentration, on=["region_id", "year"], how="left")

    store.write_csv("iv.csv", panel)
    store.write_csv("herfindahl.csv", concentration[["region_id", "year", "herfindahl"]])
    payload = {
        "years": iv_years,
        "horizon": h,
        "n_regions": int(panel["region_id"].nunique()),
        "mean_herfindahl": float(concentration["herfindahl"].mean()),
    }
    store.write_json("iv_report.json", build_report("iv", payload, config.to_dict()))

    console.print(create_iv_table(table))
    _finish(store)


@cli.command("fit")
@click.option("--panel", type=click.Path(dir_okay=False), help="Estimation panel CSV")
@click.option("--roles", type=click.Path(dir_okay=False), help="Role sidecar (default <panel>.roles.json)")
@click.option("--bins", "bin_design", is_flag=True, help="Fit the downwind bin design instead")
@click.option("--binned", type=click.Path(dir_okay=False), help="Binned matrix CSV (with --bins)")
@click.option("--forest", type=click.Path(dir_okay=False), help="Sender forest CSV (with --bins)")
@click.option("--outcomes", type=click.Path(dir_okay=False), help="Receiver outcomes CSV (with --bins)")
@click.option("--reference-bin", default=None, help="Omitted bin (default 10th)")
@click.option("--frequency", type=click.Choice(["monthly", "annual"]), default=None)
@click.pass_context
@handle_errors
def fit_command(ctx, panel, roles, bin_design, binned, forest, outcomes, reference_bin, frequency):
    """Estimate a fixed-effects OLS/2SLS design or the downwind bin design."""
    config, store = _setup(
        ctx,
        {"panel": panel, "panel_roles": roles, "binned": binned, "forest": forest, "outcomes": outcomes},
        reference_bin=reference_bin, bin_frequency=frequency,
    )
    if bin_design:
        _fit_bins(config, store)
    else:
        create_header("Panel Regression")
        table = _load_panel(config)
        spec = _design(config, table)
        spec.check_panel(table)
        result = show_spinner("Estimating...", lambda: fit(table, spec))
        store.write_csv("fit_coefficients.csv", result.to_frame())
        store.write_json("fit_report.json", build_report("fit", result.to_dict(spec), config.to_dict()))
        console.print(create_fit_table(result))
        display_fit_summary(result)
    _finish(store)


def _fit_bins(config: RunConfig, store: ArtifactStore) -> None:
    create_header("Downwind Bin Design", f"Reference bin '{config.reference_bin}', {config.bin_frequency}")
    binned = load_binned(config.input_path("binned"))
    z_loss = standardize_loss(load_forest(config.input_path("forest")), config.forest_scope)
    z_loss = z_loss.rename(columns={"z_loss": config.exposure})
    outcomes = load_outcomes(config.input_path("outcomes"), config.bin_outcome)
    panel = build_downwind_panel(binned, z_loss, outcomes, exposure_column=config.exposure)
    template = config.design_spec() or DesignSpec(outcome=config.bin_outcome)
    result = show_spinner("Estimating...", lambda: fit_downwind_bins(
        panel, config.exposure, template, reference=config.reference_bin, frequency=config.bin_frequency))

    store.write_csv("bin_coefficients.csv", result.table)
    payload = {"reference": result.reference, "bins": result.table.to_dict("records"),
               "fit": result.fit.to_dict(result.spec)}
    store.write_json("bin_fit_report.json", build_report("fit-bins", payload, config.to_dict()))
    console.print(create_bin_table(result.table))
    display_fit_summary(result.fit)


@cli.command()
@click.option("--panel", type=click.Path(dir_okay=False), help="Estimation panel CSV")
@click.option("--roles", type=click.Path(dir_okay=False), help="Role sidecar")
@click.option("--trade", type=click.Path(dir_okay=False), help="Trade CSV")
@click.option("--population", type=click.Path(dir_okay=False), help="Region population CSV")
@click.option("--reps", type=click.IntRange(min=1), default=None, help="Placebo replications")
@click.option("--level", "levels", type=float, multiple=True, help="Test level (repeatable)")
@click.option("--iv-column", default="iv", show_default=True)
@click.pass_context
@handle_errors
def placebo(ctx, panel, roles, trade, population, reps, levels, iv_column):
    """Rejection rates when the real import shifts are replaced by noise."""
    config, store = _setup(ctx, {"panel": panel, "panel_roles": roles, "trade": trade, "population": population},
                           placebo_reps=reps, placebo_levels=list(levels) or None)
    seed = config.require_seed()
    create_header("Placebo Shocks", f"{config.placebo_reps} replications, seed {seed}")
    table = _load_panel(config)
    spec = _design(config, table)
    spec.check_panel(table)
    designs = _iv_designs(config, table.frame["year"].astype(int))
    result = show_spinner("Replicating...", lambda: placebo_rejection(
        table.frame, designs, spec, seed, config.placebo_reps, config.placebo_levels,
        iv_column=iv_column, threads=config.threads))

    draws = pd.DataFrame({"rep": range(result.reps), "coef": result.coefficients, "p": result.pvalues})
    store.write_csv("placebo_draws.csv", draws)
    store.write_json("placebo_report.json", build_report("placebo", result.to_dict(), config.to_dict()))
    console.print(create_placebo_table(result))
    _finish(store)


@cli.command()
@click.option("--panel", type=click.Path(dir_okay=False), help="Estimation panel CSV")
@click.option("--roles", type=click.Path(dir_okay=False), help="Role sidecar")
@click.option("--characteristic", "characteristics", multiple=True, help="Pre-period characteristic (repeatable)")
@click.option("--iv-column", default="iv", show_default=True)
@click.pass_context
@handle_errors
def balance(ctx, panel, roles, characteristics, iv_column):
    """Regress pre-period characteristics on the instrument."""
    config, store = _setup(ctx, {"panel": panel, "panel_roles": roles},
                           characteristics=list(characteristics) or None)
    if not config.characteristics:
        raise SpecificationError("No characteristics to test: pass --characteristic or set 'characteristics'")
    create_header("Balance Test", f"{len(config.characteristics)} characteristic(s)")
    table = _load_panel(config)
    template = _design(config, table)
    result = show_spinner("Estimating...", lambda: balance_test(
        table.frame, config.characteristics, iv_column, template, threads=config.threads))

    store.write_csv("balance.csv", result)
    store.write_json("balance_report.json", build_report("balance", {"table": result.to_dict("records")}, config.to_dict()))
    console.print(create_balance_table(result))
    _finish(store)


@cli.command()
@click.option("--binned", type=click.Path(dir_okay=False), help="Binned matrix CSV")
@click.option("--trade-shock", type=click.Path(dir_okay=False), help="Per-sender trade shock CSV")
@click.option("--land", type=click.Path(dir_okay=False), help="Sender land area CSV")
@click.option("--forest", type=click.Path(dir_okay=False), help="Sender forest CSV")
@click.option("--coefficients", type=click.Path(dir_okay=False), help="Bin coefficient CSV")
@click.option("--cities", type=click.Path(dir_okay=False), help="City registry CSV (receiver populations)")
@click.option("--beta-trade", type=float, default=None, help="Forest response to trade")
@click.option("--vsl", type=float, default=None, help="Override value of a statistical life (USD)")
@click.option("--export-total", type=float, default=None, help="Export value for the damage ratio")
@click.pass_context
@handle_errors
def account(ctx, binned, trade_shock, land, forest, coefficients, cities, beta_trade, vsl, export_total):
    """Turn a trade shock into downwind deaths and monetized losses."""
    config, store = _setup(
        ctx,
        {"binned": binned, "trade_shock": trade_shock, "land": land, "forest": forest,
         "coefficients": coefficients, "cities": cities},
        beta_trade=beta_trade, export_total=export_total,
        vsl={"override_vsl": vsl} if vsl is not None else None,
    )
    create_header("Damage Accounting")
    coefs = CoefficientTable.from_frame(load_coefficients(config.input_path("coefficients")))
    forest_sd = standardize_loss(load_forest(config.input_path("forest")), config.forest_scope)
    ledger = build_ledger(
        load_binned(config.input_path("binned")),
        load_trade_shock(config.input_path("trade_shock")),
        config.beta_trade,
        load_land(config.input_path("land")),
        forest_sd[["sender_id", "sd"]],
        coefs,
        load_city_registry(config.input_path("cities")),
        config.vsl_params(),
        config.export_total,
    )
    store.write_csv("ledger.csv", ledger.senders)
    store.write_csv("received.csv", ledger.receivers)
    store.write_json("account_report.json", build_report("account", ledger.to_dict(), config.to_dict()))
    console.print(create_ledger_table(ledger))
    display_ledger_totals(ledger)
    _finish(store)


@cli.command()
@click.option("--n-cities", type=click.IntRange(min=2), default=None)
@click.option("--n-days", type=click.IntRange(min=1), default=None)
@click.option("--wind-regime", type=click.Choice([r.value for r in WindRegime]), default=None)
@click.option("--n-years", type=click.IntRange(min=1), default=None)
@click.pass_context
@handle_errors
def synth(ctx, n_cities, n_days, wind_regime, n_years):
    """Generate a synthetic input bundle that runs through every command."""
    settings = {"n_cities": n_cities, "n_days": n_days, "wind_regime": wind_regime, "n_years": n_years}
    config, store = _setup(ctx, synth={k: v for k, v in settings.items() if v is not None} or None)
    synth_config = config.synth_config()
    create_header("Synthetic Data", f"seed {synth_config.seed}, {synth_config.n_cities} cities")
    data = show_spinner("Generating...", lambda: generate_data(synth_config))

    for name, frame in bundle_frames(data).items():
        store.write_csv(name, frame)
    store.write_csv("panel.csv", data.panel.frame)
    store.write_json("panel.roles.json", data.panel.roles_to_dict())

    def here(name: str) -> str:
        return str(store.out_dir / name)

    run_config = {
        "inputs": {
            "cities": here("cities.csv"), "wind": here("wind.csv"), "panel": here("panel.csv"),
            "panel_roles": here("panel.roles.json"), "trade": here("trade.csv"), "imports": here("imports.csv"),
            "population": here("population.csv"), "forest": here("forest.csv"), "land": here("land.csv"),
            "outcomes": here("outcomes.csv"), "trade_shock": here("trade_shock.csv"),
            "binned": here("binned.csv"), "coefficients": here("bin_coefficients.csv"),
        },
        "seed": synth_config.seed,
        "iv_horizon": synth_config.iv_horizon,
        "characteristics": list(BALANCE_CHARACTERISTICS),
        "out_dir": str(store.out_dir),
    }
    store.write_json("run_config.json", run_config)
    store.write_json("synth_report.json", build_report("synth", synth_config.to_dict(), config.to_dict()))
    show_info(f"Continue with: telecoupling --config {here('run_config.json')} aoe-build")
    _finish(store)


if __name__ == "__main__":
    cli()
