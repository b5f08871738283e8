"""
Display utilities for formatting results.
"""

from typing import Optional

import pandas as pd
from rich.console import Console
from rich.table import Table
from rich.text import Text

from .accounting import DamageLedger
from .aoe import ScoreMatrix, WindBins, DECILE_BINS
from .econometrics import FitResult
from .shiftshare import PlaceboResult
from .utils import format_money, format_number, show_warning


console = Console()


def get_pvalue_display(p: float) -> Text:
    """p-value with significance stars."""
    if p != p:
        return Text("-", style="dim")
    stars = "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""
    return Text(f"{p:.3f}{stars}", style="green" if stars else "white")


def create_fit_table(fit: FitResult, title: Optional[str] = None) -> Table:
    """Create a rich table for regression coefficients."""
    table = Table(title=title or f"{fit.method.upper()} estimates", show_header=True, header_style="bold magenta")
    table.add_column("Term", style="cyan")
    table.add_column("Coef", justify="right")
    table.add_column("SE", justify="right")
    table.add_column("p", justify="right")
    table.add_column(f"{fit.ci_level:.0%} CI", justify="right", style="dim")

    ci = fit.conf_int()
    for k, name in enumerate(fit.names):
        table.add_row(
            name,
            format_number(fit.coef[k]),
            format_number(fit.std_errors[k]),
            get_pvalue_display(float(fit.pvalues[k])),
            f"[{format_number(ci[k, 0])}, {format_number(ci[k, 1])}]",
        )
    return table


def display_fit_summary(fit: FitResult) -> None:
    """Print sample size, variance type and diagnostics under a fit table."""
    console.print(f"[bold]Observations:[/bold] {fit.n_obs}  [bold]Variance:[/bold] {fit.vcov_type}"
                  f"  [bold]Demeaning sweeps:[/bold] {fit.iterations}")
    if fit.first_stage_F is not None:
        style = "red" if fit.diagnostics.get("weak_rank") else "green"
        console.print(f"[bold]First-stage F (cluster-robust Wald):[/bold] [{style}]{format_number(fit.first_stage_F)}[/{style}]")
    dropped = fit.diagnostics.get("collinear_dropped") or []
    if dropped:
        console.print(f"[yellow]Dropped as collinear:[/yellow] {', '.join(dropped)}")
    if fit.diagnostics.get("vcov_psd") is False:
        show_warning("Two-way cluster variance is not positive semi-definite")
    console.print()


def create_bin_table(table: pd.DataFrame, title: Optional[str] = None) -> Table:
    """Per-bin interaction coefficients."""
    out = Table(title=title or "Downwind bin effects", show_header=True, header_style="bold magenta")
    out.add_column("Bin", style="cyan")
    out.add_column("Coef", justify="right")
    out.add_column("SE", justify="right")
    out.add_column("CI", justify="right", style="dim")
    for row in table.itertuples(index=False):
        if row.dropped:
            out.add_row(row.bin, Text("dropped", style="yellow"), "-", "-")
            continue
        out.add_row(row.bin, format_number(row.coef), format_number(row.se),
                    f"[{format_number(row.ci_lo)}, {format_number(row.ci_hi)}]")
    return out


def create_bins_table(bins: WindBins) -> Table:
    """Score ranges of the decile bins."""
    table = Table(title="Wind score deciles", show_header=True, header_style="bold magenta")
    table.add_column("Bin", style="cyan")
    table.add_column("Upper cut", justify="right")
    cuts = list(bins.cuts) + [None]
    for label, cut in zip(DECILE_BINS, cuts):
        table.add_row(label.value, format_number(cut) if cut is not None else "max")
    return table


def display_matrix_summary(monthly: ScoreMatrix) -> None:
    frame = monthly.frame
    positive = int((frame["score"] > 0).sum())
    console.print(f"[bold]Pairs:[/bold] {len(monthly.pairs())}  [bold]Entries:[/bold] {len(frame)}"
                  f"  [bold]Positive:[/bold] {positive}")
    if monthly.period_range:
        console.print(f"[bold]Period:[/bold] {monthly.period_range[0]} .. {monthly.period_range[1]}")
    console.print()


def create_balance_table(table: pd.DataFrame) -> Table:
    out = Table(title="Balance test", show_header=True, header_style="bold magenta")
    out.add_column("Characteristic", style="cyan")
    out.add_column("Coef", justify="right")
    out.add_column("SE", justify="right")
    out.add_column("p", justify="right")
    out.add_column("q", justify="right")
    for row in table.itertuples(index=False):
        out.add_row(row.characteristic, format_number(row.coef), format_number(row.se),
                    get_pvalue_display(row.p), get_pvalue_display(row.q))
    return out


def create_placebo_table(result: PlaceboResult) -> Table:
    table = Table(title=f"Placebo rejection ({result.reps} reps)", show_header=True, header_style="bold magenta")
    table.add_column("Level", style="cyan")
    table.add_column("Rejection rate", justify="right")
    for level, rate in sorted(result.rates.items(), reverse=True):
        table.add_row(f"{level:g}", f"{rate:.3f}")
    return table


def create_iv_table(iv: pd.DataFrame, limit: int = 10) -> Table:
    """Instrument values (region_id, year, iv, herfindahl) with share concentration."""
    table = Table(title="Shift-share instrument", show_header=True, header_style="bold magenta")
    table.add_column("Region", style="cyan")
    table.add_column("Year", justify="right")
    table.add_column("IV", justify="right")
    table.add_column("Herfindahl", justify="right", style="dim")
    for row in iv.head(limit).itertuples(index=False):
        table.add_row(str(row.region_id), str(row.year), format_number(row.iv), format_number(row.herfindahl))
    if len(iv) > limit:
        table.caption = f"{len(iv) - limit} more row(s) in the CSV"
    return table


def create_ledger_table(ledger: DamageLedger, limit: int = 10) -> Table:
    """Largest senders by excess deaths."""
    table = Table(title="Damage ledger (top senders)", show_header=True, header_style="bold magenta")
    table.add_column("Sender", style="cyan")
    table.add_column("Deforestation (ha)", justify="right")
    table.add_column("Excess deaths", justify="right")
    table.add_column("Loss", justify="right", style="green")
    top = ledger.senders.sort_values("excess_deaths", ascending=False, kind="mergesort").head(limit)
    for row in top.itertuples(index=False):
        table.add_row(row.sender_id, format_number(row.deforestation_ha), format_number(row.excess_deaths),
                      format_money(row.monetized_loss))
    return table


def display_ledger_totals(ledger: DamageLedger) -> None:
    totals = ledger.totals
    console.print("\n[bold cyan]National totals[/bold cyan]")
    console.print(f"[bold]Deforestation:[/bold] {format_number(totals['deforestation_ha'])} ha")
    console.print(f"[bold]Excess deaths:[/bold] {format_number(totals['excess_deaths'])}"
                  f" (gross positive {format_number(totals['gross_positive_deaths'])})")
    console.print(f"[bold]VSL:[/bold] {format_money(totals['vsl'])} ({totals['vsl_source']})")
    console.print(f"[bold]Monetized loss:[/bold] {format_money(totals['monetized_loss'])}")
    if totals.get("damage_ratio") is not None:
        console.print(f"[bold]Loss per unit of exports:[/bold] {format_number(totals['damage_ratio'])}")
    console.print()
