"""
Utility functions for console output and logging.
"""

import logging
from typing import Any, Callable, Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.text import Text


console = Console()
err_console = Console(stderr=True)


def configure_logging(level: str = "WARNING") -> None:
    """Route the package's log records through a rich handler."""
    handler = RichHandler(console=err_console, show_time=False, show_path=False, markup=False)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    root = logging.getLogger("telecoupling")
    for existing in list(root.handlers):
        if isinstance(existing, RichHandler):
            root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level.upper())
    root.propagate = False


def show_spinner(message: str, task: Callable[[], Any]) -> Any:
    """
    Show a spinner while executing a task.

    Args:
        message: Message to display
        task: Function to execute

    Returns:
        Result of the task function
    """
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
        transient=True
    ) as progress:
        progress.add_task(description=message, total=None)
        return task()


def show_success(message: str) -> None:
    """Display a success message with icon."""
    console.print(f"[green]✅ {message}[/green]")


def show_error(message: str) -> None:
    """Display an error message with icon."""
    err_console.print(f"[red]❌ {message}[/red]")


def show_warning(message: str) -> None:
    """Display a warning message with icon."""
    console.print(f"[yellow]⚠️  {message}[/yellow]")


def show_info(message: str) -> None:
    """Display an info message with icon."""
    console.print(f"[blue]ℹ️  {message}[/blue]")


def create_header(title: str, subtitle: Optional[str] = None) -> None:
    """Print a header panel for a command."""
    header_text = Text(title, style="bold cyan")
    if subtitle:
        header_text.append(f"\n{subtitle}", style="dim")

    panel = Panel(
        header_text,
        expand=False,
        border_style="cyan",
        padding=(1, 2)
    )
    console.print(panel)
    console.print()


def format_number(value: Optional[float], digits: int = 4) -> str:
    """Compact numeric display; missing values print as '-'."""
    if value is None or value != value:
        return "-"
    if abs(value) >= 1e6:
        return f"{value:,.0f}"
    return f"{value:.{digits}g}"


def format_money(value: Optional[float]) -> str:
    """USD amounts scaled to millions or billions."""
    if value is None or value != value:
        return "-"
    if abs(value) >= 1e9:
        return f"${value / 1e9:,.1f}B"
    if abs(value) >= 1e6:
        return f"${value / 1e6:,.2f}M"
    return f"${value:,.0f}"
