import logging
from typing import Any, Dict, List, Optional, Sequence

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

# stdout carries artifacts; everything human-facing goes to stderr
console = Console(stderr=True)

LEVELS = ["WARNING", "INFO", "DEBUG"]


def configure_logging(verbosity: int = 0, default_level: str = "WARNING", quiet: bool = False):
    """
    Route package logging through a rich handler on stderr.

    Args:
    verbosity (int): Number of -v flags; each one lowers the threshold a step.
    default_level (str): Level used without -v (OFFLAB_LOG_LEVEL).
    quiet (bool): Only errors.
    """
    if quiet:
        level = logging.ERROR
    else:
        start = LEVELS.index(default_level) if default_level in LEVELS else 0
        level = getattr(logging, LEVELS[min(start + verbosity, len(LEVELS) - 1)])
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)


def display_error(message: str):
    console.print(Panel(message, title="Error", style="bold red"))


def display_warning(message: str):
    console.print(Panel(message, title="Warning", style="yellow"))


def display_success(message: str):
    console.print(Panel(message, title="Success", style="bold green"))


def display_table(title: str, records: List[Dict[str, Any]], columns: Optional[Sequence[str]] = None):
    """
    Display result rows in a table.

    Args:
    title (str): Table title.
    records (List[Dict]): Rows to show.
    columns (Sequence[str]): Columns to show; all keys of the first row by default.
    """
    if not records:
        return
    columns = list(columns or records[0].keys())
    table = Table(title=title)
    for index, column in enumerate(columns):
        table.add_column(column, style="cyan" if index == 0 else "magenta", no_wrap=index == 0)
    for record in records:
        table.add_row(*(_cell(record.get(column)) for column in columns))
    console.print(table)


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)
