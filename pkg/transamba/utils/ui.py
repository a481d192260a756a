import time
from contextlib import contextmanager
from typing import Iterable, Literal, Optional, Sequence

from rich.console import Console
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)
from rich.table import Table
from rich.text import Text

# Global console instance
_console = Console()


def get_console() -> Console:
    return _console


def toast(
    message: str,
    status: Literal["info", "success", "warning", "error"] = "info",
    duration: Optional[float] = None,
) -> None:
    """
    Displays a toast message to the user with rich formatting.

    Args:
        message: The message to display
        status: The type of message (info, success, warning, error)
        duration: How long to keep the message up (None for instant display)
    """
    status_colors = {
        "info": "blue",
        "success": "green",
        "warning": "yellow",
        "error": "red",
    }
    status_icons = {"info": "ℹ️", "success": "✅", "warning": "⚠️", "error": "❌"}

    color = status_colors.get(status, "blue")
    styled_text = Text()
    styled_text.append(f"{status_icons.get(status, 'ℹ️')} ", style=color)
    styled_text.append(message, style=color)

    _console.print(Panel(styled_text, border_style=color, padding=(0, 1)))
    if duration:
        time.sleep(duration)


@contextmanager
def epoch_progress(description: str, total: int):
    """
    Progress bar for a fixed number of steps (training epochs, volumes).

    Usage:
        with epoch_progress("Training", total=20) as advance:
            for epoch in range(20):
                ...
                advance()
    """
    progress = Progress(
        SpinnerColumn(),
        TextColumn("[bold blue]{task.description}"),
        BarColumn(),
        TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
        TimeElapsedColumn(),
        console=_console,
        transient=True,
    )
    with progress:
        task_id = progress.add_task(description, total=total)
        yield lambda: progress.update(task_id, advance=1)


def print_table(title: str, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> Table:
    table = Table(title=title, show_header=True, header_style="bold magenta")
    for column in columns:
        table.add_column(column)
    for row in rows:
        table.add_row(*(str(value) for value in row))
    _console.print(table)
    return table


__all__ = ["epoch_progress", "get_console", "print_table", "toast"]
