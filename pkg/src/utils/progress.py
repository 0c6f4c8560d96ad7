from rich.console import Console
from rich.live import Live
from rich.table import Table
from rich.style import Style
from rich.text import Text
from typing import Dict, Optional

console = Console()

# Display order of pipeline stages; "rings:<i>" sorts with "rings", unknown names last.
STAGE_ORDER = [
    "synth",
    "segmentation",
    "preprocess",
    "features",
    "classifier",
    "rings",
    "experiment",
]

_DONE = (Style(color="green", bold=True), "✓")
_ERROR = (Style(color="red", bold=True), "✗")
_RUNNING = (Style(color="yellow"), "⋯")


def _stage_rank(stage: str) -> tuple[int, str]:
    base = stage.split(":")[0]
    return (STAGE_ORDER.index(base) if base in STAGE_ORDER else len(STAGE_ORDER), stage)


class PipelineProgress:
    """Live table of the latest item and status per pipeline stage."""

    def __init__(self):
        self.stage_status: Dict[str, Dict[str, Optional[str]]] = {}
        self.table = Table(show_header=False, box=None, padding=(0, 1))
        self.live = Live(self.table, console=console, refresh_per_second=4)
        self.started = False

    def start(self):
        if not self.started:
            self.live.start()
            self.started = True

    def stop(self):
        if self.started:
            self.live.stop()
            self.started = False

    def update_status(self, stage: str, item: Optional[str] = None, status: str = ""):
        """Record the latest item/status of a stage; redraws only while the display runs."""
        entry = self.stage_status.setdefault(stage, {"status": "", "item": None})
        if item:
            entry["item"] = item
        if status:
            entry["status"] = status
        if self.started:
            self._refresh_display()

    def _refresh_display(self):
        self.table.columns.clear()
        self.table.add_column(width=100)

        for stage in sorted(self.stage_status, key=_stage_rank):
            info = self.stage_status[stage]
            status = info["status"] or ""
            style, symbol = {"done": _DONE, "error": _ERROR}.get(status.lower(), _RUNNING)

            line = Text()
            line.append(f"{symbol} ", style=style)
            line.append(f"{stage.replace('_', ' ').title():<20}", style=Style(bold=True))
            if info["item"]:
                line.append(f"[{info['item']}] ", style=Style(color="cyan"))
            line.append(status, style=style)
            self.table.add_row(line)


# Create a global instance
progress = PipelineProgress()
