import shutil
import sys
import threading
from collections import Counter, OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, TextIO

from colorama import Fore, Style, init

init()


class CellStatus(Enum):
    """Lifecycle of one sweep cell (value x method x replicate)."""

    QUEUED = "·"
    RUNNING = "▸"
    DONE = "✓"
    FAILED = "✖"
    APPROXIMATE = "≈"  # finished, but the plug-in fell back to Sinkhorn


FINISHED = (CellStatus.DONE, CellStatus.FAILED, CellStatus.APPROXIMATE)


@dataclass
class CellEntry:
    label: str
    status: CellStatus


class DashboardLogger:
    """
    One self-rewriting console line summarizing a sweep: finished/total
    counts per outcome, then the most recent `k` cells that changed state.
    """

    def __init__(self, k: int = 6, display: bool = True, stream: Optional[TextIO] = None):
        self.k = k
        self.display = display
        self._stream = stream
        self._lock = threading.Lock()
        self._cells: "OrderedDict[str, CellEntry]" = OrderedDict()
        self._console_written = False

        self._status_colors = {
            CellStatus.QUEUED: Fore.LIGHTBLACK_EX,
            CellStatus.RUNNING: Fore.CYAN,
            CellStatus.DONE: Fore.GREEN,
            CellStatus.FAILED: Fore.RED,
            CellStatus.APPROXIMATE: Fore.YELLOW,
        }

    @property
    def stream(self) -> TextIO:
        return self._stream if self._stream is not None else sys.stderr

    def update_cell(self, label: str, status: CellStatus):
        """Record a state change for a cell and redraw."""
        with self._lock:
            entry = self._cells.pop(label, None)
            if entry is None:
                entry = CellEntry(label, status)
            entry.status = status
            # most recently touched cells go last
            self._cells[label] = entry
            if self.display:
                self._update_console()

    def counts(self) -> Dict[CellStatus, int]:
        with self._lock:
            return dict(Counter(e.status for e in self._cells.values()))

    def is_drawn(self) -> bool:
        return self.display and self._console_written

    def redraw(self):
        with self._lock:
            if self.display:
                self._update_console()

    def _render(self, width: int) -> str:
        counts = Counter(e.status for e in self._cells.values())
        finished = sum(counts[s] for s in FINISHED)
        prefix = f"{Fore.LIGHTBLACK_EX}[DASH]{Style.RESET_ALL} {finished}/{len(self._cells)}"
        tally = " ".join(
            f"{self._status_colors[s]}{s.value}{counts[s]}{Style.RESET_ALL}"
            for s in FINISHED
            if counts[s]
        )

        budget = max(1, (width - 30) // 24)
        recent = [e for e in self._cells.values() if e.status is not CellStatus.QUEUED]
        parts = [
            f"{self._status_colors[e.status]}{e.status.value} {e.label}{Style.RESET_ALL}"
            for e in recent[-min(self.k, budget):]
        ]
        return " ".join(x for x in (prefix, tally, "|" if parts else "", " ".join(parts)) if x)

    def _update_console(self):
        try:
            width = shutil.get_terminal_size().columns
        except (OSError, ValueError):
            width = 80

        line = self._render(width)
        if self._console_written:
            self.stream.write(f"\r\033[K{line}\r")
        else:
            self.stream.write(line)
            self._console_written = True
        self.stream.flush()

    def finalize_line(self):
        """Move past the dashboard line so later output starts on a fresh line."""
        with self._lock:
            if self._console_written:
                self.stream.write("\n")
                self.stream.flush()
                self._console_written = False


class PrimitiveDashboardLogger(DashboardLogger):
    """
    Dashboard that draws nothing. Cell states are still tracked for `counts`.
    """

    def __init__(self):
        super().__init__(display=False)

    def finalize_line(self):
        pass
