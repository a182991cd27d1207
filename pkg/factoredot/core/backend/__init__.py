from typing import Callable, List, Sequence

from factoredot.logging.dash_logger import (
    CellStatus,
    DashboardLogger,
    PrimitiveDashboardLogger,
)
from factoredot.types import SweepCell, SweepRow

CellRunner = Callable[[SweepCell], SweepRow]


def cell_label(cell: SweepCell) -> str:
    return f"{cell['value']}/{cell['method']}#{cell['replicate']}"


def row_order(row: SweepRow):
    return (row["value"], row["method"], row["replicate"])


class BaseBackend:
    """
    Runs independent sweep cells and hands back their rows in a fixed order,
    whatever order they finished in.
    """

    def __init__(self, dash_logger: DashboardLogger = None):
        self.dash_logger = dash_logger if dash_logger is not None else PrimitiveDashboardLogger()

    def run(self, cells: Sequence[SweepCell], runner: CellRunner) -> List[SweepRow]:
        """
        Run every cell through `runner`.

        :returns: One row per cell, sorted by (value, method, replicate).
        """
        raise NotImplementedError

    def shutdown(self):
        """Release workers. Safe to call twice."""
        pass

    def _mark_queued(self, cells: Sequence[SweepCell]):
        for cell in cells:
            self.dash_logger.update_cell(cell_label(cell), CellStatus.QUEUED)

    def _mark_running(self, cell: SweepCell):
        self.dash_logger.update_cell(cell_label(cell), CellStatus.RUNNING)

    def _mark_finished(self, cell: SweepCell, row: SweepRow):
        if row["status"] != "ok":
            status = CellStatus.FAILED
        elif row["approx"]:
            status = CellStatus.APPROXIMATE
        else:
            status = CellStatus.DONE
        self.dash_logger.update_cell(cell_label(cell), status)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
