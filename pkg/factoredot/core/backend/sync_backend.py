from typing import List, Sequence

from factoredot.core.backend import BaseBackend, CellRunner, row_order
from factoredot.types import SweepCell, SweepRow


class SyncBackend(BaseBackend):
    """
    Runs cells one after another on the calling thread.
    """

    def run(self, cells: Sequence[SweepCell], runner: CellRunner) -> List[SweepRow]:
        self._mark_queued(cells)
        rows = []
        for cell in cells:
            self._mark_running(cell)
            row = runner(cell)
            self._mark_finished(cell, row)
            rows.append(row)
        return sorted(rows, key=row_order)
