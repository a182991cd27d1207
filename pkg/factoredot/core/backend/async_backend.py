import asyncio
import atexit
import logging
import threading
from typing import List, Optional, Sequence

from factoredot.core.backend import BaseBackend, CellRunner, row_order
from factoredot.logging.dash_logger import DashboardLogger
from factoredot.types import SweepCell, SweepRow

logger = logging.getLogger("factoredot.backend")


class AsyncBackend(BaseBackend):
    """
    Runs cells on worker threads, at most `max_concurrent` at a time.

    The backend owns an asyncio event loop running in a daemon thread; each
    cell is shipped to a thread with `asyncio.to_thread` under a semaphore.
    NumPy releases the GIL in its kernels, so cells overlap for real.
    """

    def __init__(
        self,
        dash_logger: Optional[DashboardLogger] = None,
        *,
        max_concurrent: int = 4,
    ):
        """
        :param dash_logger: Dashboard that follows cell states.
        :param max_concurrent: Maximum number of cells running at once.
        """
        super().__init__(dash_logger)
        if max_concurrent < 1:
            raise ValueError(f"max_concurrent must be >= 1, got {max_concurrent}")
        self._max_concurrent = max_concurrent

        # only touched from the loop thread after start-up
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._loop_thread: Optional[threading.Thread] = None
        self._shutdown_event = threading.Event()
        self._loop_ready_event = threading.Event()
        self._start_event_loop()

        atexit.register(self.shutdown)

    def _start_event_loop(self):
        def run_event_loop():
            self._loop = asyncio.new_event_loop()
            asyncio.set_event_loop(self._loop)
            self._loop_ready_event.set()
            try:
                self._loop.run_until_complete(self._wait_for_shutdown())
            finally:
                pending = asyncio.all_tasks(self._loop)
                for task in pending:
                    task.cancel()
                if pending:
                    self._loop.run_until_complete(
                        asyncio.gather(*pending, return_exceptions=True)
                    )
                self._loop.close()

        self._loop_thread = threading.Thread(target=run_event_loop, daemon=True)
        self._loop_thread.start()
        self._loop_ready_event.wait()

    async def _wait_for_shutdown(self):
        while not self._shutdown_event.is_set():
            await asyncio.sleep(0.1)

    def _run_coroutine(self, coro):
        if self._loop is None or self._loop.is_closed():
            raise RuntimeError("AsyncBackend event loop is not running")
        return asyncio.run_coroutine_threadsafe(coro, self._loop).result()

    async def _run_one(
        self, cell: SweepCell, runner: CellRunner, gate: asyncio.Semaphore
    ) -> SweepRow:
        async with gate:
            self._mark_running(cell)
            row = await asyncio.to_thread(runner, cell)
        self._mark_finished(cell, row)
        return row

    async def _run_all(self, cells: Sequence[SweepCell], runner: CellRunner) -> List[SweepRow]:
        gate = asyncio.Semaphore(self._max_concurrent)
        return await asyncio.gather(*(self._run_one(c, runner, gate) for c in cells))

    def run(self, cells: Sequence[SweepCell], runner: CellRunner) -> List[SweepRow]:
        self._mark_queued(cells)
        logger.debug(f"Running {len(cells)} cells on up to {self._max_concurrent} workers")
        rows = self._run_coroutine(self._run_all(list(cells), runner))
        return sorted(rows, key=row_order)

    def shutdown(self):
        atexit.unregister(self.shutdown)
        self._shutdown_event.set()
        if self._loop_thread is not None:
            self._loop_thread.join(timeout=5.0)
