import logging
import sys
from typing import Optional, TextIO

from colorama import Fore, Style, init

from factoredot.logging.dash_logger import DashboardLogger

init()


class ColoredFormatter(logging.Formatter):
    _level_colors = {
        logging.INFO: Fore.CYAN,
        logging.WARNING: Fore.YELLOW,
        logging.ERROR: Fore.RED,
        logging.DEBUG: Fore.LIGHTBLACK_EX,
    }

    def format(self, record):
        color = self._level_colors.get(record.levelno, "")
        # format a copy so other handlers see the plain level name
        record = logging.makeLogRecord(record.__dict__)
        record.levelname = f"{color}[{record.levelname}]{Style.RESET_ALL}"
        return super().format(record)


class DashboardAwareHandler(logging.StreamHandler):
    """
    Stream handler that wipes the live sweep dashboard line before writing a
    record, so log lines and the dashboard never interleave.
    """

    def __init__(self, dash_logger: DashboardLogger, stream: Optional[TextIO] = None):
        super().__init__(stream)
        # None follows whatever sys.stderr is at emit time
        self._stream = stream
        self._dash_logger = dash_logger

    @property
    def stream(self) -> TextIO:
        return self._stream if self._stream is not None else sys.stderr

    @stream.setter
    def stream(self, value: Optional[TextIO]):
        self._stream = value

    def emit(self, record):
        try:
            msg = self.format(record)
            if self._dash_logger.is_drawn():
                self.stream.write(f"\r\033[K{msg}\n")
                self.stream.flush()
                self._dash_logger.redraw()
            else:
                self.stream.write(msg + self.terminator)
                self.stream.flush()
        except Exception:
            self.handleError(record)


_factoredot_log_handler: Optional[DashboardAwareHandler] = None


def get_factoredot_log_handler(dash_logger: DashboardLogger) -> DashboardAwareHandler:
    """The package's single console handler, created on first use."""
    global _factoredot_log_handler
    if _factoredot_log_handler is None:
        _factoredot_log_handler = DashboardAwareHandler(dash_logger)
        _factoredot_log_handler.setFormatter(ColoredFormatter("%(levelname)s %(message)s"))
    else:
        _factoredot_log_handler._dash_logger = dash_logger
    return _factoredot_log_handler
