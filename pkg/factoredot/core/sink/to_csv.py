"""
Sweep result tables: a schema comment line followed by a headed CSV.
"""

import logging
import re
from pathlib import Path
from typing import Dict, List, Tuple, Union

import polars as pl

from factoredot.core.exception import FormatError
from factoredot.types import SWEEP_SCHEMA_VERSION, SweepRow

logger = logging.getLogger("factoredot.sink")

SWEEP_SCHEMA = {
    "value": pl.Int64,
    "method": pl.Utf8,
    "replicate": pl.Int64,
    "seed": pl.Int64,
    "estimate": pl.Float64,
    "ground_truth": pl.Float64,
    "abs_error": pl.Float64,
    "runtime_ms": pl.Float64,
    "status": pl.Utf8,
    "approx": pl.Boolean,
}

_META_PATTERN = re.compile(r"^# factoredot-sweep (.*)$")


def schema_line(protocol: str) -> str:
    return f"# factoredot-sweep schema={SWEEP_SCHEMA_VERSION} protocol={protocol}"


def write_to_csv(
    csv_fpath: Path,
    rows: Union[List[SweepRow], pl.DataFrame],
    *,
    protocol: str,
    force: bool = False,
) -> pl.DataFrame:
    """
    Write sweep rows after the schema comment line, through a temporary
    sibling that replaces the target.

    :raises FileExistsError: if the file exists and force is False.
    """
    csv_fpath = Path(csv_fpath)
    if csv_fpath.exists() and not force:
        raise FileExistsError(f"{csv_fpath} exists; pass --force to overwrite")

    frame = rows if isinstance(rows, pl.DataFrame) else pl.DataFrame(rows, schema=SWEEP_SCHEMA)
    body = frame.select(list(SWEEP_SCHEMA)).write_csv()

    csv_fpath.parent.mkdir(parents=True, exist_ok=True)
    tmp_fpath = csv_fpath.with_suffix(csv_fpath.suffix + ".tmp")
    tmp_fpath.write_text(schema_line(protocol) + "\n" + body, encoding="utf-8")
    tmp_fpath.replace(csv_fpath)
    return frame


def read_results(csv_fpath: Union[str, Path]) -> Tuple[Dict[str, str], pl.DataFrame]:
    """
    Read a sweep table back.

    :returns: (metadata from the schema line, rows)
    :raises FormatError: if the first line is not a schema line.
    """
    csv_fpath = Path(csv_fpath)
    with csv_fpath.open(encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
    match = _META_PATTERN.match(first)
    if match is None:
        raise FormatError(f"{csv_fpath} does not start with a factoredot-sweep schema line")
    meta = dict(part.split("=", 1) for part in match.group(1).split())
    frame = pl.read_csv(csv_fpath, skip_rows=1, schema=SWEEP_SCHEMA)
    return meta, frame


class ResultWriter:
    def __init__(self, csv_fpath: Path, *, protocol: str = "default", force: bool = False):
        """
        Buffers sweep rows and writes them as one table.

        :param protocol: Tag recorded in the schema line.
        :param force: Overwrite an existing file on commit.
        """
        self.csv_fpath = Path(csv_fpath)
        self.protocol = protocol
        self.force = force
        self._log: List[SweepRow] = []

    def log(self, row: SweepRow):
        """Buffer one row. See commit()."""
        self._log.append(row)

    def extend(self, rows: List[SweepRow]):
        self._log.extend(rows)

    def __len__(self):
        return len(self._log)

    def commit(self) -> pl.DataFrame:
        """Write all buffered rows and clear the buffer."""
        frame = write_to_csv(self.csv_fpath, self._log, protocol=self.protocol, force=self.force)
        logger.info(f"Wrote {frame.height} sweep rows to {self.csv_fpath}")
        self._log = []
        return frame
