"""
CSV point clouds: one point per line, d comma-separated floats, optionally
followed by a label token. No header unless asked for.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import polars as pl

from factoredot.core.exception import (
    EmptyInputError,
    FormatError,
    ParseError,
)
from factoredot.core.measures import DiscreteMeasure, LabeledDataset

logger = logging.getLogger("factoredot.file_io")


def _read_raw(path: Path, header: bool) -> pl.DataFrame:
    try:
        return pl.read_csv(
            path,
            has_header=header,
            infer_schema=False,
            truncate_ragged_lines=False,
        )
    except pl.exceptions.NoDataError as e:
        raise EmptyInputError(f"{path} is empty") from e
    except pl.exceptions.ComputeError as e:
        # polars rejects rows with more fields than the first one
        raise FormatError(f"{path}: ragged rows ({e})") from e


def load_csv(
    path: Union[str, Path], has_labels: bool = False, *, header: bool = False
) -> LabeledDataset:
    """
    Load a point cloud. Every point gets weight 1/n.

    :param path: CSV file to read.
    :param has_labels: Whether the last column holds a categorical label.
    :param header: Skip the first line.
    :raises EmptyInputError: if the file has no data rows.
    :raises FormatError: on ragged rows or empty labels.
    :raises ParseError: on a non-numeric coordinate, naming the row index.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)

    raw = _read_raw(path, header)
    if raw.height == 0:
        raise EmptyInputError(f"{path} has no data rows")

    columns = raw.columns
    coord_cols = columns[:-1] if has_labels else columns
    if not coord_cols:
        raise FormatError(f"{path}: no coordinate columns")

    # Short rows come back padded with nulls
    missing = raw.select(pl.any_horizontal(pl.all().is_null()).alias("missing"))
    bad_rows = np.flatnonzero(missing["missing"].to_numpy())
    if bad_rows.size:
        raise FormatError(
            f"{path}: row {int(bad_rows[0])} has {_count_fields(raw, int(bad_rows[0]))} "
            f"fields, expected {len(columns)}"
        )

    coords = raw.select(
        [pl.col(c).str.strip_chars().cast(pl.Float64, strict=False) for c in coord_cols]
    )
    unparsed = coords.select(pl.any_horizontal(pl.all().is_null()).alias("bad"))
    bad_rows = np.flatnonzero(unparsed["bad"].to_numpy())
    if bad_rows.size:
        row = int(bad_rows[0])
        tokens = ",".join(str(v) for v in raw.row(row))
        raise ParseError(f"{path}: row {row} has a non-numeric coordinate ({tokens})")

    labels = None
    if has_labels:
        label_series = raw[columns[-1]].str.strip_chars()
        empty = np.flatnonzero((label_series.str.len_chars() == 0).to_numpy())
        if empty.size:
            raise FormatError(f"{path}: row {int(empty[0])} has an empty label")
        labels = tuple(label_series.to_list())

    points = coords.to_numpy().astype(np.float64)
    logger.debug(f"Loaded {points.shape[0]} points of dim {points.shape[1]} from {path}")
    return LabeledDataset(DiscreteMeasure(points), labels)


def _count_fields(raw: pl.DataFrame, row: int) -> int:
    return sum(v is not None for v in raw.row(row))


def write_csv(
    path: Union[str, Path],
    dataset: Union[LabeledDataset, DiscreteMeasure],
    *,
    extra_column: Optional[Sequence[str]] = None,
    force: bool = False,
) -> Path:
    """
    Write a point cloud in the format `load_csv` reads.

    The file is written to a temporary sibling and moved into place.

    :param extra_column: One more token per row (e.g. predicted labels),
        written after the label column.
    :param force: Overwrite an existing file.
    :raises FileExistsError: if the file exists and force is False.
    """
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass force=True (--force) to overwrite")

    if isinstance(dataset, DiscreteMeasure):
        dataset = LabeledDataset(dataset)
    points = dataset.measure.points

    frame = pl.DataFrame(
        {f"x{i}": points[:, i] for i in range(points.shape[1])},
        schema={f"x{i}": pl.Float64 for i in range(points.shape[1])},
    )
    if dataset.labels is not None:
        frame = frame.with_columns(pl.Series("label", dataset.labels, dtype=pl.Utf8))
    if extra_column is not None:
        if len(extra_column) != dataset.measure.n:
            raise FormatError(
                f"extra column has {len(extra_column)} entries for {dataset.measure.n} rows"
            )
        frame = frame.with_columns(
            pl.Series("extra", [str(x) for x in extra_column], dtype=pl.Utf8)
        )

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_fpath = path.with_suffix(path.suffix + ".tmp")
    frame.write_csv(tmp_fpath, include_header=False)
    tmp_fpath.replace(path)
    logger.info(f"Wrote {dataset.measure.n} rows to {path}")
    return path
