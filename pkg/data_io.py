"""
This program is free software: you can redistribute it under the terms
of the GNU General Public License, v. 3.0. If a copy of the GNU General
Public License was not distributed with this file, see <https://www.gnu.org/licenses/>.
"""

import os
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from errors import InvalidSpecification
from estimators import ExposureSample
from logutils import get_logger
from schemas import EstimateResult
from utils import get_configs

logger = get_logger(__name__)

WEIGHT_COLUMN = "weight"

Rows = Union[pd.DataFrame, Sequence[dict]]


def read_exposure_frame(path: str) -> pd.DataFrame:
    """
    Reads an exposure CSV: a header row, one column per exposure component,
    an optional ``weight`` column, ``#`` comments and blank lines ignored.

    Raises:
        InvalidSpecification: If the file is unreadable, empty or holds a
            non-numeric or non-finite cell.
    """
    try:
        frame = pd.read_csv(
            path,
            comment="#",
            skip_blank_lines=True,
            dtype=str,
            skipinitialspace=True,
        )
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as error:
        logger.error("Unable to read exposure data '%s': %s", path, error)
        raise InvalidSpecification(f"Unable to read exposure data '{path}': {error}") from error

    frame.columns = [str(column).strip() for column in frame.columns]
    if frame.empty or not len(frame.columns):
        raise InvalidSpecification(f"Exposure data '{path}' has no rows.")

    numeric = frame.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
    invalid = ~np.isfinite(numeric.to_numpy(dtype=float))
    if invalid.any():
        row, col = np.argwhere(invalid)[0]
        raise InvalidSpecification(
            f"Invalid value {frame.iat[row, col]!r} in row {row + 1}, column "
            f"'{frame.columns[col]}' of '{path}'."
        )
    return numeric.astype(float)


def read_exposure_csv(path: str) -> ExposureSample:
    """Reads exposures (and weights) into an :class:`ExposureSample`."""
    frame = read_exposure_frame(path)
    weight_columns = [column for column in frame.columns if column.lower() == WEIGHT_COLUMN]
    weights = frame[weight_columns[0]].to_numpy() if weight_columns else None
    exposures = frame.drop(columns=weight_columns)
    if exposures.shape[1] == 0:
        raise InvalidSpecification(f"Exposure data '{path}' has no exposure column.")

    logger.info(
        "Read %d observations of %s from %s",
        exposures.shape[0],
        ", ".join(exposures.columns),
        path,
    )
    return ExposureSample(exposures.to_numpy(), weights)


def _frame(rows: Rows) -> pd.DataFrame:
    return rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))


def estimate_rows(result: EstimateResult) -> list[dict]:
    """Flattens an estimate into a single table row."""
    lower, upper = result.ci if result.ci is not None else (None, None)
    return [
        {
            "quantity": result.quantity.value,
            "method": result.method.value,
            "point": result.point,
            "se": result.se,
            "ci_lower": lower,
            "ci_upper": upper,
            "level": result.level,
            "mu_obs": result.diagnostics.mu_obs,
            "mu_cft": result.diagnostics.mu_cft,
            "divergent": result.diagnostics.divergent,
            "notes": "; ".join(result.diagnostics.notes),
        }
    ]


def render_table(rows: Rows, float_format: str = "{:.6g}") -> str:
    """Aligned plain-text table."""
    frame = _frame(rows)
    if frame.empty:
        return ""
    return frame.to_string(index=False, float_format=float_format.format, na_rep="")


def render_csv(rows: Rows) -> str:
    return _frame(rows).to_csv(index=False, lineterminator="\n")


def render_json(document: BaseModel) -> str:
    return document.model_dump_json(indent=2)


def resolve_output_path(output: Optional[str]) -> Optional[str]:
    """
    Places relative output paths under ``PIFPAF_OUTPUT_DIR`` when it is set.

    Returns:
        str | None: The path to write, or None for standard output.
    """
    if not output:
        return None
    directory = get_configs("PIFPAF_OUTPUT_DIR")
    if directory and not os.path.isabs(output):
        output = os.path.join(directory, output)
    parent = os.path.dirname(output)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return output


def write_text(text: str, output: Optional[str]) -> Optional[str]:
    """Writes ``text`` to the resolved path; returns the path or None."""
    path = resolve_output_path(output)
    if path is None:
        return None
    with open(path, "w", encoding="utf-8") as file:
        file.write(text)
    logger.info("Wrote %s", path)
    return path
