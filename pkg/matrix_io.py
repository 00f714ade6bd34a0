"""
Matrix files, factorization artifacts and run manifests.

Matrices are CSV (comma separated, UTF-8, LF or CRLF) with an optional
single header row, detected when no cell of the first row is numeric.
Floats are written in their shortest round-trip form, so reading a written
file gives back the identical binary values.
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from errors import MatrixFileError
from factorizer import canonicalize
from models import CLAMP_TOLERANCE, DataMatrix, FactorizationResult, RunManifest, SolverConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _parse_cell(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return math.nan


def _read_values(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MatrixFileError(f"File not found: {path}", "missing_file", str(path))
    try:
        frame = pd.read_csv(
            path,
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
            encoding="utf-8"
        )
    except pd.errors.EmptyDataError:
        raise MatrixFileError(f"{path} holds no rows", "empty_file", str(path))
    except pd.errors.ParserError as e:
        raise MatrixFileError(f"{path}: rows differ in length ({e})", "ragged_row", str(path))

    # short rows come back padded with NaN
    missing = frame.isna().any(axis=1)
    if missing.any():
        row = int(np.flatnonzero(missing.to_numpy())[0])
        raise MatrixFileError(f"{path}: row {row + 1} has too few cells", "ragged_row", str(path))

    cells = frame.map(str.strip)
    numbers = cells.map(_parse_cell)
    if len(cells) > 1 and numbers.iloc[0].isna().all():
        logger.debug(f"{path}: treating first row as a header")
        cells, numbers = cells.iloc[1:], numbers.iloc[1:]
    if numbers.empty:
        raise MatrixFileError(f"{path} holds no data rows", "empty_file", str(path))

    bad = numbers.isna().to_numpy()
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise MatrixFileError(
            f"{path}: cell ({i}, {j}) is not a number: {cells.iat[i, j]!r}", "non_numeric", str(path)
        )
    values = numbers.to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise MatrixFileError(f"{path}: non-finite entry", "non_finite", str(path))
    if np.any(values < -CLAMP_TOLERANCE):
        i, j = np.argwhere(values < -CLAMP_TOLERANCE)[0]
        raise MatrixFileError(
            f"{path}: negative entry {values[i, j]!r} at ({i}, {j})", "negative_entry", str(path)
        )
    return values


def read_matrix(path: PathLike) -> DataMatrix:
    """
    Read a data matrix from CSV.

    Raises:
        MatrixFileError: missing_file, empty_file, ragged_row, non_numeric,
            non_finite or negative_entry
        DomainError: the matrix is identically zero
    """
    values = _read_values(path)
    matrix = DataMatrix(values=values)
    logger.info(f"Read {matrix.rows} x {matrix.cols} matrix from {path}")
    return matrix


def read_factor_matrix(path: PathLike) -> np.ndarray:
    """Read a factor matrix (W or H); unlike data, all-zero factors are allowed here."""
    values = _read_values(path)
    values[values < 0] = 0.0
    return values


def write_matrix(path: PathLike, values: np.ndarray) -> Path:
    """Write a matrix as headerless CSV with shortest round-trip floats."""
    path = Path(path)
    pd.DataFrame(np.asarray(values, dtype=np.float64)).to_csv(
        path, header=False, index=False, lineterminator="\n"
    )
    return path


def file_checksum(path: PathLike) -> str:
    """SHA-256 hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ResultPaths(BaseModel):
    """Files produced by write_result."""

    w: Path
    h: Path
    trace: Path
    manifest: Path


def build_manifest(
    result: FactorizationResult,
    config: SolverConfig,
    input_path: PathLike,
    input_shape: tuple,
    wall_time_seconds: float,
    library_version: str
) -> RunManifest:
    """Provenance record for one run."""
    return RunManifest(
        input_sha256=file_checksum(input_path),
        input_shape=input_shape,
        config=config,
        library_version=library_version,
        stop_reason=result.stop_reason,
        final_divergence=result.final_divergence,
        iterations_run=result.iterations_run,
        wall_time_seconds=wall_time_seconds,
        restart_index=result.restart_index,
        seed=result.seed
    )


def write_result(result: FactorizationResult, out_dir: PathLike, manifest: RunManifest) -> ResultPaths:
    """
    Write W.csv, H.csv (canonicalized), trace.jsonl and manifest.json.

    The directory is created on demand.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    factors = canonicalize(result.factors)

    paths = ResultPaths(
        w=write_matrix(out_dir / "W.csv", factors.W),
        h=write_matrix(out_dir / "H.csv", factors.H),
        trace=out_dir / "trace.jsonl",
        manifest=out_dir / "manifest.json"
    )
    with open(paths.trace, "w", encoding="utf-8", newline="\n") as handle:
        for record in result.trace.records:
            handle.write(json.dumps(record.trace_line()) + "\n")
    paths.manifest.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")

    logger.info(f"Wrote factors, trace ({len(result.trace)} lines) and manifest to {out_dir}")
    return paths


def read_manifest(path: PathLike) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))


def read_trace(path: PathLike) -> List[Dict[str, Any]]:
    with open(path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]
