"""
Artifact writers for AnosovLab.

CSV tables go through pandas, reports through json with sorted keys, and
binary dumps through numpy structured arrays in little-endian layout. None of
the writers stamp wall-clock time, so identical inputs give identical bytes.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from config import SCHEMA_VERSION
from utils import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.12g"


def _jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON values."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if np.isnan(value):
            return "nan"
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return float(FLOAT_FORMAT % value)
    return value


def write_json(path: Union[str, Path], payload: Mapping[str, Any]) -> Path:
    """
    Write a report as JSON, adding the schema version.

    Args:
        path: Destination file
        payload: Report contents

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"schema_version": SCHEMA_VERSION, **_jsonable(dict(payload))}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug(f"Wrote {path}")
    return path


def write_csv(
    path: Union[str, Path],
    rows: Union[pd.DataFrame, Sequence[Mapping[str, Any]]],
    columns: Sequence[str] = None,
) -> Path:
    """
    Write a table as CSV with a fixed column order and float format.

    Args:
        path: Destination file
        rows: DataFrame or list of row dictionaries
        columns: Column order (defaults to the frame's own order)

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {path} ({len(frame)} rows)")
    return path


def write_binary(path: Union[str, Path], header: np.ndarray, records: np.ndarray) -> Path:
    """
    Write a header record followed by fixed-width records, both little-endian.

    Args:
        path: Destination file
        header: One-element structured array
        records: Structured array of records

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.astype(header.dtype.newbyteorder("<")).tobytes())
        f.write(records.astype(records.dtype.newbyteorder("<")).tobytes())
    logger.debug(f"Wrote {path} ({len(records)} records)")
    return path


def flag_frame_columns(frame_size: int) -> List[str]:
    """Column names for a row-major dump of an orthonormal frame."""
    return [f"f{i}" for i in range(frame_size)]


def sha256_file(path: Union[str, Path]) -> str:
    """Hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def artifact_list(out_dir: Union[str, Path], paths: Iterable[Path]) -> List[Dict[str, str]]:
    """Relative names and digests of the artifacts of a run, sorted by name."""
    out_dir = Path(out_dir)
    entries = [
        {"path": str(Path(p).relative_to(out_dir)), "sha256": sha256_file(p)}
        for p in paths
        if Path(p).exists()
    ]
    return sorted(entries, key=lambda e: e["path"])
