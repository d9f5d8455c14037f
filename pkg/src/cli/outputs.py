"""Writers for the data files produced by the command-line tool."""
import csv
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.17e}"


def format_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    return str(value)


@contextmanager
def _open_output(out: Optional[str]) -> Iterator[TextIO]:
    if out is None:
        yield sys.stdout
        return
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        yield f


def _json_ready(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _json_ready(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(item) for item in value]
    if isinstance(value, np.ndarray):
        return _json_ready(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_csv(columns: Sequence[str], rows: Sequence[Sequence[Any]], out: Optional[str]) -> None:
    """Header row, then one line per row with floats in full precision."""
    with _open_output(out) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_json(document: Any, out: Optional[str]) -> None:
    with _open_output(out) as f:
        f.write(json.dumps(_json_ready(document), indent=2))
        f.write("\n")


def write_table(columns: Sequence[str], rows: Sequence[Sequence[Any]], out: Optional[str], fmt: str) -> None:
    if fmt == "json":
        records = [dict(zip(columns, (_json_ready(v) for v in row))) for row in rows]
        write_json({"columns": list(columns), "rows": records}, out)
    else:
        write_csv(columns, rows, out)
    if out is not None:
        logger.info(f"OUTPUT: wrote {len(rows)} rows to {out}")


def sidecar_path(out: Optional[str], suffix: str = "fit") -> Optional[str]:
    return None if out is None else f"{out}.{suffix}.json"


def normalize_curves(
    rows: List[Dict[str, Any]],
    curve_keys: Sequence[str],
    columns: Sequence[str],
) -> List[Dict[str, Any]]:
    """
    Divide each value column by its maximum within the curve the row belongs to.
    A curve is the set of rows sharing the values of curve_keys; non-finite maxima leave the column as is.
    """
    peaks: Dict[tuple, Dict[str, float]] = {}
    for row in rows:
        key = tuple(row[k] for k in curve_keys)
        best = peaks.setdefault(key, {c: -np.inf for c in columns})
        for c in columns:
            if np.isfinite(row[c]) and row[c] > best[c]:
                best[c] = row[c]
    normalized = []
    for row in rows:
        best = peaks[tuple(row[k] for k in curve_keys)]
        scaled = dict(row)
        for c in columns:
            if np.isfinite(best[c]) and best[c] > 0:
                scaled[c] = row[c] / best[c]
        normalized.append(scaled)
    return normalized
