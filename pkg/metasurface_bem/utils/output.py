"""
Output Helpers

CSV and JSON-lines emission of sweep rows, spectra and check results. Floats are written with
fixed formatting so identical runs give byte-identical files.
"""

import csv
import json
import math
import sys
from contextlib import contextmanager
from typing import Any, Dict, Iterable, Iterator, Mapping, Optional, Sequence, TextIO

FLOAT_FORMAT = "%.12e"
FORMATS = ("csv", "json")


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    return str(value)


def _json_value(value: Any) -> Any:
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return None
        return float(FLOAT_FORMAT % value)
    if isinstance(value, complex):
        return [_json_value(value.real), _json_value(value.imag)]
    if hasattr(value, "tolist"):
        return _json_value(value.tolist())
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _json_value(v) for k, v in value.items()}
    return value


def to_json(record: Mapping[str, Any], indent: Optional[int] = None) -> str:
    """JSON text of a record; NaN becomes null and floats keep 12 significant digits."""
    return json.dumps(_json_value(dict(record)), indent=indent)


def write_csv(records: Iterable[Mapping[str, Any]], columns: Sequence[str], stream: TextIO):
    writer = csv.DictWriter(stream, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow({column: format_value(record[column]) for column in columns})


def write_json_lines(records: Iterable[Mapping[str, Any]], columns: Sequence[str], stream: TextIO):
    """One object per line, keys in column order."""
    for record in records:
        stream.write(to_json({column: record[column] for column in columns}) + "\n")


@contextmanager
def open_output(path: Optional[str]) -> Iterator[TextIO]:
    """The file at path, or stdout when path is None or '-'."""
    if path is None or path == "-":
        yield sys.stdout
        return
    with open(path, "w", newline="") as f:
        yield f


def write_records(records: Iterable[Dict[str, Any]], columns: Sequence[str], fmt: str = "csv",
                  path: Optional[str] = None):
    if fmt not in FORMATS:
        raise ValueError(f"Unknown output format {fmt!r}")
    records = list(records)
    with open_output(path) as stream:
        if fmt == "csv":
            write_csv(records, columns, stream)
        else:
            write_json_lines(records, columns, stream)
