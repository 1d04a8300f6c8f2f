import csv
import os
from io import StringIO
from typing import Any, Iterable, Sequence

THREADS_ENV_VAR = "TRAJMBM_THREADS"
EMPTY_CELL = ""


def worker_count(default: int = None) -> int:
    """
    Number of worker processes for Monte Carlo trials. TRAJMBM_THREADS caps the pool,
    otherwise the CPU count is used.
    """
    default = default or os.cpu_count() or 1
    value = os.environ.get(THREADS_ENV_VAR)
    if value is None or value == "":
        return default

    try:
        threads = int(value)
    except ValueError:
        raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {value!r}")
    if threads < 1:
        raise ValueError(f"{THREADS_ENV_VAR} must be >= 1, got {threads}")
    return min(threads, default)


def format_cell(value: Any) -> str:
    if value is None:
        return EMPTY_CELL
    if isinstance(value, float):
        # shortest round-tripping form
        return repr(float(value))
    return str(value)


def rows_to_csv_buffer(rows: Iterable[Sequence[Any]], columns: Sequence[str]) -> StringIO:
    buffer = StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(
                f"Row has {len(row)} values but {len(columns)} columns were declared"
            )
        writer.writerow([format_cell(value) for value in row])
    buffer.seek(0)
    return buffer
