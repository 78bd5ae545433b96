"""CSV and key=value file handling with whole-file atomic writes."""

from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path

import numpy as np

from .synthetic import SignalRecord

MIN_ROWS = 10


class InputError(ValueError):
    """Malformed or invalid input file."""


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def ingest_csv(path, min_rows: int = MIN_ROWS) -> SignalRecord:
    """Read a two-column ``x,y`` CSV; a leading header row is skipped.

    Extra columns are ignored.  Errors name the offending line (1-based).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    xs, ys = [], []
    prev = None
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 2:
            raise InputError(f"{path}:{lineno}: expected at least two columns")
        a, b = row[0].strip(), row[1].strip()
        if not xs and not (_is_number(a) and _is_number(b)):
            continue  # header
        try:
            x, y = float(a), float(b)
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric value") from None
        if not (np.isfinite(x) and np.isfinite(y)):
            raise InputError(f"{path}:{lineno}: non-finite value")
        if prev is not None and x <= prev:
            raise InputError(f"{path}:{lineno}: x={x!r} is not greater than the previous x={prev!r}")
        prev = x
        xs.append(x)
        ys.append(y)
    if len(xs) < min_rows:
        raise InputError(f"{path}: {len(xs)} data rows, need at least {min_rows}")
    return SignalRecord(np.array(xs), np.array(ys), {"source": str(path)})


def fmt(v) -> str:
    """Round-trippable text for numbers, lists and flags."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(fmt(u) for u in v)
    if v is None:
        return ""
    return str(v).replace("\n", " ")


def csv_text(columns: dict) -> str:
    """CSV with a header row from ordered ``{name: 1-d array}``."""
    names = list(columns)
    arrs = [np.asarray(columns[k], dtype=float) for k in names]
    n = arrs[0].size if arrs else 0
    if any(a.shape != (n,) for a in arrs):
        raise ValueError("all columns must have the same length")
    lines = [",".join(names)]
    for i in range(n):
        lines.append(",".join(repr(float(a[i])) for a in arrs))
    return "\n".join(lines) + "\n"


def record_csv(record: SignalRecord) -> str:
    return csv_text({"x": record.x, "y": record.y})


def read_csv_columns(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]) if len(rows) > 1 else np.zeros((0, len(names)))
    return {k: data[:, i] for i, k in enumerate(names)}


def kv_text(items: dict) -> str:
    return "".join(f"{k}={fmt(v)}\n" for k, v in items.items())


def parse_kv(text: str, source: str = "<config>") -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        k = k.strip().replace("-", "_")
        if not k:
            raise InputError(f"{source}:{lineno}: empty key")
        out[k] = v.strip()
    return out


def read_kv(path) -> dict:
    path = Path(path)
    try:
        return parse_kv(path.read_text(), str(path))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def atomic_write(path, data) -> None:
    """Write ``data`` (str or bytes) to a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class OutputBundle:
    """Files collected in memory and written together.

    Nothing touches the disk until :meth:`commit`; if a write fails part
    way, the files already written by this bundle are removed again.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.files = {}

    def add(self, name: str, data) -> None:
        self.files[name] = data

    def commit(self) -> list[Path]:
        written = []
        try:
            for name, data in self.files.items():
                target = self.directory / name
                atomic_write(target, data)
                written.append(target)
        except BaseException:
            for p in written:
                p.unlink(missing_ok=True)
            raise
        return written
