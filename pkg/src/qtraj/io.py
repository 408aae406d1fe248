"""Writers and readers for tables, record arrays and run manifests.

Files are written to a temporary sibling and renamed into place, so a reader
never sees a half-written output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from contextlib import contextmanager
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

MAGIC = b"QTRJ"
BIN_VERSION = 1
HEADER = struct.Struct("<4sIQQII")  # magic, version, n_traj, n_bins, n_cols, reserved
assert HEADER.size == 32

TABLE_FORMATS = ("csv", "ndjson")


def fmt(v) -> str:
    """Shortest text that round-trips the value exactly; NaN becomes an empty field."""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        return None if np.isnan(v) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


@contextmanager
def atomic_open(path: str, mode: str = "w") -> Iterator[IO]:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        kwargs = {} if "b" in mode else {"encoding": "utf-8", "newline": ""}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class TableWriter:
    """Row-by-row CSV or NDJSON writer with a fixed column list."""

    def __init__(self, fh: IO, columns: Sequence[str], fmt_name: str):
        if fmt_name not in TABLE_FORMATS:
            raise ValueError(f"unsupported table format {fmt_name!r}; expected one of {TABLE_FORMATS}")
        self.columns = tuple(columns)
        self.fmt_name = fmt_name
        self.fh = fh
        if fmt_name == "csv":
            self._csv = csv.writer(fh, lineterminator="\n")
            self._csv.writerow(self.columns)

    def write(self, row: Sequence) -> None:
        if self.fmt_name == "csv":
            self._csv.writerow([fmt(v) for v in row])
        else:
            obj = {c: _json_value(v) for c, v in zip(self.columns, row)}
            self.fh.write(json.dumps(obj, allow_nan=False) + "\n")

    def write_many(self, rows: Iterable[Sequence]) -> None:
        for row in rows:
            self.write(row)


def write_table(path: str, columns: Sequence[str], rows: Iterable[Sequence], fmt_name: str = "csv") -> str:
    with atomic_open(path) as fh:
        TableWriter(fh, columns, fmt_name).write_many(rows)
    return path


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def read_ndjson(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# raw binary arrays


def bin_header(n_traj: int, n_bins: int, n_cols: int) -> bytes:
    return HEADER.pack(MAGIC, BIN_VERSION, n_traj, n_bins, n_cols, 0)


class BinaryWriter:
    """Streams ``(n_traj, n_bins, n_cols)`` float64 blocks after a fixed header."""

    def __init__(self, fh: IO[bytes], n_traj: int, n_bins: int, n_cols: int):
        self.fh = fh
        self.shape = (n_traj, n_bins, n_cols)
        self.written = 0
        fh.write(bin_header(n_traj, n_bins, n_cols))

    def write(self, block: np.ndarray) -> None:
        block = np.asarray(block, dtype="<f8")
        if block.shape[1:] != self.shape[1:]:
            raise ValueError(f"block shape {block.shape[1:]} does not match {self.shape[1:]}")
        if self.written + len(block) > self.shape[0]:
            raise ValueError("more trajectories than declared in the header")
        self.fh.write(np.ascontiguousarray(block).tobytes())
        self.written += len(block)


def write_binary(path: str, array: np.ndarray) -> str:
    array = np.asarray(array, dtype=float)
    if array.ndim == 2:
        array = array[None]
    with atomic_open(path, "wb") as fh:
        BinaryWriter(fh, *array.shape).write(array)
    return path


def read_binary(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
        if len(head) != HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, n_traj, n_bins, n_cols, _ = HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a QTRJ file")
        if version != BIN_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n_traj * n_bins * n_cols:
        raise ValueError(f"{path}: expected {n_traj * n_bins * n_cols} values, found {data.size}")
    return data.reshape(n_traj, n_bins, n_cols).astype(float)


def read_records(path: str) -> np.ndarray:
    """Records ``(n_traj, n_bins, 3)`` from a QTRJ, CSV or NDJSON records file."""
    if path.endswith(".ndjson"):
        rows = read_ndjson(path)
        cols = ["u", "v", "w"]
        traj = [r.get("trajectory", 0) for r in rows]
        data = np.array([[r[c] for c in cols] for r in rows], dtype=float)
        return _stack(np.asarray(traj), data)
    if path.endswith(".csv"):
        header, rows = read_csv(path)
        idx = [header.index(c) for c in ("u", "v", "w")]
        traj = np.array([int(r[header.index("trajectory")]) if "trajectory" in header else 0 for r in rows])
        data = np.array([[float(r[i]) for i in idx] for r in rows])
        return _stack(traj, data)
    arr = read_binary(path)
    if arr.shape[2] != 3:
        raise ValueError(f"{path}: records need 3 columns, found {arr.shape[2]}")
    return arr


def _stack(traj: np.ndarray, data: np.ndarray) -> np.ndarray:
    ids = np.unique(traj)
    n_bins = len(data) // len(ids)
    if n_bins * len(ids) != len(data):
        raise ValueError("records file has trajectories of unequal length")
    order = np.argsort(traj, kind="stable")
    return data[order].reshape(len(ids), n_bins, 3)


# ---------------------------------------------------------------------------
# checksums and manifests


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_ndjson(path: str, objects: Iterable[dict]) -> str:
    buf = io.StringIO()
    for obj in objects:
        buf.write(json.dumps(obj, sort_keys=True, allow_nan=False, default=_json_default) + "\n")
    with atomic_open(path) as fh:
        fh.write(buf.getvalue())
    return path


def _json_default(v):
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, (tuple, set, frozenset)):
        return list(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")
