"""On-disk formats: binary matrices, calibration stats, CSV/JSON reports.

Matrix files are bit-exact containers for float64 payloads: magic "SRRM",
a format version byte (0x01), a dtype byte (0x01 = little-endian float64),
two unsigned 64-bit little-endian dims, then the row-major payload.
Calibration files ("SRRC") hold the raw second-moment sum with the sample
count in place of the second dim.  Text formats use '.' decimals and
repr-shortest float formatting, so identical data always produces identical
bytes.  All writes go through a temp file plus rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import InputError
from .harness import ExperimentReport
from .scaling import CalibrationStats

MATRIX_MAGIC = b"SRRM"
CALIB_MAGIC = b"SRRC"
FORMAT_VERSION = 1
DTYPE_F64 = 1
_HEADER = struct.Struct("<4sBBQQ")


def atomic_write_bytes(path, payload: bytes):
    """Write payload to path via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".srr-tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _pack(magic: bytes, dim_a: int, dim_b: int, payload: np.ndarray) -> bytes:
    header = _HEADER.pack(magic, FORMAT_VERSION, DTYPE_F64, dim_a, dim_b)
    return header + np.ascontiguousarray(payload, dtype="<f8").tobytes()


def _unpack(blob: bytes, magic: bytes, path,
            square: bool = False) -> tuple[int, int, np.ndarray]:
    """Validate a header and return (dim_a, dim_b, flat payload).

    Matrix files carry dim_a * dim_b values; calibration files reuse the
    second dim for the sample count and carry a square dim_a * dim_a payload,
    selected with ``square``.
    """
    if len(blob) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    got_magic, version, dtype, dim_a, dim_b = _HEADER.unpack_from(blob)
    if got_magic != magic:
        raise InputError(
            f"{path}: bad magic {got_magic!r}, expected {magic.decode()}"
        )
    if version != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported format version {version}")
    if dtype != DTYPE_F64:
        raise InputError(f"{path}: unsupported dtype code {dtype}")
    if dim_a < 1 or dim_b < 1:
        raise InputError(f"{path}: non-positive dims {dim_a}x{dim_b}")
    count = dim_a * dim_a if square else dim_a * dim_b
    expected = _HEADER.size + 8 * count
    if len(blob) != expected:
        raise InputError(
            f"{path}: payload is {len(blob) - _HEADER.size} bytes, "
            f"expected {expected - _HEADER.size}"
        )
    payload = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    return dim_a, dim_b, payload


def write_matrix(path, a: np.ndarray):
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"matrix files hold 2-D arrays, got ndim={arr.ndim}")
    atomic_write_bytes(path, _pack(MATRIX_MAGIC, arr.shape[0], arr.shape[1], arr))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as handle:
        blob = handle.read()
    rows, cols, payload = _unpack(blob, MATRIX_MAGIC, path)
    return payload.reshape(rows, cols).copy()


def write_calibration(path, stats: CalibrationStats):
    atomic_write_bytes(
        path,
        _pack(CALIB_MAGIC, stats.dim, stats.sample_count, stats.second_moment),
    )


def read_calibration(path) -> CalibrationStats:
    with open(path, "rb") as handle:
        blob = handle.read()
    dim, sample_count, payload = _unpack(blob, CALIB_MAGIC, path, square=True)
    second_moment = payload.reshape(dim, dim).copy()
    if not np.isfinite(second_moment).all():
        raise InputError(f"{path}: second moment contains NaN or Inf")
    diag = np.diag(second_moment)
    if np.any(diag < 0):
        raise InputError(f"{path}: second moment has negative diagonal")
    diag_rms = np.sqrt(diag / sample_count)
    return CalibrationStats(dim, sample_count, second_moment, diag_rms)


def format_cell(value) -> str:
    """Deterministic text for one CSV cell; floats use shortest repr."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def report_to_csv(report: ExperimentReport, include_timings: bool = False) -> str:
    columns = [
        c for c in report.columns if include_timings or c != "runtime_ms"
    ]
    lines = [",".join(columns)]
    for row in report.rows:
        lines.append(",".join(format_cell(row.get(c, "")) for c in columns))
    return "\n".join(lines) + "\n"


def _jsonable(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def report_to_json(report: ExperimentReport, include_timings: bool = False) -> str:
    rows = [
        {
            k: _jsonable(v)
            for k, v in row.items()
            if include_timings or k != "runtime_ms"
        }
        for row in report.rows
    ]
    payload = {
        "kind": report.kind,
        "columns": [
            c for c in report.columns if include_timings or c != "runtime_ms"
        ],
        "rows": rows,
        "aggregates": _jsonable(report.aggregates),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def dump_json(payload: dict) -> str:
    """Canonical JSON text for CLI summaries: sorted keys, trailing newline."""
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
