"""CSV tables and the plain-text matrix dump format."""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from .sweep import ExperimentRecord, SummaryRow, SynthesisRecord

RECORD_HEADER = ("scenario", "controller", "T", "noise", "trial", "seed", "cost", "regret", "safety_margin",
                 "solve_time", "status")
SUMMARY_HEADER = tuple(f.name for f in dataclasses.fields(SummaryRow))
SYNTHESIS_HEADER = tuple(f.name for f in dataclasses.fields(SynthesisRecord))

Row = Union[ExperimentRecord, SummaryRow, SynthesisRecord]


def format_float(x: float) -> str:
    return "%.17g" % x


def _cell(val) -> str:
    if val is None:
        return ""
    if isinstance(val, float):
        return format_float(val)
    return str(val)


def _header_for(rows: Sequence[Row], kind: str):
    if rows:
        kind = {ExperimentRecord: "records", SummaryRow: "summary", SynthesisRecord: "synthesis"}[type(rows[0])]
    return {"records": RECORD_HEADER, "summary": SUMMARY_HEADER, "synthesis": SYNTHESIS_HEADER}[kind]


def emit_csv(rows: Iterable[Row], path, kind: str = "records", timing: bool = True) -> Path:
    """Write records or summary rows with a fixed header and 17-significant-digit floats.

    With ``timing=False`` the ``solve_time`` column of experiment records is
    left empty so that reruns of the same configuration are byte-identical.
    """
    rows = list(rows)
    header = _header_for(rows, kind)
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(header)
            for r in rows:
                vals = [getattr(r, name) for name in header]
                if not timing and isinstance(r, ExperimentRecord):
                    vals[header.index("solve_time")] = None
                writer.writerow([_cell(v) for v in vals])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _parse(val: str, typ):
    if val == "":
        return None
    if typ in (float, "float"):
        return float(val)
    if typ in (int, "int"):
        return int(val)
    return val


def read_csv(path) -> List[Row]:
    """Read a table written by :func:`emit_csv` back into row objects."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        cls = {RECORD_HEADER: ExperimentRecord, SUMMARY_HEADER: SummaryRow,
               SYNTHESIS_HEADER: SynthesisRecord}.get(header)
        if cls is None:
            raise ValueError(f"{path}: unrecognised header {header}")
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        return [cls(**{k: _parse(v, types[k]) for k, v in zip(header, row)}) for row in reader]


MATRIX_FORMAT = """\
Plain-text matrix format: optional '#' comment lines, then one line
'<rows> <cols>', then <rows> lines of <cols> whitespace-separated numbers
printed with 17 significant digits (row-major)."""


def write_matrix(path, M, comment: str = "") -> Path:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    path = Path(path)
    with open(path, "w") as fh:
        for line in comment.splitlines():
            fh.write(f"# {line}\n")
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(" ".join(format_float(v) for v in row) + "\n")
    return path


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    rows, cols = (int(v) for v in lines[0].split())
    data = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=float).reshape(rows, cols)
    return data

