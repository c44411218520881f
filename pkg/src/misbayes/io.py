"""CSV ingestion with declared column roles."""
from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .glm import GlmData

_TERM = re.compile(r"^\s*(?:(log|factor)\(\s*([^()]+?)\s*\)|([^()]+?))\s*$")


@dataclass(frozen=True)
class Roles:
    """Column roles. ``kind='glm'`` builds :class:`GlmData`; ``kind='matrix'``
    returns every column as an N x J float matrix (one row per group).

    Covariate terms are column names, ``log(col)`` or ``factor(col)``; factor
    levels are sorted and the first one is the baseline.
    """

    kind: str = "glm"
    response: str = "y"
    trials: str = ""
    covariates: tuple = field(default=())
    intercept: bool = True


def _fail(code, message, row=None, column=None):
    return DataError(message, row=row, column=column, code=code)


def read_table(path):
    if not os.path.isfile(path):
        raise _fail("missing-file", f"data file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(cell.strip() for cell in r)]
    if not rows:
        raise _fail("empty-file", f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise _fail("empty-file", f"{path}: header but no data rows")
    for i, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise _fail("parse", f"{path}: row {i} has {len(r)} fields, header has {len(header)}", row=i)
    return header, body


def _numeric(path, header, body, name):
    if name not in header:
        raise _fail("missing-column", f"{path}: no column named {name!r}", column=name)
    j = header.index(name)
    out = np.empty(len(body))
    for i, r in enumerate(body, start=1):
        try:
            out[i - 1] = float(r[j])
        except ValueError:
            raise _fail("parse", f"{path}: row {i}, column {name!r}: cannot parse {r[j]!r} as a number",
                        row=i, column=name) from None
        if not np.isfinite(out[i - 1]):
            raise _fail("parse", f"{path}: row {i}, column {name!r}: non-finite value", row=i, column=name)
    return out


def _levels(values):
    try:
        return sorted(set(values), key=float)
    except ValueError:
        return sorted(set(values))


def ingest_csv(path, roles: Roles):
    """Load a headered CSV into :class:`GlmData` or an N x J matrix.

    Raises :class:`DataError` carrying ``code`` (``missing-file``,
    ``empty-file``, ``parse``, ``missing-column``, ``invariant``) and the
    offending row/column where applicable.
    """
    header, body = read_table(path)
    if roles.kind == "matrix":
        cols = [_numeric(path, header, body, h) for h in header]
        return np.column_stack(cols)
    if roles.kind != "glm":
        raise _fail("invariant", f"unknown data kind {roles.kind!r}")
    y = _numeric(path, header, body, roles.response)
    trials = _numeric(path, header, body, roles.trials) if roles.trials else None
    if trials is not None:
        bad = np.flatnonzero((y < 0) | (y > trials) | (trials < 0))
        if bad.size:
            i = int(bad[0]) + 1
            raise _fail("invariant", f"{path}: row {i}: response {y[i - 1]:g} outside [0, trials={trials[i - 1]:g}]",
                        row=i, column=roles.response)
    columns, names = [], []
    if roles.intercept:
        columns.append(np.ones(len(body)))
        names.append("(Intercept)")
    for term in roles.covariates:
        m = _TERM.match(term)
        if m is None:
            raise _fail("invariant", f"cannot parse covariate term {term!r}")
        fn, arg, plain = m.groups()
        if fn == "log":
            x = _numeric(path, header, body, arg)
            if np.any(x <= 0):
                i = int(np.flatnonzero(x <= 0)[0]) + 1
                raise _fail("invariant", f"{path}: row {i}: log of nonpositive {arg!r}", row=i, column=arg)
            columns.append(np.log(x))
            names.append(f"log({arg})")
        elif fn == "factor":
            if arg not in header:
                raise _fail("missing-column", f"{path}: no column named {arg!r}", column=arg)
            j = header.index(arg)
            vals = [r[j].strip() for r in body]
            for lev in _levels(vals)[1:]:
                columns.append(np.array([v == lev for v in vals], dtype=float))
                names.append(f"{arg}{lev}")
        else:
            columns.append(_numeric(path, header, body, plain))
            names.append(plain)
    if not columns:
        raise _fail("invariant", "design has no columns")
    Z = np.column_stack(columns)
    return GlmData(y, Z, trials, column_names=tuple(names))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def write_rows(path, columns, rows) -> None:
    """Write dict rows as CSV; floats use ``repr`` so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])
