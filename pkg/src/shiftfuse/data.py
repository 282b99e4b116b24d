"""Observation model, CSV ingestion and dataset partitioning.

A :class:`Dataset` pools the trial sample (``r == 1``) with an external
control sample (``r == 0``, always untreated).  Rows are stored column-wise
as read-only numpy arrays; :meth:`Dataset.records` yields row views.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (DimensionError, IntegrityError, ParseError,
                         SchemaError, SizeError)

__all__ = ["Record", "Dataset", "CsvSchema", "load_csv", "write_csv",
           "split_half", "split_half_indices", "concat", "load_lalonde",
           "write_lalonde_csv", "LALONDE_SCHEMA"]


class Record(NamedTuple):
    r: int
    t: int
    x: Tuple[float, ...]
    y: float


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Pooled trial + external-control sample.

    Parameters
    ----------
    r, t : array_like of {0, 1}
        Source (1 = trial) and treatment indicators.
    x : array_like, shape (N, p)
        Covariates.
    y : array_like, shape (N,)
        Outcomes.
    names : sequence of str, optional
        Covariate names; defaults to ``x0 .. x{p-1}``.
    """

    r: np.ndarray
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        r = _frozen(self.r, np.int8).reshape(-1)
        t = _frozen(self.t, np.int8).reshape(-1)
        y = _frozen(self.y, float).reshape(-1)
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(y), -1) if len(y) else x.reshape(0, max(len(self.names), 1))
        x.setflags(write=False)
        N = len(y)
        if not (len(r) == len(t) == x.shape[0] == N):
            raise DimensionError("r, t, x and y must have the same number of rows")
        if not (np.isin(r, (0, 1)).all() and np.isin(t, (0, 1)).all()):
            raise IntegrityError("r and t must be 0/1 indicators")
        bad = np.flatnonzero((r == 0) & (t == 1))
        if bad.size:
            raise IntegrityError(f"row {bad[0]}: external-control row marked treated")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise IntegrityError("covariates and outcomes must be finite")
        names = tuple(self.names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DimensionError(f"{len(names)} names for {x.shape[1]} covariates")
        for k, v in (("r", r), ("t", t), ("x", x), ("y", y), ("names", names)):
            object.__setattr__(self, k, v)

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def N(self):
        return len(self.y)

    @property
    def n(self):
        return int(self.r.sum())

    @property
    def kappa_hat(self):
        return self.n / self.N if self.N else math.nan

    def __len__(self):
        return self.N

    def records(self):
        for i in range(self.N):
            yield Record(int(self.r[i]), int(self.t[i]), tuple(float(v) for v in self.x[i]),
                         float(self.y[i]))

    def take(self, idx):
        """Sub-dataset of the given row indices (order preserved)."""
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.r[idx], self.t[idx], self.x[idx], self.y[idx], self.names)

    def with_outcome(self, y):
        return Dataset(self.r, self.t, self.x, y, self.names)

    @classmethod
    def empty(cls, p, names=()):
        return cls(np.zeros(0), np.zeros(0), np.zeros((0, p)), np.zeros(0), names)

    @classmethod
    def from_records(cls, records, names=()):
        records = list(records)
        if not records:
            return cls.empty(len(names) or 1, names)
        return cls([rec.r for rec in records], [rec.t for rec in records],
                   [rec.x for rec in records], [rec.y for rec in records], names)


@dataclass(frozen=True)
class CsvSchema:
    source_column: str = "r"
    treatment_column: str = "t"
    outcome_column: Optional[str] = "y"
    covariate_columns: Tuple[str, ...] = ()
    outcome_difference: Optional[Tuple[str, str]] = None

    def __post_init__(self):
        cols = self.columns
        if len(set(cols)) != len(cols):
            raise SchemaError(f"duplicate column names in schema: {cols}")
        if not self.covariate_columns:
            raise SchemaError("schema needs at least one covariate column")
        if self.outcome_column is None and self.outcome_difference is None:
            raise SchemaError("schema needs an outcome column or an outcome difference")

    @property
    def columns(self):
        cols = [self.source_column, self.treatment_column, *self.covariate_columns]
        if self.outcome_difference is not None:
            cols.extend(self.outcome_difference)
        else:
            cols.append(self.outcome_column)
        return cols

    @classmethod
    def from_dict(cls, d):
        diff = d.get("outcome_difference")
        return cls(source_column=d.get("source", "r"),
                   treatment_column=d.get("treatment", "t"),
                   outcome_column=d.get("outcome", None if diff else "y"),
                   covariate_columns=tuple(d.get("covariates", ())),
                   outcome_difference=tuple(diff) if diff else None)


def _uncommented(stream):
    for line in stream:
        if not line.startswith("#"):
            yield line


def _indicator(cell, row, col):
    v = _number(cell, row, col)
    if v not in (0.0, 1.0):
        raise ParseError(f"row {row}, column {col!r}: expected 0 or 1, got {cell!r}")
    return int(v)


def _number(cell, row, col):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: not a number: {cell!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def load_csv(stream, schema):
    """Read a comma-separated text stream into a :class:`Dataset`.

    Lines starting with ``#`` are skipped.  Row indices in error messages are
    0-based over data rows.
    """
    reader = csv.reader(_uncommented(stream))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty input: header row required") from None
    pos = {}
    for col in schema.columns:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
        pos[col] = header.index(col)

    r, t, x, y = [], [], [], []
    for i, row in enumerate(reader):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} fields, got {len(row)}")
        ri = _indicator(row[pos[schema.source_column]], i, schema.source_column)
        ti = _indicator(row[pos[schema.treatment_column]], i, schema.treatment_column)
        if ri == 0 and ti == 1:
            raise IntegrityError(f"row {i}: external-control row marked treated")
        xi = [_number(row[pos[c]], i, c) for c in schema.covariate_columns]
        if schema.outcome_difference is not None:
            a, b = schema.outcome_difference
            yi = _number(row[pos[a]], i, a) - _number(row[pos[b]], i, b)
        else:
            yi = _number(row[pos[schema.outcome_column]], i, schema.outcome_column)
        r.append(ri)
        t.append(ti)
        x.append(xi)
        y.append(yi)
    p = len(schema.covariate_columns)
    return Dataset(r, t, np.array(x, dtype=float).reshape(len(y), p), y,
                   tuple(schema.covariate_columns))


def write_csv(ds, stream, comment=None):
    """Write ``ds`` with header ``r,t,y,<covariate names>``.

    Floats are written with ``repr`` so that reading back is exact.
    """
    if comment:
        stream.write(f"# {comment}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["r", "t", "y", *ds.names])
    for rec in ds.records():
        w.writerow([rec.r, rec.t, repr(float(rec.y)), *(repr(float(v)) for v in rec.x)])


def split_half_indices(ds, seed):
    """Index arrays ``(primary, validation)`` of a stratified random halving.

    Each (r, t) cell is shuffled and cut in half.  Odd cells hand their
    extra row to whichever half is currently smaller, so the two halves
    differ in size by at most one.
    """
    if ds.N < 2:
        raise SizeError(f"need at least 2 rows to split, got {ds.N}")
    rng = np.random.default_rng(seed)
    halves = ([], [])
    for cell in ((1, 1), (1, 0), (0, 0)):
        idx = np.flatnonzero((ds.r == cell[0]) & (ds.t == cell[1]))
        idx = rng.permutation(idx)
        h = len(idx) // 2
        if len(idx) % 2:
            first = 0 if len(halves[0]) <= len(halves[1]) else 1
            cut = h + 1 if first == 0 else h
        else:
            cut = h
        halves[0].extend(idx[:cut])
        halves[1].extend(idx[cut:])
    return np.sort(np.array(halves[0], dtype=int)), np.sort(np.array(halves[1], dtype=int))


def split_half(ds, seed):
    """Split ``ds`` into (primary, validation) halves, stratified by (r, t)."""
    a, b = split_half_indices(ds, seed)
    return ds.take(a), ds.take(b)


def concat(a, b):
    if a.p != b.p:
        raise DimensionError(f"cannot concatenate p={a.p} with p={b.p}")
    return Dataset(np.concatenate([a.r, b.r]), np.concatenate([a.t, b.t]),
                   np.vstack([a.x, b.x]), np.concatenate([a.y, b.y]), a.names)


# LaLonde NSW experiment (original 722-row sample) with PSID-1 external controls.
LALONDE_COVARIATES = ("age", "educ", "black", "hisp", "marr", "nodeg")
LALONDE_SCHEMA = CsvSchema(source_column="r", treatment_column="t", outcome_column=None,
                           covariate_columns=LALONDE_COVARIATES,
                           outcome_difference=("re78", "re75"))


def _lalonde_frames():
    try:
        import rdatasets
    except ImportError:
        raise SchemaError("the LaLonde data needs the optional 'rdatasets' package "
                          "(pip install rdatasets)") from None
    nsw = rdatasets.data("DAAG", "nswdemo")
    psid = rdatasets.data("DAAG", "psid1")
    return nsw, psid


def write_lalonde_csv(stream):
    """Export NSW (r=1) + PSID-1 (r=0) as CSV, earnings in thousands of dollars."""
    nsw, psid = _lalonde_frames()
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["r", "t", *LALONDE_COVARIATES, "re75", "re78"])
    for r, frame in ((1, nsw), (0, psid)):
        for row in frame.itertuples(index=False):
            w.writerow([r, int(row.trt), *(int(getattr(row, c)) for c in LALONDE_COVARIATES),
                        repr(row.re75 / 1000.0), repr(row.re78 / 1000.0)])


def load_lalonde():
    """NSW + PSID-1 as a Dataset with y = re78 - re75 (thousands of dollars)."""
    import io
    buf = io.StringIO()
    write_lalonde_csv(buf)
    buf.seek(0)
    return load_csv(buf, LALONDE_SCHEMA)
