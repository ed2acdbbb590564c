"""Columnar datasets and CSV input/output."""
from __future__ import annotations

import csv

import numpy as np

from .exceptions import DataError, NonFinite, UnknownColumn

BINARY_ROLES = ("s", "m", "l")


class Dataset:
    """Named float columns of equal length.

    Parameters
    ----------
    columns : dict
        Column name to 1-d array.
    x_names : list of str, optional
        Covariate columns, in order. Defaults to every column that is not
        one of ``s``, ``m``, ``l``, ``y``.
    binary : sequence of str, optional
        Columns that must take values in {0, 1}. Defaults to whichever of
        ``s``, ``m``, ``l`` are present.
    """

    def __init__(self, columns: dict, x_names=None, binary=None, validate=True):
        cols = {}
        n = None
        for k, v in columns.items():
            a = np.asarray(v, dtype=np.float64).reshape(-1)
            if n is None:
                n = a.shape[0]
            elif a.shape[0] != n:
                raise DataError(f"column {k!r} has length {a.shape[0]}, expected {n}")
            cols[str(k)] = a
        self.columns = cols
        self.n = 0 if n is None else n
        if x_names is None:
            x_names = [k for k in cols if k not in ("s", "m", "l", "y")]
        self.x_names = list(x_names)
        if binary is None:
            binary = [k for k in BINARY_ROLES if k in cols]
        self.binary = list(binary)
        if validate:
            self.validate()

    def validate(self):
        for k in self.x_names:
            if k not in self.columns:
                raise UnknownColumn(f"covariate column {k!r} missing")
        for k, a in self.columns.items():
            if not np.all(np.isfinite(a)):
                raise NonFinite(f"column {k!r} has missing or non-finite values")
        for k in self.binary:
            if k not in self.columns:
                raise UnknownColumn(f"binary column {k!r} missing")
            a = self.columns[k]
            if not np.all((a == 0.0) | (a == 1.0)):
                raise DataError(f"column {k!r} must be binary 0/1")

    def __len__(self):
        return self.n

    def __contains__(self, name):
        return name in self.columns

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise UnknownColumn(f"unknown column {name!r}") from None

    def column(self, name, overrides=None) -> np.ndarray:
        """Column ``name`` with an optional constant override."""
        if overrides and name in overrides:
            if name not in self.columns:
                raise UnknownColumn(f"unknown column {name!r}")
            return np.full(self.n, float(overrides[name]))
        return self[name]

    @property
    def x(self) -> np.ndarray:
        if not self.x_names:
            return np.empty((self.n, 0))
        return np.column_stack([self.columns[k] for k in self.x_names])

    s = property(lambda self: self["s"])
    m = property(lambda self: self["m"])
    l = property(lambda self: self["l"])  # noqa: E741
    y = property(lambda self: self["y"])

    @property
    def names(self) -> list:
        return list(self.columns)

    def take(self, idx) -> "Dataset":
        return Dataset({k: v[idx] for k, v in self.columns.items()},
                       self.x_names, self.binary, validate=False)

    def with_columns(self, **cols) -> "Dataset":
        new = dict(self.columns)
        new.update(cols)
        return Dataset(new, self.x_names, self.binary, validate=False)

    @classmethod
    def from_arrays(cls, x, s, y, m=None, l=None, x_names=None):  # noqa: E741
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] != len(s):
            x = x.T
        x_names = x_names or [f"x{j + 1}" for j in range(x.shape[1])]
        cols = {k: x[:, j] for j, k in enumerate(x_names)}
        cols["s"] = s
        if m is not None:
            cols["m"] = m
        if l is not None:
            cols["l"] = l
        cols["y"] = y
        return cls(cols, x_names)

    @classmethod
    def from_csv(cls, path, x_names=None, binary=None) -> "Dataset":
        """Read a CSV file with a header row."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            if len(set(header)) != len(header):
                raise DataError(f"{path}: duplicate column names")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
        arr = np.array(rows, dtype=float).reshape(-1, len(header))
        return cls({h: arr[:, j] for j, h in enumerate(header)}, x_names, binary)

    def to_csv(self, path, columns=None):
        write_csv(path, {k: self.columns[k] for k in (columns or self.columns)})


def fmt17(v) -> str:
    """Shortest-safe text for a float: 17 significant digits."""
    return format(float(v), ".17g")


def write_csv(path, columns: dict):
    """Write equal-length columns; floats at 17 significant digits."""
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(len(data[0]) if data else 0):
            w.writerow([_cell(col[i]) for col in data])


def _cell(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return fmt17(v)
