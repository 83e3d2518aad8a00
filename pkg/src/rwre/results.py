"""CSV result tables with a ``#`` metadata header and byte-stable formatting."""

from dataclasses import dataclass, field
import io
import math

import numpy as np

from rwre import __version__
from rwre.stats import fit_line


class TableError(ValueError):
    pass


def fmt_value(v):
    """Shortest round-trip decimal for floats, plain text for ints."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return "nan"
    if math.isinf(f):
        return "inf" if f > 0 else "-inf"
    return repr(f)


@dataclass
class ResultTable:
    columns: list
    rows: list
    meta: list = field(default_factory=list)   # (key, value) pairs
    wall_time: float = math.nan                # kept out of the bytes

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise TableError("column names must be unique")
        for r in self.rows:
            if len(r) != len(self.columns):
                raise TableError("row length does not match the header")

    def column(self, name):
        i = self.columns.index(name)
        return np.array([float(r[i]) for r in self.rows])

    def meta_value(self, key, default=None):
        for k, v in self.meta:
            if k == key:
                return v
        return default

    def to_text(self):
        buf = io.StringIO()
        for k, v in self.meta:
            buf.write(f"# {k}: {v}\n")
        buf.write(",".join(self.columns) + "\n")
        for r in self.rows:
            buf.write(",".join(fmt_value(v) for v in r) + "\n")
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_text())


def experiment_meta(cfg):
    meta = [("tool", f"rwre {__version__}"), ("kind", cfg.kind),
            ("config_sha1", cfg.content_hash())]
    meta += [("config", line) for line in cfg.to_text(include_out=False).splitlines()]
    return meta


def read_table(path):
    """Parse a ResultTable CSV; raises :class:`TableError` when malformed."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    meta, body = [], []
    for ln in lines:
        if ln.startswith("#"):
            if body:
                raise TableError("metadata after the header row")
            k, sep, v = ln[1:].strip().partition(":")
            if not sep:
                raise TableError(f"bad metadata line {ln!r}")
            meta.append((k.strip(), v.strip()))
        elif ln.strip():
            body.append(ln.split(","))
    if not body:
        raise TableError("no header row")
    cols, rows = body[0], []
    for r in body[1:]:
        if len(r) != len(cols):
            raise TableError("ragged row")
        try:
            rows.append([float(x) for x in r])
        except ValueError:
            raise TableError(f"non-numeric cell in {r}") from None
    return ResultTable(cols, rows, meta)


def replay_check(path_a, path_b):
    with open(path_a, "rb") as a, open(path_b, "rb") as b:
        return a.read() == b.read()


def log_fit(x, y, logx=True):
    """Least-squares fit of log y against (log) x, dropping nonpositive y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = y > 0
    if logx:
        ok &= x > 0
    if ok.sum() < 2:
        raise TableError("not enough positive points for a log fit")
    xx = np.log(x[ok]) if logx else x[ok]
    return fit_line(xx, np.log(y[ok]))
