"""Datasets, fold partitions, group demeaning, and seeded randomness.

All containers are immutable after construction (arrays are copied and marked
read-only) and therefore safe to share across worker processes. Operations are
pure given their inputs.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    DuplicateRow,
    InvalidFoldCount,
    MissingCell,
    NonNumericValue,
    SingletonGroupPeriod,
)


def _frozen(a, dtype=None):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel: outcomes ``y`` (n, t_len), regressors ``x`` (n, t_len, p).

    ``lag_structure=True`` marks column 0 of ``x`` as the lagged outcome, so
    ``x[i, t, 0] == y[i, t-1]`` for t >= 1 and ``x[i, 0, 0]`` is the pre-sample
    level. Periods are indexed 1..t_len in formulas; array column ``t-1`` holds
    period t.
    """

    y: np.ndarray
    x: np.ndarray
    ids: np.ndarray
    lag_structure: bool = False

    def __post_init__(self):
        y = _frozen(self.y, float)
        x = _frozen(self.x, float)
        ids = _frozen(self.ids)
        if y.ndim != 2:
            raise ValueError("y must be (n, t_len)")
        n, t_len = y.shape
        if x.ndim != 3 or x.shape[:2] != (n, t_len):
            raise ValueError("x must be (n, t_len, p) aligned with y")
        if ids.shape != (n,):
            raise ValueError("ids must have one label per individual")
        if n < 2:
            raise ValueError("need at least 2 individuals")
        if t_len < 3:
            raise ValueError("need at least 3 periods")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def t_len(self):
        return self.y.shape[1]

    @property
    def p(self):
        return self.x.shape[2]


@dataclass(frozen=True)
class CrossSection:
    """Cross-sectional covariates ``w`` (n, q) plus an optional binary outcome."""

    w: np.ndarray
    ids: np.ndarray
    outcome: np.ndarray | None = None

    def __post_init__(self):
        w = _frozen(self.w, float)
        ids = _frozen(self.ids)
        if w.ndim != 2:
            raise ValueError("w must be (n, q)")
        if ids.shape != (w.shape[0],):
            raise ValueError("ids must have one label per individual")
        outcome = self.outcome
        if outcome is not None:
            outcome = _frozen(outcome, float)
            if outcome.shape != (w.shape[0],):
                raise ValueError("outcome must be a vector of length n")
            if not np.isin(outcome, (0.0, 1.0)).all():
                raise ValueError("outcome must be binary 0/1")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "outcome", outcome)

    @property
    def n(self):
        return self.w.shape[0]

    @property
    def q(self):
        return self.w.shape[1]


@dataclass(frozen=True)
class FoldPartition:
    """Per-individual fold assignments in {0..L-1}."""

    assignments: np.ndarray
    L: int

    def __post_init__(self):
        a = _frozen(self.assignments, np.int64)
        if a.ndim != 1:
            raise ValueError("assignments must be a vector")
        if self.L < 2:
            raise InvalidFoldCount("need at least 2 folds")
        if a.min(initial=0) < 0 or (a.max(initial=0) >= self.L):
            raise ValueError("fold labels out of range")
        counts = np.bincount(a, minlength=self.L)
        if (counts < a.size // self.L).any() or (counts == 0).any():
            raise ValueError("fold sizes below floor(n/L)")
        object.__setattr__(self, "assignments", a)

    @property
    def n(self):
        return self.assignments.size

    def indices(self, l):
        """Individuals in fold l, ascending."""
        return np.flatnonzero(self.assignments == l)

    def complement(self, *folds):
        """Individuals outside all the given folds, ascending."""
        mask = np.ones(self.n, dtype=bool)
        for l in folds:
            mask &= self.assignments != l
        return np.flatnonzero(mask)

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.L)


@dataclass(frozen=True)
class SeedConfig:
    """Counter-based child-stream derivation from a single master seed.

    Child streams are keyed by (master_seed, purpose tag, index) through a
    stable hash, so parallel workers can derive their own streams without any
    sequential draw-order coupling.
    """

    master_seed: int

    def child_seed(self, tag, index=0):
        payload = f"{int(self.master_seed)}|{tag}|{int(index)}".encode()
        return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")

    def child(self, tag, index=0):
        return np.random.default_rng(self.child_seed(tag, index))


def _as_generator(seed, tag):
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, SeedConfig):
        return seed.child(tag)
    return np.random.default_rng(seed)


def make_folds(n, L, seed):
    """Uniformly random partition of n individuals into L folds.

    Shuffle (Fisher-Yates via the generator's permutation) then assign
    contiguous blocks; the n mod L remainder goes one per fold starting at
    fold 0, so every fold has floor(n/L) or floor(n/L)+1 members.
    """
    n = int(n)
    L = int(L)
    if not 2 <= L <= n:
        raise InvalidFoldCount(f"need 2 <= L <= n, got L={L}, n={n}")
    rng = _as_generator(seed, "folds")
    order = rng.permutation(n)
    base, rem = divmod(n, L)
    assignments = np.empty(n, dtype=np.int64)
    pos = 0
    for l in range(L):
        size = base + (1 if l < rem else 0)
        assignments[order[pos:pos + size]] = l
        pos += size
    return FoldPartition(assignments, L)


def demean_by_group(panel, group):
    """Subtract group-by-period cross-sectional means from every variable.

    Group labels are per-individual (time-constant), so each (group, period)
    cell holds one value per group member; every group must have >= 2 members.
    Idempotent: demeaning a demeaned panel changes nothing (up to fp noise).
    """
    group = np.asarray(group)
    if group.shape != (panel.n,):
        raise ValueError("group labels must be per-individual")
    uniq, counts = np.unique(group, return_counts=True)
    if (counts < 2).any():
        bad = uniq[counts < 2]
        raise SingletonGroupPeriod(
            f"groups with a single member cannot be demeaned: {bad.tolist()}")
    y = np.array(panel.y)
    x = np.array(panel.x)
    for g in uniq:
        mask = group == g
        y[mask] -= y[mask].mean(axis=0)
        x[mask] -= x[mask].mean(axis=0)
    return PanelDataset(y, x, panel.ids, lag_structure=panel.lag_structure)


# ---------------------------------------------------------------------------
# CSV ingestion / emission. Panel header: id,t,y,x1..xp.
# Cross-section header: id,w1..wq[,outcome]. UTF-8, '.' decimal point.
# ---------------------------------------------------------------------------

def _parse_ids(raw_ids):
    # ids become ints when every label parses as one; strings otherwise
    try:
        return np.array([int(v) for v in raw_ids])
    except ValueError:
        return np.array(raw_ids)


def load_panel(path, schema=None):
    """Read a balanced panel from CSV.

    Raises NonNumericValue / DuplicateRow / MissingCell with every offending
    row (not just the first) listed in the message and on the exception.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingCell("empty file", []) from None
        rows = list(reader)

    header = [h.strip() for h in header]
    if schema is not None:
        if header != list(schema):
            raise ValueError(f"header {header} does not match schema {list(schema)}")
    if len(header) < 3 or header[0] != "id" or header[1] != "t" or header[2] != "y":
        raise ValueError(f"panel header must start with id,t,y — got {header}")
    xcols = header[3:]
    if xcols != [f"x{j + 1}" for j in range(len(xcols))]:
        raise ValueError(f"regressor columns must be x1..xp in order — got {xcols}")
    p = len(xcols)

    bad_numeric = []
    missing_vals = []
    records = {}
    dup_rows = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            bad_numeric.append((lineno, "row width"))
            continue
        rid = row[0].strip()
        try:
            t = int(row[1])
        except ValueError:
            bad_numeric.append((lineno, "t"))
            continue
        vals = np.empty(1 + p)
        ok = True
        for j, col in enumerate(header[2:]):
            cell = row[2 + j].strip()
            if cell == "":
                missing_vals.append((lineno, col))
                ok = False
                continue
            try:
                vals[j] = float(cell)
            except ValueError:
                bad_numeric.append((lineno, col))
                ok = False
        if not ok:
            continue
        key = (rid, t)
        if key in records:
            dup_rows.append(lineno)
        else:
            records[key] = vals

    if bad_numeric:
        raise NonNumericValue(
            f"non-numeric values at (line, column): {bad_numeric}", bad_numeric)
    if dup_rows:
        raise DuplicateRow(f"duplicate (id, t) rows at lines {dup_rows}", dup_rows)
    if missing_vals:
        raise MissingCell(
            f"empty cells at (line, column): {missing_vals}", missing_vals)

    raw_ids = sorted({k[0] for k in records})
    ts = sorted({k[1] for k in records})
    absent = [(rid, t) for rid in raw_ids for t in ts if (rid, t) not in records]
    if absent:
        raise MissingCell(f"unbalanced panel, missing (id, t) cells: {absent}", absent)

    ids = _parse_ids(raw_ids)
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    raw_sorted = [raw_ids[k] for k in order]
    n, t_len = len(ids), len(ts)
    y = np.empty((n, t_len))
    x = np.empty((n, t_len, p))
    for i, rid in enumerate(raw_sorted):
        for k, t in enumerate(ts):
            vals = records[(rid, t)]
            y[i, k] = vals[0]
            x[i, k, :] = vals[1:]
    return PanelDataset(y, x, ids)


def load_cross_section(path):
    """Read cross-sectional covariates from CSV (header id,w1..wq[,outcome])."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingCell("empty file", []) from None
        rows = list(reader)

    header = [h.strip() for h in header]
    has_outcome = bool(header) and header[-1] == "outcome"
    wcols = header[1:-1] if has_outcome else header[1:]
    if not header or header[0] != "id" or wcols != [f"w{j + 1}" for j in range(len(wcols))]:
        raise ValueError(f"cross-section header must be id,w1..wq[,outcome] — got {header}")
    q = len(wcols)
    if q == 0:
        raise ValueError("need at least one w column")

    bad_numeric = []
    missing_vals = []
    dup_rows = []
    records = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            bad_numeric.append((lineno, "row width"))
            continue
        rid = row[0].strip()
        vals = np.empty(len(header) - 1)
        ok = True
        for j, col in enumerate(header[1:]):
            cell = row[1 + j].strip()
            if cell == "":
                missing_vals.append((lineno, col))
                ok = False
                continue
            try:
                vals[j] = float(cell)
            except ValueError:
                bad_numeric.append((lineno, col))
                ok = False
        if not ok:
            continue
        if rid in records:
            dup_rows.append(lineno)
        else:
            records[rid] = vals

    if bad_numeric:
        raise NonNumericValue(
            f"non-numeric values at (line, column): {bad_numeric}", bad_numeric)
    if dup_rows:
        raise DuplicateRow(f"duplicate id rows at lines {dup_rows}", dup_rows)
    if missing_vals:
        raise MissingCell(f"empty cells at (line, column): {missing_vals}", missing_vals)

    raw_ids = sorted(records)
    ids = _parse_ids(raw_ids)
    order = np.argsort(ids, kind="stable")
    ids = ids[order]
    raw_sorted = [raw_ids[k] for k in order]
    mat = np.vstack([records[r] for r in raw_sorted])
    w = mat[:, :q]
    outcome = mat[:, q] if has_outcome else None
    return CrossSection(w, ids, outcome)


def _fmt(v):
    # repr of a Python float is the shortest string that round-trips exactly
    return repr(float(v))


def write_panel(panel, path):
    """Emit a panel CSV that load_panel reads back bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "t", "y"] + [f"x{j + 1}" for j in range(panel.p)])
        for i in range(panel.n):
            for t in range(panel.t_len):
                writer.writerow([panel.ids[i], t + 1, _fmt(panel.y[i, t])]
                                + [_fmt(v) for v in panel.x[i, t]])


def write_cross_section(cross, path):
    """Emit a cross-section CSV that load_cross_section reads back bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["id"] + [f"w{j + 1}" for j in range(cross.q)]
        if cross.outcome is not None:
            header.append("outcome")
        writer.writerow(header)
        for i in range(cross.n):
            row = [cross.ids[i]] + [_fmt(v) for v in cross.w[i]]
            if cross.outcome is not None:
                row.append(_fmt(cross.outcome[i]))
            writer.writerow(row)
