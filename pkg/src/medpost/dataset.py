"""Data ingestion, synthetic generation, partitioning, outlier injection.

All randomized operations are pure functions of their inputs and an explicit
seed. Datasets are immutable after construction (arrays are marked
read-only) and safe to share across threads and processes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

INTERCEPT_NAME = "(intercept)"


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``x`` (N rows, D columns), response ``y`` and column labels."""

    x: np.ndarray
    y: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2:
            raise DataError(f"x must be a 2-d matrix, got ndim={x.ndim}")
        if y.ndim != 1:
            raise DataError(f"y must be a 1-d vector, got ndim={y.ndim}")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"row mismatch: x has {x.shape[0]} rows, y has {y.shape[0]}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError("need at least one row and one column")
        if not np.isfinite(x).all():
            raise DataError("x contains non-finite entries")
        if not np.isfinite(y).all():
            raise DataError("y contains non-finite entries")
        names = tuple(self.column_names) or tuple(f"x{j+1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError(f"{len(names)} column names for {x.shape[1]} columns")
        x = x.copy()
        y = y.copy()
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_names", names)

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def n_cols(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class Partition:
    """Assignment of N rows to r roughly equal subsets.

    ``subset_assignments[i]`` is the subset index of row i; ``sizes[j]`` the
    number of rows in subset j. Rows of a subset are recovered in original
    row order, which makes the r=1 partition the identity.
    """

    subset_assignments: np.ndarray
    r: int
    sizes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.subset_assignments, dtype=int)
        sizes = np.asarray(self.sizes, dtype=int)
        if self.r < 1:
            raise DataError("subset count must be >= 1")
        if sizes.shape != (self.r,):
            raise DataError("sizes must have length r")
        counts = np.bincount(a, minlength=self.r)
        if counts.shape[0] != self.r or (counts != sizes).any():
            raise DataError("sizes inconsistent with assignments")
        if counts.min() < 1:
            raise DataError("every subset must be non-empty")
        if counts.max() - counts.min() > 1:
            raise DataError("subset sizes must differ by at most one")
        a = a.copy()
        sizes = sizes.copy()
        a.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "subset_assignments", a)
        object.__setattr__(self, "sizes", sizes)

    def rows_of(self, j: int) -> np.ndarray:
        """Row indices of subset j, in original row order."""
        if not 0 <= j < self.r:
            raise DataError(f"subset index {j} out of range [0, {self.r})")
        return np.flatnonzero(self.subset_assignments == j)


@dataclass(frozen=True)
class OutlierPlan:
    """How many responses to corrupt, by how much, and (optionally) where."""

    count: int
    magnitude: float
    target_indices: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.count < 0:
            raise DataError("outlier count must be nonnegative")
        if self.magnitude < 0:
            raise DataError("outlier magnitude must be nonnegative")
        if self.target_indices is not None:
            targets = tuple(int(i) for i in self.target_indices)
            if len(targets) != self.count:
                raise DataError(
                    f"{len(targets)} target indices given for count={self.count}")
            if len(set(targets)) != len(targets):
                raise DataError("duplicate outlier target indices")
            object.__setattr__(self, "target_indices", targets)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a seeded synthetic regression dataset."""

    n: int
    d: int
    n_true: int
    noise_sd: float = 1.0
    beta_true: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise DataError("n and d must be positive")
        if self.n_true > self.d:
            raise DataError(f"n_true={self.n_true} exceeds d={self.d}")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be nonnegative")
        if self.beta_true is not None:
            beta = np.asarray(self.beta_true, dtype=float)
            if beta.shape != (self.d,):
                raise DataError("beta_true must have length d")
            if int(np.count_nonzero(beta)) != self.n_true:
                raise DataError("beta_true must have exactly n_true nonzero entries")
            beta = beta.copy()
            beta.setflags(write=False)
            object.__setattr__(self, "beta_true", beta)


def load_csv(path, response_column: str) -> Dataset:
    """Read a numeric CSV with a header row; one column is the response.

    Remaining columns form the design matrix in file order. Any non-numeric
    cell is an error naming the offending row and column.
    """
    try:
        fh = open(path, "r", newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        if response_column not in header:
            raise DataError(
                f"{path}: response column {response_column!r} not in header {header}")
        resp_idx = header.index(response_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for cell, name in zip(row, header):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell at row {lineno}, "
                        f"column {name!r}: {cell!r}") from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    y = data[:, resp_idx]
    x = np.delete(data, resp_idx, axis=1)
    names = tuple(n for i, n in enumerate(header) if i != resp_idx)
    return Dataset(x=x, y=y, column_names=names)


def standardize(ds: Dataset) -> Dataset:
    """Center each predictor column and scale it to unit Euclidean norm.

    The response is left unchanged. Idempotent up to floating error.
    """
    if ds.n_rows < 2:
        raise DataError("standardize needs at least 2 rows")
    x = ds.x - ds.x.mean(axis=0)
    norms = np.linalg.norm(x, axis=0)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        names = ", ".join(ds.column_names[j] for j in bad)
        raise DataError(f"zero-variance column(s): {names}")
    return Dataset(x=x / norms, y=ds.y, column_names=ds.column_names)


def with_intercept(ds: Dataset) -> Dataset:
    """Prepend an all-ones intercept column (kept in every candidate model)."""
    if INTERCEPT_NAME in ds.column_names:
        raise DataError("dataset already has an intercept column")
    ones = np.ones((ds.n_rows, 1))
    return Dataset(
        x=np.hstack([ones, ds.x]),
        y=ds.y,
        column_names=(INTERCEPT_NAME,) + ds.column_names,
    )


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, np.ndarray]:
    """Draw x ~ iid standard normal and y = x @ beta_true + noise.

    When ``beta_true`` is not supplied, the first ``n_true`` coordinates get
    the values 3, 1.5, 2 (cycled). Deterministic given ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal((spec.n, spec.d))
    if spec.beta_true is not None:
        beta = np.asarray(spec.beta_true, dtype=float).copy()
    else:
        beta = np.zeros(spec.d)
        pattern = [3.0, 1.5, 2.0]
        for k in range(spec.n_true):
            beta[k] = pattern[k % len(pattern)]
    y = x @ beta
    if spec.noise_sd > 0:
        y = y + spec.noise_sd * rng.standard_normal(spec.n)
    ds = Dataset(x=x, y=y)
    beta.setflags(write=False)
    return ds, beta


def partition(ds: Dataset, r: int, seed: int) -> Partition:
    """Deal a seeded uniform permutation of rows round-robin into r subsets."""
    n = ds.n_rows
    if r < 1:
        raise DataError("subset count r must be >= 1")
    if r > n:
        raise DataError(f"cannot split {n} rows into {r} subsets")
    assignments = np.empty(n, dtype=int)
    perm = np.random.default_rng(seed).permutation(n)
    assignments[perm] = np.arange(n) % r
    sizes = np.bincount(assignments, minlength=r)
    return Partition(subset_assignments=assignments, r=r, sizes=sizes)


def inject_outliers(ds: Dataset, plan: OutlierPlan, seed: int) -> Dataset:
    """Overwrite ``plan.count`` responses with one extreme value.

    The value is v = y[i*] + sign(y[i*]) * magnitude where i* maximizes |y|
    over the uncontaminated responses; all corrupted rows receive the same v.
    Targets default to seeded-random distinct rows. x is untouched.
    """
    if plan.count > ds.n_rows:
        raise DataError(f"count={plan.count} exceeds N={ds.n_rows}")
    if plan.count == 0:
        return ds
    if plan.target_indices is not None:
        targets = np.asarray(plan.target_indices, dtype=int)
        if targets.min() < 0 or targets.max() >= ds.n_rows:
            raise DataError("outlier target index out of range")
    else:
        targets = np.random.default_rng(seed).choice(
            ds.n_rows, size=plan.count, replace=False)
    i_star = int(np.argmax(np.abs(ds.y)))
    v = ds.y[i_star] + np.sign(ds.y[i_star]) * plan.magnitude
    y = ds.y.copy()
    y[targets] = v
    return Dataset(x=ds.x, y=y, column_names=ds.column_names)


def take_rows(ds: Dataset, rows: Sequence[int]) -> Dataset:
    """Dataset restricted to the given rows (original order preserved by caller)."""
    rows = np.asarray(rows, dtype=int)
    return Dataset(x=ds.x[rows], y=ds.y[rows], column_names=ds.column_names)
