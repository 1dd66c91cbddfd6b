"""Tabular data ingestion, covariate standardization and stratified folds."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

NA_TOKENS = frozenset({"", "NA", "NaN", "nan", "NAN"})


class DataError(ValueError):
    """Raised when input data violates the dataset contract."""


@dataclass(frozen=True)
class Dataset:
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        A = np.asarray(self.treatment)
        Y = np.asarray(self.outcome, dtype=float)
        n = X.shape[0]
        if A.shape != (n,) or Y.shape != (n,):
            raise DataError("covariates, treatment and outcome must have matching length")
        if len(self.names) != X.shape[1]:
            raise DataError(f"{len(self.names)} names for {X.shape[1]} covariate columns")
        if len(set(self.names)) != len(self.names):
            raise DataError("covariate names must be unique")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DataError("missing value in covariates or outcome; preprocess externally")
        if not np.all((A == 0) | (A == 1)):
            raise DataError("invalid treatment: values must be 0 or 1")
        A = A.astype(int)
        if A.min() == A.max():
            raise DataError("both treatment arms must be present")
        for attr, val in (("covariates", X), ("treatment", A), ("outcome", Y)):
            val.setflags(write=False)
            object.__setattr__(self, attr, val)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.covariates[idx], self.treatment[idx], self.outcome[idx], self.names)


@dataclass(frozen=True)
class NormalizedDataset:
    """A dataset plus its standardized design matrix ``[1 | (X - mean) / sd]``."""

    base: Dataset
    column_means: np.ndarray
    column_sds: np.ndarray
    design: np.ndarray

    @property
    def names(self) -> tuple[str, ...]:
        return self.base.names

    @property
    def treatment(self) -> np.ndarray:
        return self.base.treatment

    @property
    def outcome(self) -> np.ndarray:
        return self.base.outcome

    def standardize(self, covariates) -> np.ndarray:
        """Apply the stored transform to new raw covariates; returns a design matrix."""
        X = np.asarray(covariates, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.column_means.shape[0]:
            raise DataError(
                f"expected {self.column_means.shape[0]} covariate columns, got {X.shape[1]}"
            )
        Z = (X - self.column_means) / self.column_sds
        return np.column_stack([np.ones(X.shape[0]), Z])

    def subset(self, idx) -> "NormalizedDataset":
        """Rows ``idx`` with the parent's standardization kept as-is."""
        return NormalizedDataset(
            self.base.subset(idx), self.column_means, self.column_sds, self.design[idx]
        )


@dataclass(frozen=True)
class FoldAssignment:
    fold_index: np.ndarray
    K: int
    seed: int

    def train_test(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.fold_index == k
        return np.flatnonzero(~test), np.flatnonzero(test)


def _parse_cell(raw: str, row: int, col: str) -> float:
    token = raw.strip()
    if token in NA_TOKENS:
        raise DataError(
            f"missing value in column {col!r} (row {row}); impute before loading"
        )
    try:
        return float(token)
    except ValueError:
        raise DataError(f"non-numeric cell {raw!r} in column {col!r} (row {row})") from None


def load_table(
    path,
    outcome_col: str,
    treatment_col: str,
    exclude_cols: Sequence[str] = (),
    delimiter: str = ",",
) -> Dataset:
    """Read a delimited text file with a header row into a :class:`Dataset`.

    Every column other than the outcome, the treatment and ``exclude_cols`` is
    used as a covariate, in file order.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [r for r in reader if r]

    for col in (outcome_col, treatment_col, *exclude_cols):
        if col not in header:
            raise DataError(f"column {col!r} not found in {path}")
    skip = {outcome_col, treatment_col, *exclude_cols}
    cov_cols = [h for h in header if h not in skip]

    values = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            if header[j] in exclude_cols:
                values[i - 2, j] = 0.0
            else:
                values[i - 2, j] = _parse_cell(cell, i, header[j])

    a = values[:, header.index(treatment_col)]
    if not np.all((a == 0) | (a == 1)):
        bad = a[(a != 0) & (a != 1)][0]
        raise DataError(f"invalid treatment value {bad:g} in column {treatment_col!r}")
    X = values[:, [header.index(c) for c in cov_cols]]
    return Dataset(X, a.astype(int), values[:, header.index(outcome_col)], tuple(cov_cols))


def normalize(d: Dataset) -> NormalizedDataset:
    """Standardize covariates to mean 0 and sample sd 1 and prepend an intercept."""
    X = d.covariates
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1)
    bad = [d.names[j] for j in np.flatnonzero(~(sds > 0))]
    if bad:
        raise DataError(f"constant column(s) cannot be standardized: {', '.join(bad)}")
    design = np.column_stack([np.ones(d.n), (X - means) / sds])
    design.setflags(write=False)
    return NormalizedDataset(d, means, sds, design)


def kfold_split(treatment, K: int, seed: int) -> FoldAssignment:
    """Stratified K-fold assignment.

    Units are shuffled within each arm and dealt round-robin; the second arm
    continues the rotation where the first stopped, so overall fold sizes
    also differ by at most one.
    """
    A = np.asarray(treatment).astype(int)
    if K < 2:
        raise ValueError(f"need K >= 2 folds, got {K}")
    rng = np.random.default_rng(seed)
    fold = np.empty(A.shape[0], dtype=int)
    offset = 0
    for arm in (0, 1):
        idx = np.flatnonzero(A == arm)
        if idx.size < K:
            raise DataError(f"treatment arm {arm} has {idx.size} units, fewer than K={K}")
        idx = rng.permutation(idx)
        fold[idx] = (offset + np.arange(idx.size)) % K
        offset = (offset + idx.size) % K
    fold.setflags(write=False)
    return FoldAssignment(fold, K, seed)
