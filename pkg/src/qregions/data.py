"""Data handling: synthetic v-shaped generators, deterministic splits,
z-score normalization with train-only statistics, PCA reduction, and CSV
ingestion for user-supplied datasets."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng

LINEAR = "linear"
NONLINEAR = "nonlinear"

# Default sample counts for the synthetic settings, by feature dimension.
_DEFAULT_SAMPLES = {
    (LINEAR, 1): 20_000,
    (LINEAR, 10): 20_000,
    (LINEAR, 50): 80_000,
    (LINEAR, 100): 100_000,
    (NONLINEAR, 1): 20_000,
    (NONLINEAR, 10): 20_000,
}

_SPLIT_FRACTIONS = (0.384, 0.256, 0.16, 0.2)  # train, calibration, validation, test


class CsvParseError(ValueError):
    """Malformed CSV content, carrying the 1-based row and column."""

    def __init__(self, message: str, row: int, column):
        super().__init__(f"{message} (row {row}, column {column})")
        self.row = row
        self.column = column


@dataclass
class Dataset:
    """Paired feature and response matrices with aligned rows."""

    x: np.ndarray
    y: np.ndarray
    feature_names: list = field(default_factory=list)
    response_names: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("features and responses disagree on row count")
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.x.shape[1])]
        if not self.response_names:
            self.response_names = [f"y{j}" for j in range(self.y.shape[1])]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    calibration: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def sizes(self):
        return (len(self.train), len(self.calibration),
                len(self.validation), len(self.test))


def default_sample_count(setting: str, p: int) -> int:
    try:
        return _DEFAULT_SAMPLES[(setting, p)]
    except KeyError:
        return 20_000


def gen_synthetic(setting: str, d: int, p: int, n: int, seed: int) -> Dataset:
    """Synthetic regression data whose conditional response traces a
    v-shaped curve that sharpens and shifts with the features.

    The direction vector beta is drawn once per dataset and normalized to
    unit L1 norm; everything else is drawn per row.
    """
    if setting not in (LINEAR, NONLINEAR):
        raise ValueError(f"unknown synthetic setting {setting!r}")
    if d not in (2, 3, 4):
        raise ValueError(f"response dimension must be 2, 3 or 4, got {d}")
    if p < 1 or n < 1:
        raise ValueError("feature dimension and sample count must be positive")
    rng = Rng(seed)
    beta_hat = rng.uniform(0.0, 1.0, size=p)
    beta = beta_hat / np.sum(np.abs(beta_hat))
    z = rng.uniform(-np.pi, np.pi, size=n)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    radius = rng.uniform(-0.1, 0.1, size=n)
    x = rng.uniform(0.8, 3.2, size=(n, p))
    scaled = z / (x @ beta)
    y0 = scaled + radius * np.cos(phi)
    y1 = 0.5 * (-np.cos(z) + 1.0) + radius * np.sin(phi)
    if setting == NONLINEAR:
        y1 = y1 + np.sin(x.mean(axis=1))
    columns = [y0, y1]
    if d >= 3:
        columns.append(np.sin(scaled))
    if d == 4:
        columns.append(np.cos(np.sin(scaled)) + radius * np.cos(phi) * np.sin(phi))
    return Dataset(x=x, y=np.stack(columns, axis=1))


def split(n: int, seed: int) -> SplitIndices:
    """Seeded permutation split into train/calibration/validation/test.

    Sizes are the floors of the split fractions, with leftover rows
    assigned by largest fractional part (ties broken in train,
    calibration, validation, test order).
    """
    if n < 10:
        raise ValueError(f"need at least 10 rows to split, got {n}")
    floors = [int(np.floor(f * n)) for f in _SPLIT_FRACTIONS]
    remainder = n - sum(floors)
    fracs = [f * n - fl for f, fl in zip(_SPLIT_FRACTIONS, floors)]
    for slot in sorted(range(4), key=lambda j: (-fracs[j], j))[:remainder]:
        floors[slot] += 1
    perm = Rng(seed).permutation(n)
    bounds = np.cumsum(floors)
    return SplitIndices(
        train=perm[: bounds[0]],
        calibration=perm[bounds[0] : bounds[1]],
        validation=perm[bounds[1] : bounds[2]],
        test=perm[bounds[2] :],
        seed=seed,
    )


@dataclass(frozen=True)
class ColumnStats:
    """Per-column mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "ColumnStats":
        return ColumnStats(np.array(d["mean"], dtype=float),
                           np.array(d["std"], dtype=float))


def _fit_stats(values: np.ndarray, names) -> ColumnStats:
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population (1/n) standard deviation
    for j, s in enumerate(std):
        if s <= 0.0:
            raise ValueError(f"zero variance in training column {names[j]!r}")
    return ColumnStats(mean, std)


def zscore_fit_apply(dataset: Dataset, train_indices):
    """Normalize every column by train-only mean/std.

    Returns (normalized dataset, feature stats, response stats).
    """
    train_indices = np.asarray(train_indices)
    if len(train_indices) < 2:
        raise ValueError("need at least 2 training rows to fit normalization")
    x_stats = _fit_stats(dataset.x[train_indices], dataset.feature_names)
    y_stats = _fit_stats(dataset.y[train_indices], dataset.response_names)
    normalized = Dataset(
        x=x_stats.normalize(dataset.x),
        y=y_stats.normalize(dataset.y),
        feature_names=list(dataset.feature_names),
        response_names=list(dataset.response_names),
    )
    return normalized, x_stats, y_stats


def pca_reduce(x: np.ndarray, k: int):
    """Project onto the top-k eigendirections of the feature covariance.

    Returns (projected n-by-k matrix, basis p-by-k, explained variances in
    nonincreasing order). The basis sign is fixed so that each column's
    largest-magnitude entry is positive.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    if not 1 <= k <= min(n, p):
        raise ValueError(f"PCA rank k={k} must lie in [1, min(n, p)={min(n, p)}]")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    basis = eigvecs[:, order]
    for j in range(k):
        pivot = np.argmax(np.abs(basis[:, j]))
        if basis[pivot, j] < 0:
            basis[:, j] = -basis[:, j]
    explained = np.maximum(eigvals[order], 0.0)
    return centered @ basis, basis, explained


def load_csv(path, response_columns) -> Dataset:
    """Read a headed CSV, routing the named columns to the response matrix
    and everything else to the features."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file", 1, "-") from None
        for name in response_columns:
            if name not in header:
                raise CsvParseError(f"missing response column {name!r}", 1, name)
        response_idx = [header.index(name) for name in response_columns]
        feature_idx = [j for j in range(len(header)) if j not in response_idx]
        x_rows, y_rows = [], []
        for row_number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvParseError(
                    f"expected {len(header)} fields, found {len(row)}",
                    row_number, "-")
            values = []
            for j, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise CsvParseError(
                        f"non-numeric value {cell!r}", row_number, header[j]
                    ) from None
            x_rows.append([values[j] for j in feature_idx])
            y_rows.append([values[j] for j in response_idx])
    if not x_rows:
        raise CsvParseError("no data rows", 2, "-")
    return Dataset(
        x=np.array(x_rows, dtype=float),
        y=np.array(y_rows, dtype=float),
        feature_names=[header[j] for j in feature_idx],
        response_names=[header[j] for j in response_idx],
    )


def write_csv(dataset: Dataset, path) -> None:
    """Write features then responses with a header row; floats use repr so
    a read-back is bit-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.feature_names) + list(dataset.response_names))
        for xi, yi in zip(dataset.x, dataset.y):
            writer.writerow([repr(float(v)) for v in xi]
                            + [repr(float(v)) for v in yi])
