"""Per-dimension quantile regression baseline producing hyperrectangle
regions, with conformal widening of all faces by a single offset.

Each response dimension gets an independent lower and upper pinball
regressor so that the product of the per-dimension intervals reaches the
target coverage by a union bound. Calibration computes the classic
interval conformity score per dimension, takes the worst dimension, and
widens (or shrinks, when negative) every interval by the empirical
quantile of those scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import CalibrationSetTooSmallError
from .nn import MlpModel, PinballLoss, TrainConfig, forward_batch, init_mlp, train
from .numerics import Rng, empirical_quantile
from .regions import Grid

# Per-dimension quantile levels for a target miscoverage alpha, with
# beta = alpha / d the per-dimension budget:
#   centered: (beta/2, 1 - beta/2), so each interval is a centered
#             1 - beta interval (the default),
#   tail:     (beta, 1 - beta), a wider per-dimension coverage variant;
#             the conformal offset absorbs the difference.
LEVELS_CENTERED = "centered"
LEVELS_TAIL = "tail"

DEFAULT_HIDDEN = (64, 64, 64)


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned box; empty when any interval is crossed."""

    lower: np.ndarray
    upper: np.ndarray

    def contains(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all(self.lower <= y) and np.all(y <= self.upper))

    def contains_batch(self, ys: np.ndarray) -> np.ndarray:
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        return np.all((ys >= self.lower) & (ys <= self.upper), axis=1)

    def volume(self) -> float:
        return float(np.prod(np.maximum(self.upper - self.lower, 0.0)))

    def grid_cell_count(self, grid: Grid) -> int:
        """Number of grid cell centers inside; decomposes per dimension."""
        count = 1
        for j in range(grid.dim):
            centers = grid.axis_centers(j)
            count *= int(((centers >= self.lower[j]) & (centers <= self.upper[j])).sum())
        return count


def quantile_levels(alpha: float, d: int, scheme: str = LEVELS_CENTERED):
    beta = alpha / d
    if scheme == LEVELS_CENTERED:
        return beta / 2.0, 1.0 - beta / 2.0
    if scheme == LEVELS_TAIL:
        return beta, 1.0 - beta
    raise ValueError(f"unknown level scheme {scheme!r}")


class NaiveModel:
    """2d pinball nets (lower and upper per response dimension) plus the
    conformal widening offset once calibrated."""

    def __init__(self, nets_lo, nets_hi, alpha, scheme, offset=None):
        if len(nets_lo) != len(nets_hi):
            raise ValueError("need one lower and one upper net per dimension")
        self.nets_lo = nets_lo
        self.nets_hi = nets_hi
        self.alpha = float(alpha)
        self.scheme = scheme
        self.offset = offset  # None until calibrated

    @property
    def d(self) -> int:
        return len(self.nets_lo)

    @property
    def is_calibrated(self) -> bool:
        return self.offset is not None

    def bounds(self, x_rows: np.ndarray):
        """Per-dimension (lower, upper) quantile estimates, each (n, d)."""
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        lo = np.column_stack([forward_batch(net, x_rows)[:, 0] for net in self.nets_lo])
        hi = np.column_stack([forward_batch(net, x_rows)[:, 0] for net in self.nets_hi])
        return lo, hi

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for j, (lo, hi) in enumerate(zip(self.nets_lo, self.nets_hi)):
            lo.save(directory / f"net_lo_{j}.json")
            hi.save(directory / f"net_hi_{j}.json")
        meta = {"alpha": self.alpha, "scheme": self.scheme, "d": self.d,
                "offset": self.offset}
        (directory / "naive_meta.json").write_text(json.dumps(meta))

    @staticmethod
    def load(directory) -> "NaiveModel":
        directory = Path(directory)
        meta = json.loads((directory / "naive_meta.json").read_text())
        nets_lo = [MlpModel.load(directory / f"net_lo_{j}.json") for j in range(meta["d"])]
        nets_hi = [MlpModel.load(directory / f"net_hi_{j}.json") for j in range(meta["d"])]
        return NaiveModel(nets_lo, nets_hi, meta["alpha"], meta["scheme"], meta["offset"])


def fit(x_train, y_train, x_val, y_val, alpha: float, config: TrainConfig,
        scheme: str = LEVELS_CENTERED, hidden=DEFAULT_HIDDEN) -> NaiveModel:
    """Train the 2d per-dimension pinball regressors."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    x_train = np.atleast_2d(np.asarray(x_train, dtype=float))
    y_train = np.atleast_2d(np.asarray(y_train, dtype=float))
    d = y_train.shape[1]
    level_lo, level_hi = quantile_levels(alpha, d, scheme)
    widths = (x_train.shape[1], *hidden, 1)
    seed_rng = Rng(config.seed)
    nets_lo, nets_hi = [], []
    for j in range(d):
        for level, bucket in ((level_lo, nets_lo), (level_hi, nets_hi)):
            net = init_mlp(widths, seed_rng.spawn(len(nets_lo) + len(nets_hi)))
            net_config = TrainConfig(
                learning_rate=config.learning_rate, batch_size=config.batch_size,
                max_epochs=config.max_epochs, patience=config.patience,
                seed=seed_rng.spawn(1000 + len(nets_lo) + len(nets_hi)).seed,
            )
            net, _ = train(net, (x_train, y_train[:, j]), PinballLoss(level),
                           net_config, (x_val, y_val[:, j]))
            bucket.append(net)
    return NaiveModel(nets_lo, nets_hi, alpha, scheme)


def cqr_scores(model: NaiveModel, x_rows, y_rows) -> np.ndarray:
    """Worst per-dimension interval violation; negative inside the box."""
    y_rows = np.atleast_2d(np.asarray(y_rows, dtype=float))
    if y_rows.shape[1] != model.d:
        raise ValueError(f"responses have {y_rows.shape[1]} dims, model has {model.d}")
    lo, hi = model.bounds(x_rows)
    return np.maximum(lo - y_rows, y_rows - hi).max(axis=1)


def cqr_score(model: NaiveModel, x, y) -> float:
    return float(cqr_scores(model, np.atleast_2d(x), np.atleast_2d(y))[0])


def calibrate(model: NaiveModel, x_cal, y_cal, alpha: float) -> NaiveModel:
    """Set the widening offset to the conformity-score quantile."""
    y_cal = np.atleast_2d(np.asarray(y_cal, dtype=float))
    n2 = y_cal.shape[0]
    if n2 == 0:
        raise CalibrationSetTooSmallError("calibration set is empty")
    k = int(np.ceil((1.0 - alpha) * (n2 + 1)))
    if k > n2:
        raise CalibrationSetTooSmallError(
            f"need ceil((1-alpha)(n2+1)) = {k} <= n2 = {n2}")
    scores = cqr_scores(model, x_cal, y_cal)
    offset = empirical_quantile(scores, k)
    return NaiveModel(model.nets_lo, model.nets_hi, model.alpha, model.scheme,
                      offset=offset)


def region(model: NaiveModel, x) -> Rectangle:
    """Per-dimension intervals widened by the calibration offset."""
    offset = model.offset if model.offset is not None else 0.0
    lo, hi = model.bounds(np.atleast_2d(np.asarray(x, dtype=float)))
    return Rectangle(lower=lo[0] - offset, upper=hi[0] + offset)


def membership_flags(model: NaiveModel, x_rows, y_rows) -> np.ndarray:
    """Vectorized rectangle membership of each (x, y) pair."""
    offset = model.offset if model.offset is not None else 0.0
    y_rows = np.atleast_2d(np.asarray(y_rows, dtype=float))
    lo, hi = model.bounds(x_rows)
    return np.all((y_rows >= lo - offset) & (y_rows <= hi + offset), axis=1)
