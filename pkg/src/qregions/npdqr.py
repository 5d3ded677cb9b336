"""Directional quantile regression with a nonparametric threshold net.

A single network maps (features, unit direction) to a scalar threshold:
the level-alpha lower quantile of the response projected on that
direction. Each direction then carves the half-space
``{y : u . y >= f(x, u)}`` and the quantile region is the intersection
over a frozen set of membership directions, realized as the subset of a
lattice where every half-space constraint holds.

Directions are drawn once into a fixed pool; each gradient step samples
a small batch of pool directions, and membership uses a larger subset
frozen at fit time so that region queries are deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import DiscreteRegion
from .nn import (
    AdamState,
    MlpModel,
    PinballLoss,
    TrainConfig,
    adam_step,
    backward,
    forward_batch,
    forward_cached,
    init_mlp,
    run_training_loop,
)
from .numerics import Rng

DEFAULT_POOL_SIZE = 2048
DEFAULT_TRAIN_DIRECTIONS = 32
DEFAULT_MEMBERSHIP_DIRECTIONS = 256
DEFAULT_HIDDEN = (64, 64, 64)


@dataclass(frozen=True)
class DirectionPool:
    """Fixed collection of unit vectors on the sphere."""

    dim: int
    directions: np.ndarray
    seed: int

    def __len__(self) -> int:
        return self.directions.shape[0]


def sample_direction_pool(d: int, count: int, rng: Rng) -> DirectionPool:
    """Directions uniform on the sphere: normalized standard normals."""
    if d < 1 or count < 1:
        raise ValueError("pool needs a positive dimension and size")
    raw = rng.standard_normal(size=(count, d))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    # A zero draw is a measure-zero event; regenerate those rows defensively.
    while np.any(norms == 0.0):  # pragma: no cover
        bad = norms[:, 0] == 0.0
        raw[bad] = rng.standard_normal(size=(int(bad.sum()), d))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
    return DirectionPool(dim=d, directions=raw / norms, seed=rng.seed)


class NpdqrModel:
    """Threshold net plus its direction pool and frozen membership subset."""

    def __init__(self, net: MlpModel, pool: DirectionPool, alpha: float,
                 membership_indices: np.ndarray, train_dir_count: int):
        self.net = net
        self.pool = pool
        self.alpha = float(alpha)
        self.membership_indices = np.asarray(membership_indices, dtype=int)
        self.train_dir_count = int(train_dir_count)

    @property
    def d(self) -> int:
        return self.pool.dim

    @property
    def p(self) -> int:
        return self.net.in_width - self.pool.dim

    @property
    def membership_directions(self) -> np.ndarray:
        return self.pool.directions[self.membership_indices]

    def thresholds(self, x_rows: np.ndarray, directions=None) -> np.ndarray:
        """f(x, u) for each row and direction, shape (n, m)."""
        if directions is None:
            directions = self.membership_directions
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        n, m = x_rows.shape[0], directions.shape[0]
        out = np.empty((n, m))
        rows_per_chunk = max(1, 262_144 // m)
        for start in range(0, n, rows_per_chunk):
            block = x_rows[start : start + rows_per_chunk]
            stacked = np.concatenate(
                [np.repeat(block, m, axis=0), np.tile(directions, (block.shape[0], 1))],
                axis=1,
            )
            out[start : start + rows_per_chunk] = forward_batch(
                self.net, stacked
            ).reshape(block.shape[0], m)
        return out

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.net.save(directory / "threshold_net.json")
        meta = {
            "alpha": self.alpha,
            "pool_seed": self.pool.seed,
            "pool_size": len(self.pool),
            "dim": self.pool.dim,
            "membership_indices": self.membership_indices.tolist(),
            "train_dir_count": self.train_dir_count,
        }
        (directory / "npdqr_meta.json").write_text(json.dumps(meta))

    @staticmethod
    def load(directory) -> "NpdqrModel":
        directory = Path(directory)
        meta = json.loads((directory / "npdqr_meta.json").read_text())
        pool = sample_direction_pool(meta["dim"], meta["pool_size"], Rng(meta["pool_seed"]))
        return NpdqrModel(
            net=MlpModel.load(directory / "threshold_net.json"),
            pool=pool,
            alpha=meta["alpha"],
            membership_indices=np.array(meta["membership_indices"], dtype=int),
            train_dir_count=meta["train_dir_count"],
        )


def fit(x_train, y_train, x_val, y_val, alpha: float, pool: DirectionPool,
        config: TrainConfig, train_dir_count: int = DEFAULT_TRAIN_DIRECTIONS,
        membership_count: int = DEFAULT_MEMBERSHIP_DIRECTIONS,
        hidden=DEFAULT_HIDDEN, dropout: float = 0.0) -> NpdqrModel:
    """Pinball-train the threshold net on direction projections.

    Each gradient step pairs one batch of rows with a fresh sample of
    ``train_dir_count`` pool directions; the target for (row i,
    direction u) is the projection u . y_i and the loss level is alpha,
    so the net estimates the lower directional quantile.
    """
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"directional miscoverage must be in (0, 0.5), got {alpha}")
    x_train = np.atleast_2d(np.asarray(x_train, dtype=float))
    y_train = np.atleast_2d(np.asarray(y_train, dtype=float))
    x_val = np.atleast_2d(np.asarray(x_val, dtype=float))
    y_val = np.atleast_2d(np.asarray(y_val, dtype=float))
    if y_train.shape[1] != pool.dim:
        raise ValueError(f"responses have {y_train.shape[1]} dims, pool has {pool.dim}")
    if not 1 <= train_dir_count <= len(pool):
        raise ValueError("train direction count must fit in the pool")
    if not 1 <= membership_count <= len(pool):
        raise ValueError("membership direction count must fit in the pool")
    n, p = x_train.shape
    rng = Rng(config.seed)
    drop_rng = rng.spawn(1)
    membership_indices = rng.spawn(2).subset(len(pool), membership_count)
    val_dirs = pool.directions[rng.spawn(3).subset(len(pool), train_dir_count)]

    net = init_mlp((p + pool.dim, *hidden, 1), rng.spawn(4), dropout=dropout)
    loss = PinballLoss(alpha)
    params = net.parameters()
    adam = AdamState.for_params(params)

    # Validation inputs are fixed, so assemble them once.
    val_stack = np.concatenate(
        [np.repeat(x_val, len(val_dirs), axis=0),
         np.tile(val_dirs, (x_val.shape[0], 1))], axis=1)
    val_targets = (y_val @ val_dirs.T).reshape(-1, 1)

    def run_epoch(epoch: int) -> float:
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            dirs = pool.directions[rng.subset(len(pool), train_dir_count)]
            stacked = np.concatenate(
                [np.repeat(x_train[idx], len(dirs), axis=0),
                 np.tile(dirs, (len(idx), 1))], axis=1)
            targets = (y_train[idx] @ dirs.T).reshape(-1, 1)
            out, cache = forward_cached(net, stacked, train_mode=True, rng=drop_rng)
            batch_loss, grad_out = loss.value_and_grad(targets, out)
            grads, _ = backward(net, cache, grad_out, train_mode=True)
            adam_step(params, grads, adam, config.learning_rate)
            total += batch_loss * len(idx)
            seen += len(idx)
        return total / seen

    def val_loss() -> float:
        return loss.value(val_targets, forward_batch(net, val_stack))

    run_training_loop(params, run_epoch, val_loss, config.max_epochs, config.patience)
    return NpdqrModel(net=net, pool=pool, alpha=alpha,
                      membership_indices=membership_indices,
                      train_dir_count=train_dir_count)


def contains(model: NpdqrModel, x, y, directions=None) -> bool:
    """Whether y satisfies u . y >= f(x, u) for every membership direction."""
    if directions is None:
        directions = model.membership_directions
    y = np.asarray(y, dtype=float)
    if y.shape != (model.d,):
        raise ValueError(f"response has shape {y.shape}, expected ({model.d},)")
    f = model.thresholds(np.atleast_2d(np.asarray(x, dtype=float)), directions)[0]
    return bool(np.all(directions @ y >= f))


class RegionExtractor:
    """Caches a lattice's direction projections for repeated extraction.

    Membership of a lattice point is a conjunction over directions, so a
    cheap subset of directions prunes most points before the full check;
    the result is identical to testing every direction.
    """

    def __init__(self, model: NpdqrModel, grid, prefilter: int = 16):
        self.model = model
        self.grid = grid
        if grid.dim != model.d:
            raise ValueError(f"grid dimension {grid.dim} != response dimension {model.d}")
        self.points = grid.points()
        dirs = model.membership_directions
        self.prefilter = min(prefilter, dirs.shape[0])
        self.projections_head = self.points @ dirs[: self.prefilter].T
        self.projections_tail = self.points @ dirs[self.prefilter :].T

    def mask(self, x) -> np.ndarray:
        f = self.model.thresholds(np.atleast_2d(np.asarray(x, dtype=float)))[0]
        candidate = np.all(self.projections_head >= f[: self.prefilter], axis=1)
        if self.projections_tail.shape[1] and candidate.any():
            idx = np.nonzero(candidate)[0]
            keep = np.all(self.projections_tail[idx] >= f[self.prefilter :], axis=1)
            candidate[idx] = keep
        return candidate

    def extract(self, x, space: str = "response") -> DiscreteRegion:
        return DiscreteRegion(points=self.points[self.mask(x)], space=space,
                              x=np.asarray(x, dtype=float))


def extract_region(model: NpdqrModel, x, grid) -> DiscreteRegion:
    """Lattice points where every directional constraint holds."""
    return RegionExtractor(model, grid).extract(x)
