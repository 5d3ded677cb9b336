"""Quantile regions with arbitrary shape: directional quantile regression
run in a learned latent space.

Training fits a conditional VAE, transforms every training response to
its latent posterior mean, and fits the directional threshold net on
those latent codes, where the distribution is approximately spherical
and an intersection of half-spaces is an appropriate region. At query
time the latent region is extracted on a latent lattice and pushed
through the decoder pointwise, which can produce non-convex response
regions the directional method alone cannot represent.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .calibration import DiscreteRegion
from .cvae import CvaeModel, decode_batch, encode_batch
from .cvae import fit as fit_cvae
from .nn import TrainConfig
from .npdqr import (
    DEFAULT_MEMBERSHIP_DIRECTIONS,
    DEFAULT_POOL_SIZE,
    DEFAULT_TRAIN_DIRECTIONS,
    DirectionPool,
    NpdqrModel,
    RegionExtractor,
)
from .npdqr import fit as fit_npdqr
from .numerics import Rng
from .regions import REGION_DISCRETIZATION, Grid, build_grid


class StdqrModel:
    """Fitted pipeline: CVAE, latent threshold net, and the latent lattice."""

    def __init__(self, cvae: CvaeModel, latent_model: NpdqrModel, latent_grid: Grid):
        if latent_model.d != cvae.r:
            raise ValueError(
                f"latent net dimension {latent_model.d} != latent size {cvae.r}")
        if latent_grid.dim != cvae.r:
            raise ValueError(
                f"latent grid dimension {latent_grid.dim} != latent size {cvae.r}")
        self.cvae = cvae
        self.latent_model = latent_model
        self.latent_grid = latent_grid
        self._extractor = RegionExtractor(latent_model, latent_grid)

    @property
    def r(self) -> int:
        return self.cvae.r

    def latent_region(self, x) -> DiscreteRegion:
        return self._extractor.extract(x, space="latent")

    def region(self, x) -> DiscreteRegion:
        """Decoded latent region: one response point per latent point."""
        x = np.asarray(x, dtype=float)
        latent = self._extractor.extract(x, space="latent")
        if latent.is_empty:
            return DiscreteRegion(points=np.zeros((0, self.cvae.d)),
                                  space="response", x=x)
        decoded = decode_batch(self.cvae, x[None, :], latent.points)
        return DiscreteRegion(points=decoded, space="response", x=x)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.cvae.save(directory / "cvae")
        self.latent_model.save(directory / "latent_npdqr")
        (directory / "latent_grid.json").write_text(json.dumps(self.latent_grid.to_dict()))
        (directory / "manifest.json").write_text(json.dumps({
            "kind": "stdqr", "r": self.r,
            "components": ["cvae", "latent_npdqr", "latent_grid.json"],
        }))

    @staticmethod
    def load(directory) -> "StdqrModel":
        directory = Path(directory)
        return StdqrModel(
            cvae=CvaeModel.load(directory / "cvae"),
            latent_model=NpdqrModel.load(directory / "latent_npdqr"),
            latent_grid=Grid.from_dict(
                json.loads((directory / "latent_grid.json").read_text())),
        )


def fit(x_train, y_train, x_val, y_val, alpha: float, r: int, lam: float,
        cvae_config: TrainConfig, dqr_config: TrainConfig,
        cvae_hidden=None, cvae_dropout: float = 0.1,
        dqr_hidden=(64, 64, 64), pool: DirectionPool | None = None,
        pool_size: int = DEFAULT_POOL_SIZE,
        train_dir_count: int = DEFAULT_TRAIN_DIRECTIONS,
        membership_count: int = DEFAULT_MEMBERSHIP_DIRECTIONS) -> StdqrModel:
    """Fit the full pipeline at directional miscoverage ``alpha``.

    Responses are transformed to latent space with the deterministic
    posterior mean. The latent lattice spans the 1%/99% quantiles of the
    encoded training latents, widened like any region lattice.
    """
    x_train = np.atleast_2d(np.asarray(x_train, dtype=float))
    y_train = np.atleast_2d(np.asarray(y_train, dtype=float))
    x_val = np.atleast_2d(np.asarray(x_val, dtype=float))
    y_val = np.atleast_2d(np.asarray(y_val, dtype=float))
    cvae = fit_cvae(x_train, y_train, x_val, y_val, r=r, lam=lam,
                    config=cvae_config, hidden=cvae_hidden, dropout=cvae_dropout)
    z_train = encode_batch(cvae, x_train, y_train)
    z_val = encode_batch(cvae, x_val, y_val)
    latent_grid = build_grid(z_train, r, REGION_DISCRETIZATION)
    if pool is None:
        pool = sample_pool_for(r, pool_size, dqr_config.seed)
    latent_model = fit_npdqr(x_train, z_train, x_val, z_val, alpha=alpha,
                             pool=pool, config=dqr_config,
                             train_dir_count=train_dir_count,
                             membership_count=membership_count,
                             hidden=dqr_hidden)
    return StdqrModel(cvae=cvae, latent_model=latent_model, latent_grid=latent_grid)


def sample_pool_for(r: int, pool_size: int, seed: int) -> DirectionPool:
    from .npdqr import sample_direction_pool

    return sample_direction_pool(r, pool_size, Rng(seed).spawn(100))


def region(model: StdqrModel, x) -> DiscreteRegion:
    return model.region(x)
