"""Conditional variational auto-encoder mapping responses to an
approximately standard-normal latent and back.

The encoder reads (features, response) and emits a Gaussian posterior
(mean, log-variance) over an r-dimensional latent; the decoder reads
(features, latent) and reconstructs the response. Training minimizes the
mean of squared reconstruction error plus a weighted KL pull of the
posterior toward N(0, I). Predicting log-variance keeps the
reparameterization numerically stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import (
    AdamState,
    MlpModel,
    TrainConfig,
    adam_step,
    backward,
    forward_batch,
    forward_cached,
    init_mlp,
    run_training_loop,
)
from .numerics import Rng

# Encoder/decoder hidden stacks by feature dimension.
_HIDDEN_BY_P = (
    (5, (32, 64, 128, 256, 128, 64, 32)),
    (8, (64, 128, 256, 128, 64)),
    (10, (64, 128, 256, 512, 256, 128, 64)),
    (25, (64, 128, 256, 256, 128, 64)),
)
_HIDDEN_LARGE_P = (128, 256, 512, 512, 256, 128)


def default_hidden(p: int) -> tuple:
    for bound, widths in _HIDDEN_BY_P:
        if p <= bound:
            return widths
    return _HIDDEN_LARGE_P


class CvaeModel:
    """Encoder/decoder pair with latent dimension r and KL weight lam."""

    def __init__(self, encoder: MlpModel, decoder: MlpModel, r: int, lam: float):
        if encoder.out_width != 2 * r:
            raise ValueError(f"encoder must emit 2r = {2 * r} values, emits {encoder.out_width}")
        if lam < 0:
            raise ValueError(f"KL weight must be nonnegative, got {lam}")
        self.encoder = encoder
        self.decoder = decoder
        self.r = int(r)
        self.lam = float(lam)

    @property
    def p(self) -> int:
        return self.decoder.in_width - self.r

    @property
    def d(self) -> int:
        return self.decoder.out_width

    def posterior(self, x_rows: np.ndarray, y_rows: np.ndarray):
        """Encoder output split into (mu, logvar), each (n, r)."""
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        y_rows = np.atleast_2d(np.asarray(y_rows, dtype=float))
        out = forward_batch(self.encoder, np.concatenate([x_rows, y_rows], axis=1))
        return out[:, : self.r], out[:, self.r :]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.encoder.save(directory / "encoder.json")
        self.decoder.save(directory / "decoder.json")
        (directory / "cvae_meta.json").write_text(
            json.dumps({"r": self.r, "lam": self.lam}))

    @staticmethod
    def load(directory) -> "CvaeModel":
        directory = Path(directory)
        meta = json.loads((directory / "cvae_meta.json").read_text())
        return CvaeModel(
            encoder=MlpModel.load(directory / "encoder.json"),
            decoder=MlpModel.load(directory / "decoder.json"),
            r=meta["r"], lam=meta["lam"],
        )


def encode_batch(model: CvaeModel, x_rows, y_rows, rng: Rng | None = None,
                 stochastic: bool = False) -> np.ndarray:
    """Latent codes: posterior mean, or a reparameterized sample."""
    mu, logvar = model.posterior(x_rows, y_rows)
    if not stochastic:
        return mu
    if rng is None:
        raise ValueError("stochastic encoding needs an rng")
    eps = rng.standard_normal(size=mu.shape)
    return mu + np.exp(0.5 * logvar) * eps


def encode(model: CvaeModel, x, y, rng: Rng | None = None,
           stochastic: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.shape != (model.d,):
        raise ValueError(f"response has shape {y.shape}, expected ({model.d},)")
    return encode_batch(model, x[None, :], y[None, :], rng, stochastic)[0]


def decode_batch(model: CvaeModel, x_rows, z_rows) -> np.ndarray:
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
    z_rows = np.atleast_2d(np.asarray(z_rows, dtype=float))
    if x_rows.shape[0] == 1 and z_rows.shape[0] > 1:
        x_rows = np.repeat(x_rows, z_rows.shape[0], axis=0)
    return forward_batch(model.decoder, np.concatenate([x_rows, z_rows], axis=1))


def decode(model: CvaeModel, x, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (model.r,):
        raise ValueError(f"latent has shape {z.shape}, expected ({model.r},)")
    return decode_batch(model, np.asarray(x, dtype=float)[None, :], z[None, :])[0]


def composite_loss_and_grads(encoder: MlpModel, decoder: MlpModel, x, y, eps,
                             lam: float, r: int, train_mode: bool = True,
                             drop_rng: Rng | None = None):
    """Loss and parameter gradients of the reconstruction + KL objective
    for one batch with the reparameterization noise held fixed.

    Returns (loss, grads) with grads ordered as
    encoder.parameters() + decoder.parameters().
    """
    n = x.shape[0]
    enc_out, enc_cache = forward_cached(
        encoder, np.concatenate([x, y], axis=1), train_mode=train_mode, rng=drop_rng)
    mu, logvar = enc_out[:, :r], enc_out[:, r:]
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps
    dec_out, dec_cache = forward_cached(
        decoder, np.concatenate([x, z], axis=1), train_mode=train_mode, rng=drop_rng)
    residual = dec_out - y
    recon = float(np.mean(np.sum(residual**2, axis=1)))
    kl_terms = -0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar), axis=1)
    kl = float(np.mean(kl_terms))
    loss = recon + lam * kl

    dec_grads, dec_grad_in = backward(decoder, dec_cache, 2.0 * residual / n,
                                      train_mode=train_mode)
    dz = dec_grad_in[:, x.shape[1]:]
    dmu = dz + (lam / n) * mu
    dlogvar = dz * (0.5 * sigma * eps) + (lam / n) * 0.5 * (np.exp(logvar) - 1.0)
    enc_grads, _ = backward(encoder, enc_cache,
                            np.concatenate([dmu, dlogvar], axis=1),
                            train_mode=train_mode)
    return loss, enc_grads + dec_grads


def fit(x_train, y_train, x_val, y_val, r: int, lam: float, config: TrainConfig,
        hidden=None, dropout: float = 0.1, batch_norm: bool = False) -> CvaeModel:
    """Train encoder and decoder jointly with Adam and early stopping.

    The validation loss scores the posterior mean (no sampling noise), so
    early stopping is deterministic.
    """
    if r < 1:
        raise ValueError(f"latent dimension must be >= 1, got {r}")
    if lam < 0:
        raise ValueError(f"KL weight must be nonnegative, got {lam}")
    x_train = np.atleast_2d(np.asarray(x_train, dtype=float))
    y_train = np.atleast_2d(np.asarray(y_train, dtype=float))
    x_val = np.atleast_2d(np.asarray(x_val, dtype=float))
    y_val = np.atleast_2d(np.asarray(y_val, dtype=float))
    n, p = x_train.shape
    d = y_train.shape[1]
    if hidden is None:
        hidden = default_hidden(p)
    rng = Rng(config.seed)
    encoder = init_mlp((p + d, *hidden, 2 * r), rng.spawn(10), dropout=dropout,
                       batch_norm=batch_norm)
    decoder = init_mlp((p + r, *hidden, d), rng.spawn(11), dropout=dropout,
                       batch_norm=batch_norm)
    eps_rng = rng.spawn(12)
    drop_rng = rng.spawn(13)
    model = CvaeModel(encoder, decoder, r, lam)
    params = encoder.parameters() + decoder.parameters()
    adam = AdamState.for_params(params)

    def run_epoch(epoch: int) -> float:
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            eps = eps_rng.standard_normal(size=(len(idx), r))
            loss, grads = composite_loss_and_grads(
                encoder, decoder, x_train[idx], y_train[idx], eps, lam, r,
                train_mode=True, drop_rng=drop_rng)
            adam_step(params, grads, adam, config.learning_rate)
            total += loss * len(idx)
            seen += len(idx)
        return total / seen

    def val_loss() -> float:
        mu, logvar = model.posterior(x_val, y_val)
        reconstructed = decode_batch(model, x_val, mu)
        recon = float(np.mean(np.sum((reconstructed - y_val) ** 2, axis=1)))
        kl = float(np.mean(-0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar), axis=1)))
        return recon + lam * kl

    run_training_loop(params, run_epoch, val_loss, config.max_epochs, config.patience)
    return model


def reconstruction_mse(model: CvaeModel, x_rows, y_rows) -> float:
    """Mean squared reconstruction error through the posterior mean."""
    mu, _ = model.posterior(x_rows, y_rows)
    reconstructed = decode_batch(model, x_rows, mu)
    return float(np.mean(np.sum((reconstructed - np.atleast_2d(y_rows)) ** 2, axis=1)))
