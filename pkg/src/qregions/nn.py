"""Minimal feed-forward network with manual backpropagation.

One fixed topology: dense layers, leaky-ReLU hidden activations, linear
output, optional inverted dropout and batch normalization on hidden
layers. Optimization is Adam with early stopping on a validation loss;
the snapshot with the best validation loss is what training returns.

Everything is numpy and deterministic under a fixed seed, which makes
seeded training bit-reproducible on a given platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1


class TrainingDivergedError(RuntimeError):
    """Raised when a training or validation loss stops being finite."""

    def __init__(self, epoch: int, kind: str = "loss"):
        self.epoch = epoch
        super().__init__(f"non-finite {kind} at epoch {epoch}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 10_000
    patience: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning rate, batch size and max epochs must be positive")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs]")


class MlpModel:
    """Dense network parameters plus the flags that shape its forward pass.

    ``widths`` lists every layer width including input and output, so a
    net with widths (3, 64, 64, 1) has two hidden layers.
    """

    def __init__(self, widths, weights, biases, leaky_slope=0.2, dropout=0.0,
                 batch_norm=False, bn_gamma=None, bn_beta=None,
                 bn_running_mean=None, bn_running_var=None):
        self.widths = tuple(int(w) for w in widths)
        self.weights = weights
        self.biases = biases
        self.leaky_slope = float(leaky_slope)
        self.dropout = float(dropout)
        self.batch_norm = bool(batch_norm)
        n_hidden = len(self.widths) - 2
        if batch_norm:
            self.bn_gamma = bn_gamma if bn_gamma is not None else [
                np.ones(w) for w in self.widths[1:-1]
            ]
            self.bn_beta = bn_beta if bn_beta is not None else [
                np.zeros(w) for w in self.widths[1:-1]
            ]
            self.bn_running_mean = bn_running_mean if bn_running_mean is not None else [
                np.zeros(w) for w in self.widths[1:-1]
            ]
            self.bn_running_var = bn_running_var if bn_running_var is not None else [
                np.ones(w) for w in self.widths[1:-1]
            ]
        else:
            self.bn_gamma = self.bn_beta = []
            self.bn_running_mean = self.bn_running_var = []
        if len(self.weights) != len(self.widths) - 1:
            raise ValueError("one weight matrix per layer transition expected")
        for k, w in enumerate(self.weights):
            if w.shape != (self.widths[k], self.widths[k + 1]):
                raise ValueError(f"weight {k} has shape {w.shape}, expected "
                                 f"{(self.widths[k], self.widths[k + 1])}")
        del n_hidden

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list:
        """Trainable arrays, in a fixed order shared with gradients."""
        return list(self.weights) + list(self.biases) + list(self.bn_gamma) + list(self.bn_beta)

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.widths,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.leaky_slope,
            self.dropout,
            self.batch_norm,
            [g.copy() for g in self.bn_gamma] or None,
            [b.copy() for b in self.bn_beta] or None,
            [m.copy() for m in self.bn_running_mean] or None,
            [v.copy() for v in self.bn_running_var] or None,
        )

    def to_dict(self) -> dict:
        d = {
            "widths": list(self.widths),
            "leaky_slope": self.leaky_slope,
            "dropout": self.dropout,
            "batch_norm": self.batch_norm,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        if self.batch_norm:
            d["bn_gamma"] = [g.tolist() for g in self.bn_gamma]
            d["bn_beta"] = [b.tolist() for b in self.bn_beta]
            d["bn_running_mean"] = [m.tolist() for m in self.bn_running_mean]
            d["bn_running_var"] = [v.tolist() for v in self.bn_running_var]
        return d

    @staticmethod
    def from_dict(d: dict) -> "MlpModel":
        bn = d.get("batch_norm", False)
        return MlpModel(
            d["widths"],
            [np.array(w, dtype=float) for w in d["weights"]],
            [np.array(b, dtype=float) for b in d["biases"]],
            d.get("leaky_slope", 0.2),
            d.get("dropout", 0.0),
            bn,
            [np.array(g, dtype=float) for g in d["bn_gamma"]] if bn else None,
            [np.array(b, dtype=float) for b in d["bn_beta"]] if bn else None,
            [np.array(m, dtype=float) for m in d["bn_running_mean"]] if bn else None,
            [np.array(v, dtype=float) for v in d["bn_running_var"]] if bn else None,
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @staticmethod
    def load(path) -> "MlpModel":
        with open(path, encoding="utf-8") as fh:
            return MlpModel.from_dict(json.load(fh))


def init_mlp(widths, rng: Rng, leaky_slope=0.2, dropout=0.0, batch_norm=False) -> MlpModel:
    """Fan-in scaled uniform weight init (He-style for leaky ReLU), zero biases."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"need at least input and output widths >= 1, got {widths}")
    gain2 = 2.0 / (1.0 + leaky_slope**2)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(3.0 * gain2 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(widths, weights, biases, leaky_slope, dropout, batch_norm)


def forward_batch(model: MlpModel, x: np.ndarray, train_mode: bool = False,
                  rng: Rng | None = None) -> np.ndarray:
    """Forward pass over a batch, without caching intermediates."""
    out, _ = forward_cached(model, x, train_mode=train_mode, rng=rng,
                            keep_cache=False)
    return out


def forward(model: MlpModel, x, train_mode: bool = False, rng: Rng | None = None) -> np.ndarray:
    """Forward pass for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.in_width:
        raise ValueError(f"input has shape {x.shape}, expected ({model.in_width},)")
    return forward_batch(model, x[None, :], train_mode=train_mode, rng=rng)[0]


def forward_cached(model: MlpModel, x: np.ndarray, train_mode: bool = False,
                   rng: Rng | None = None, keep_cache: bool = True):
    """Forward pass that (optionally) records what backward needs.

    Returns (output, cache). Dropout is active only in train mode and
    needs an rng; batch statistics update the running averages only in
    train mode.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.in_width:
        raise ValueError(f"batch has shape {x.shape}, expected (n, {model.in_width})")
    use_dropout = train_mode and model.dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("dropout in train mode needs an rng")
    n_layers = len(model.weights)
    cache = {"inputs": [], "pre_bn": [], "bn_hat": [], "bn_std": [],
             "pre_act": [], "drop_mask": []} if keep_cache else None
    a = x
    for k in range(n_layers):
        if keep_cache:
            cache["inputs"].append(a)
        z = a @ model.weights[k] + model.biases[k]
        last = k == n_layers - 1
        if last:
            a = z
            break
        if model.batch_norm:
            if keep_cache:
                cache["pre_bn"].append(z)
            if train_mode:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                model.bn_running_mean[k] = (
                    (1 - _BN_MOMENTUM) * model.bn_running_mean[k] + _BN_MOMENTUM * mu
                )
                model.bn_running_var[k] = (
                    (1 - _BN_MOMENTUM) * model.bn_running_var[k] + _BN_MOMENTUM * var
                )
            else:
                mu = model.bn_running_mean[k]
                var = model.bn_running_var[k]
            std = np.sqrt(var + _BN_EPS)
            z_hat = (z - mu) / std
            z = model.bn_gamma[k] * z_hat + model.bn_beta[k]
            if keep_cache:
                cache["bn_hat"].append(z_hat)
                cache["bn_std"].append(std)
        if keep_cache:
            cache["pre_act"].append(z)
        a = np.where(z > 0, z, model.leaky_slope * z)
        if use_dropout:
            mask = (rng.uniform(size=a.shape) >= model.dropout) / (1.0 - model.dropout)
            a = a * mask
            if keep_cache:
                cache["drop_mask"].append(mask)
        elif keep_cache:
            cache["drop_mask"].append(None)
    return a, cache


def backward(model: MlpModel, cache: dict, grad_out: np.ndarray, train_mode: bool = True):
    """Backpropagate d(loss)/d(output) through the cached forward pass.

    Returns (grads, grad_input) where grads matches model.parameters()
    ordering. ``train_mode`` must match the forward call: in train mode
    batch-norm gradients flow through the batch statistics.
    """
    n_layers = len(model.weights)
    w_grads = [None] * n_layers
    b_grads = [None] * n_layers
    g_grads = [None] * (n_layers - 1) if model.batch_norm else []
    beta_grads = [None] * (n_layers - 1) if model.batch_norm else []
    delta = np.asarray(grad_out, dtype=float)
    for k in reversed(range(n_layers)):
        if k != n_layers - 1:
            # Through dropout, activation, then batch norm.
            mask = cache["drop_mask"][k]
            if mask is not None:
                delta = delta * mask
            z = cache["pre_act"][k]
            delta = delta * np.where(z > 0, 1.0, model.leaky_slope)
            if model.batch_norm:
                z_hat = cache["bn_hat"][k]
                std = cache["bn_std"][k]
                g_grads[k] = (delta * z_hat).sum(axis=0)
                beta_grads[k] = delta.sum(axis=0)
                dz_hat = delta * model.bn_gamma[k]
                if train_mode:
                    # Gradient through the batch statistics themselves.
                    delta = (
                        dz_hat - dz_hat.mean(axis=0)
                        - z_hat * (dz_hat * z_hat).mean(axis=0)
                    ) / std
                else:
                    delta = dz_hat / std
        w_grads[k] = cache["inputs"][k].T @ delta
        b_grads[k] = delta.sum(axis=0)
        delta = delta @ model.weights[k].T
    return w_grads + b_grads + g_grads + beta_grads, delta


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def pinball_loss(y: float, yhat: float, alpha: float) -> float:
    """Asymmetric check loss whose population minimizer is the
    alpha-quantile."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"pinball level must be in (0,1), got {alpha}")
    diff = y - yhat
    return alpha * diff if diff > 0 else (1.0 - alpha) * (-diff)


def pinball_values(y: np.ndarray, yhat: np.ndarray, alpha: float) -> np.ndarray:
    diff = y - yhat
    return np.where(diff > 0, alpha * diff, (alpha - 1.0) * diff)


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL divergence of N(mu, exp(logvar)) from N(0, I), per sample."""
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    if mu.shape != logvar.shape:
        raise ValueError(f"mu shape {mu.shape} != logvar shape {logvar.shape}")
    return float(-0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar)))


class MseLoss:
    """Mean over the batch of the squared error summed over output dims."""

    def value(self, y, yhat) -> float:
        return float(np.mean(np.sum((y - yhat) ** 2, axis=1)))

    def value_and_grad(self, y, yhat):
        n = y.shape[0]
        return self.value(y, yhat), 2.0 * (yhat - y) / n


class PinballLoss:
    """Mean pinball loss at a fixed level, for scalar-output nets.

    At the kink (zero residual) the gradient takes the y < yhat branch.
    """

    def __init__(self, alpha: float):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"pinball level must be in (0,1), got {alpha}")
        self.alpha = alpha

    def value(self, y, yhat) -> float:
        return float(np.mean(pinball_values(y, yhat, self.alpha)))

    def value_and_grad(self, y, yhat):
        diff = y - yhat
        grad = np.where(diff > 0, -self.alpha, 1.0 - self.alpha) / diff.size
        return float(np.mean(pinball_values(y, yhat, self.alpha))), grad


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators mirroring a parameter list."""

    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params) -> "AdamState":
        return AdamState(m=[np.zeros_like(p) for p in params],
                         v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One in-place Adam update of every parameter array."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class TrainHistory:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    @property
    def epochs_run(self) -> int:
        return len(self.train_losses)


def run_training_loop(params, run_epoch, val_loss, max_epochs: int,
                      patience: int) -> TrainHistory:
    """Generic epoch driver with early stopping.

    ``run_epoch(epoch)`` performs the in-place parameter updates for one
    epoch and returns its mean train loss; ``val_loss()`` scores the
    current parameters. Stops once the epochs elapsed since the last
    validation improvement reach ``patience``, then restores the best
    snapshot into ``params``.
    """
    history = TrainHistory()
    best_snapshot = [p.copy() for p in params]
    since_improvement = 0
    for epoch in range(1, max_epochs + 1):
        tr = run_epoch(epoch)
        if not np.isfinite(tr):
            raise TrainingDivergedError(epoch, "train loss")
        vl = val_loss()
        if not np.isfinite(vl):
            raise TrainingDivergedError(epoch, "validation loss")
        history.train_losses.append(tr)
        history.val_losses.append(vl)
        if vl < history.best_val_loss:
            history.best_val_loss = vl
            history.best_epoch = epoch
            best_snapshot = [p.copy() for p in params]
            since_improvement = 0
        else:
            since_improvement += 1
        if since_improvement >= patience:
            break
    for p, best in zip(params, best_snapshot):
        p[...] = best
    return history


def train(model: MlpModel, train_xy, loss, config: TrainConfig, val_xy):
    """Minibatch-train a supervised net; returns (best model, history).

    ``train_xy`` and ``val_xy`` are (inputs, targets) pairs with targets
    shaped (n, out_width). The returned model carries the parameter
    snapshot with the lowest validation loss.
    """
    x_train, y_train = _as_xy(train_xy, model)
    x_val, y_val = _as_xy(val_xy, model)
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValueError("training and validation sets must be nonempty")
    rng = Rng(config.seed)
    drop_rng = rng.spawn(1)
    params = model.parameters()
    adam = AdamState.for_params(params)
    n = x_train.shape[0]

    def run_epoch(epoch: int) -> float:
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            out, cache = forward_cached(model, x_train[idx], train_mode=True, rng=drop_rng)
            batch_loss, grad_out = loss.value_and_grad(y_train[idx], out)
            grads, _ = backward(model, cache, grad_out, train_mode=True)
            adam_step(params, grads, adam, config.learning_rate)
            total += batch_loss * len(idx)
            seen += len(idx)
        return total / seen

    def val_loss() -> float:
        return loss.value(y_val, forward_batch(model, x_val))

    history = run_training_loop(params, run_epoch, val_loss,
                                config.max_epochs, config.patience)
    return model, history


def _as_xy(xy, model: MlpModel):
    x, y = xy
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[1] != model.in_width:
        raise ValueError(f"inputs have width {x.shape[1]}, model expects {model.in_width}")
    if y.shape[1] != model.out_width:
        raise ValueError(f"targets have width {y.shape[1]}, model expects {model.out_width}")
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets disagree on row count")
    return x, y
