"""Mini-batch training of ReLU networks with early stopping.

Deliberately small: plain numpy back-propagation, Adam or SGD, uniform
He-style initialisation and a validation split taken from the tail of a
seeded shuffle.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ._runtime import stream
from .network import LINK_FOR_TASK, Dataset, ReluNetwork, sigmoid

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


@dataclass
class TrainConfig:
    hidden_sizes: list[int] = field(default_factory=lambda: [40, 40, 40, 40])
    max_epochs: int = 2000
    patience: int = 100
    validation_fraction: float = 0.2
    batch_size: int | None = None
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.patience < 0 or self.max_epochs < 0:
            raise ValueError("patience and max_epochs must be non-negative")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if any(int(h) < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        path = Path(path)
        if path.suffix == ".toml":
            raw = tomllib.loads(path.read_text())
        else:
            raw = json.loads(path.read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


def validation_split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(fit_idx, val_idx): the validation part is the last ``fraction`` of a seeded shuffle."""
    perm = stream(seed, "validation-split").permutation(n)
    n_val = int(round(n * fraction))
    n_val = min(max(n_val, 1), n - 1) if n >= 2 else 0
    return perm[: n - n_val], perm[n - n_val:]


def init_params(input_dim: int, hidden_sizes, rng: np.random.Generator):
    sizes = [input_dim, *hidden_sizes, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _loss(link: str, eta: np.ndarray, y: np.ndarray) -> float:
    if link == "identity":
        return float(np.mean((eta - y) ** 2))
    # log-loss in terms of eta: log(1+exp(eta)) - y*eta
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def _forward_cache(weights, biases, X):
    acts = [X]
    h = X
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
        acts.append(h)
    eta = h @ weights[-1][0] + biases[-1][0]
    return eta, acts


def _eta(weights, biases, X):
    return _forward_cache(weights, biases, X)[0]


def _gradients(link, weights, biases, X, y):
    eta, acts = _forward_cache(weights, biases, X)
    m = X.shape[0]
    if link == "identity":
        delta = 2.0 * (eta - y) / m
    else:
        p = sigmoid(eta)
        delta = (p - y) / m
    delta = delta[:, None]
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ weights[l]) * (acts[l] > 0)
    return gw, gb


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        corr1 = 1.0 - self.b1 ** self.t
        corr2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


class _SGD:
    def __init__(self, params, lr, momentum=0.9):
        self.lr, self.mu = lr, momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for p, g, v in zip(params, grads, self.vel):
            v *= self.mu
            v -= self.lr * g
            p += v


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = np.inf
    epochs_run: int = 0


def _check_task(data: Dataset, link: str):
    if data.n == 0:
        raise ValueError("cannot train on an empty dataset")
    if LINK_FOR_TASK[data.task] != link:
        raise ValueError(f"task {data.task!r} requires the {LINK_FOR_TASK[data.task]!r} link, got {link!r}")


def _fit(weights, biases, link, data: Dataset, cfg: TrainConfig, history: TrainHistory | None):
    hist = history if history is not None else TrainHistory()
    fit_idx, val_idx = validation_split(data.n, cfg.validation_fraction, cfg.seed)
    X, y = data.features, data.response
    Xf, yf = X[fit_idx], y[fit_idx]
    Xv, yv = X[val_idx], y[val_idx]
    if len(val_idx) == 0:
        Xv, yv = Xf, yf
    params = weights + biases
    nw = len(weights)
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(params, cfg.learning_rate)
    batch = cfg.batch_size or min(200, len(fit_idx))
    rng = stream(cfg.seed, "minibatch")

    best = [p.copy() for p in params]
    best_val = _loss(link, _eta(weights, biases, Xv), yv)
    hist.best_val_loss, hist.best_epoch = best_val, 0
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(fit_idx))
        for start in range(0, len(order), batch):
            sel = order[start:start + batch]
            gw, gb = _gradients(link, weights, biases, Xf[sel], yf[sel])
            opt.step(params, gw + gb)
        train_loss = _loss(link, _eta(weights, biases, Xf), yf)
        val_loss = _loss(link, _eta(weights, biases, Xv), yv)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError("loss became non-finite", epoch)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.epochs_run = epoch
        if val_loss < best_val:
            best_val = val_loss
            best = [p.copy() for p in params]
            hist.best_val_loss, hist.best_epoch = val_loss, epoch
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    log.debug("stopped after %d epochs, best epoch %d (val %.6g)", hist.epochs_run, hist.best_epoch, best_val)
    return ReluNetwork(tuple(best[:nw]), tuple(best[nw:]), link)


def train(data: Dataset, cfg: TrainConfig, history: TrainHistory | None = None) -> ReluNetwork:
    """Train from a seeded random initialisation; returns the best-validation snapshot."""
    link = LINK_FOR_TASK[data.task]
    _check_task(data, link)
    weights, biases = init_params(data.d, cfg.hidden_sizes, stream(cfg.seed, "init"))
    return _fit(weights, biases, link, data, cfg, history)


def finetune(net: ReluNetwork, data: Dataset, cfg: TrainConfig,
             history: TrainHistory | None = None) -> ReluNetwork:
    """Continue training from ``net``; never returns worse validation loss than the start."""
    _check_task(data, net.link)
    if net.input_dim != data.d:
        raise ValueError("network input dimension does not match the data")
    if cfg.max_epochs == 0:
        return net
    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]
    return _fit(weights, biases, net.link, data, cfg, history)
