"""Synthetic generators, CSV ingestion, and train/test splitting with min-max scaling."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ._runtime import stream
from .network import TASKS, Dataset

COCIRCLES_FACTOR = 0.8


class DataError(ValueError):
    pass


def gen_chirpwave(n: int = 2000, noise_sd: float = 0.1, seed: int = 0) -> Dataset:
    """``y = sin(2*pi / (x + 0.2)) + noise`` with ``x ~ U[0, 1]``."""
    if n < 1:
        raise DataError("n must be at least 1")
    rng = stream(seed, "chirpwave")
    x = rng.uniform(0.0, 1.0, size=n)
    noise = rng.normal(0.0, noise_sd, size=n) if noise_sd > 0 else np.zeros(n)
    y = chirp_signal(x) + noise
    return Dataset(x[:, None], y, ["x1"], "regression")


def chirp_signal(x):
    return np.sin(2.0 * np.pi / (np.asarray(x, dtype=np.float64) + 0.2))


def gen_cocircles(n: int = 2000, noise_sd: float = 0.1, seed: int = 0,
                  factor: float = COCIRCLES_FACTOR) -> Dataset:
    """Two concentric circles: outer radius 1 is class 0, inner radius ``factor`` is class 1.

    Points sit at equally spaced angles on each circle (as in the usual
    ``make_circles`` generator), are shuffled, then jittered with isotropic
    Gaussian noise.
    """
    if n < 2:
        raise DataError("n must be at least 2")
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, 2.0 * np.pi, n_out, endpoint=False)
    t_in = np.linspace(0.0, 2.0 * np.pi, n_in, endpoint=False)
    X = np.vstack([
        np.c_[np.cos(t_out), np.sin(t_out)],
        factor * np.c_[np.cos(t_in), np.sin(t_in)],
    ])
    y = np.r_[np.zeros(n_out), np.ones(n_in)]
    rng = stream(seed, "cocircles")
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    if noise_sd > 0:
        X = X + rng.normal(0.0, noise_sd, size=X.shape)
    return Dataset(X, y, ["x1", "x2"], "classification")


def load_csv(path, response_column: str, task: str) -> Dataset:
    if task not in TASKS:
        raise DataError(f"task must be one of {TASKS}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if response_column not in header:
        raise DataError(f"{path}: response column {response_column!r} not in header {header}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise DataError(f"{path}: no data rows (empty dataset)")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {i}, column {header[j]!r}") from None
    r = header.index(response_column)
    feat_cols = [j for j in range(len(header)) if j != r]
    try:
        return Dataset(values[:, feat_cols], values[:, r], [header[j] for j in feat_cols], task)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_csv(data: Dataset, path, response_column: str = "y") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*data.feature_names, response_column])
        for row, yi in zip(data.features, data.response):
            w.writerow([format(v, ".17g") for v in row] + [format(yi, ".17g")])


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    scale_features: bool = True
    scale_response: bool | None = None  # None: scale for regression only

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError("train_fraction must lie in (0, 1)")


@dataclass
class Scaler:
    """Per-column min/max fitted on training data; constant columns map to 0."""

    feature_min: dict[str, float] = field(default_factory=dict)
    feature_max: dict[str, float] = field(default_factory=dict)
    response_min: float | None = None
    response_max: float | None = None
    constant_features: list[str] = field(default_factory=list)

    def transform(self, data: Dataset) -> Dataset:
        X = data.features.copy()
        for j, name in enumerate(data.feature_names):
            if name in self.feature_min:
                lo, hi = self.feature_min[name], self.feature_max[name]
                X[:, j] = 0.0 if hi == lo else (X[:, j] - lo) / (hi - lo)
        y = data.response.copy()
        if self.response_min is not None:
            lo, hi = self.response_min, self.response_max
            y = np.zeros_like(y) if hi == lo else (y - lo) / (hi - lo)
        return Dataset(X, y, list(data.feature_names), data.task)

    def inverse_transform(self, data: Dataset) -> Dataset:
        X = data.features.copy()
        for j, name in enumerate(data.feature_names):
            if name in self.feature_min:
                lo, hi = self.feature_min[name], self.feature_max[name]
                X[:, j] = lo if hi == lo else X[:, j] * (hi - lo) + lo
        y = data.response.copy()
        if self.response_min is not None:
            lo, hi = self.response_min, self.response_max
            y = np.full_like(y, lo) if hi == lo else y * (hi - lo) + lo
        return Dataset(X, y, list(data.feature_names), data.task)

    def to_dict(self) -> dict:
        out = {name: {"min": self.feature_min[name], "max": self.feature_max[name]} for name in self.feature_min}
        if self.response_min is not None:
            out["__response__"] = {"min": self.response_min, "max": self.response_max}
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "Scaler":
        sc = cls()
        for name, mm in obj.items():
            if name == "__response__":
                sc.response_min, sc.response_max = float(mm["min"]), float(mm["max"])
            else:
                sc.feature_min[name], sc.feature_max[name] = float(mm["min"]), float(mm["max"])
                if sc.feature_min[name] == sc.feature_max[name]:
                    sc.constant_features.append(name)
        return sc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def split_and_scale(data: Dataset, spec: SplitSpec | None = None) -> tuple[Dataset, Dataset, Scaler]:
    spec = spec or SplitSpec()
    if data.n < 2:
        raise DataError("need at least 2 rows to split")
    perm = stream(spec.seed, "train-test-split").permutation(data.n)
    n_train = min(max(int(round(data.n * spec.train_fraction)), 1), data.n - 1)
    train, test = data.subset(perm[:n_train]), data.subset(perm[n_train:])
    scaler = Scaler()
    if spec.scale_features:
        for j, name in enumerate(data.feature_names):
            lo, hi = float(train.features[:, j].min()), float(train.features[:, j].max())
            scaler.feature_min[name], scaler.feature_max[name] = lo, hi
            if lo == hi:
                scaler.constant_features.append(name)
    scale_y = spec.scale_response if spec.scale_response is not None else data.task == "regression"
    if scale_y and data.task == "regression":
        scaler.response_min = float(train.response.min())
        scaler.response_max = float(train.response.max())
    return scaler.transform(train), scaler.transform(test), scaler

