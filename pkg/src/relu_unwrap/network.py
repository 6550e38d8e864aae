"""Feed-forward ReLU networks with a single GLM output unit.

A network maps ``x`` through ``L`` hidden ReLU layers and a final affine
unit producing the linear predictor ``eta``; the link (identity or logit)
turns ``eta`` into a prediction.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

LINKS = ("identity", "logit")
TASKS = ("regression", "classification")
LINK_FOR_TASK = {"regression": "identity", "classification": "logit"}


class NetworkError(ValueError):
    """Base class for malformed networks and network files."""


class ShapeError(NetworkError):
    """Input or layer dimensions do not chain."""

    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class SchemaError(NetworkError):
    """A model file is missing a field or has the wrong type."""

    def __init__(self, message: str, field_name: str | None = None):
        self.field = field_name
        super().__init__(message)


class NonFiniteError(NetworkError):
    def __init__(self, layer: int):
        self.layer = layer
        super().__init__(f"layer {layer}: non-finite weight or bias")


@dataclass(frozen=True, eq=False)
class ReluNetwork:
    """Immutable ReLU network.

    ``weights[l]`` has shape ``(n_{l+1}, n_l)`` with ``n_0 = input_dim`` and a
    single output row for the last layer; ``biases[l]`` has length
    ``n_{l+1}``.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    link: str = "identity"

    def __post_init__(self):
        if self.link not in LINKS:
            raise SchemaError(f"link must be one of {LINKS}, got {self.link!r}", "link")
        ws = tuple(np.array(w, dtype=np.float64, copy=True) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64, copy=True).reshape(-1) for b in self.biases)
        if len(ws) == 0 or len(ws) != len(bs):
            raise ShapeError("need the same positive number of weight matrices and bias vectors")
        for l, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2:
                raise ShapeError(f"weight must be a matrix, got ndim={w.ndim}", l)
            if l > 0 and w.shape[1] != ws[l - 1].shape[0]:
                raise ShapeError(
                    f"weight has {w.shape[1]} columns but previous layer has {ws[l - 1].shape[0]} units", l)
            if b.shape[0] != w.shape[0]:
                raise ShapeError(f"bias length {b.shape[0]} != {w.shape[0]} rows", l)
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteError(l)
            w.setflags(write=False)
            b.setflags(write=False)
        if ws[-1].shape[0] != 1:
            raise ShapeError("output layer must have exactly one unit", len(ws) - 1)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def hidden_sizes(self) -> list[int]:
        return [w.shape[0] for w in self.weights[:-1]]

    @property
    def n_hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def n_hidden(self) -> int:
        return sum(self.hidden_sizes)

    def fingerprint(self) -> str:
        return hashlib.sha256(dumps_network(self).encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ReluNetwork):
            return NotImplemented
        return (self.link == other.link
                and len(self.weights) == len(other.weights)
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))

    __hash__ = None


@dataclass
class Dataset:
    features: np.ndarray
    response: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    task: str = "regression"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        self.response = np.asarray(self.response, dtype=np.float64).reshape(-1)
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.features.shape[0] != self.response.shape[0]:
            raise ValueError("features and response have different numbers of rows")
        if np.isnan(self.features).any() or np.isnan(self.response).any():
            raise ValueError("dataset contains NaN")
        if self.task == "classification" and not np.isin(self.response, (0.0, 1.0)).all():
            raise ValueError("classification responses must be 0 or 1")
        if not self.feature_names:
            self.feature_names = [f"x{j + 1}" for j in range(self.features.shape[1])]
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("feature_names length does not match the number of columns")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.response[idx], list(self.feature_names), self.task)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.response).tobytes())
        h.update(",".join(self.feature_names).encode())
        return h.hexdigest()


def _check_input(net: ReluNetwork, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"expected inputs with {net.input_dim} features, got shape {X.shape}")
    return X


def forward_batch(net: ReluNetwork, X) -> tuple[np.ndarray, list[np.ndarray]]:
    """Vectorised forward pass; returns ``eta`` (n,) and pre-activations per hidden layer."""
    h = _check_input(net, X)
    pre = []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0)
    eta = h @ net.weights[-1][0] + net.biases[-1][0]
    return eta, pre


def forward(net: ReluNetwork, x) -> tuple[float, list[np.ndarray]]:
    """Linear predictor (link not applied) and each hidden layer's pre-activation."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ShapeError(f"expected a vector of length {net.input_dim}, got shape {x.shape}")
    eta, pre = forward_batch(net, x[None, :])
    return float(eta[0]), [z[0] for z in pre]


def sigmoid(eta):
    eta = np.asarray(eta, dtype=np.float64)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def apply_link(link: str, eta):
    if link == "logit":
        return sigmoid(eta)
    return np.asarray(eta, dtype=np.float64)


def predict_batch(net: ReluNetwork, X) -> np.ndarray:
    eta, _ = forward_batch(net, X)
    return apply_link(net.link, eta)


def predict(net: ReluNetwork, x) -> float:
    eta, _ = forward(net, x)
    return float(apply_link(net.link, np.array([eta]))[0])


# -- serialization -----------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_network(net: ReluNetwork) -> str:
    """JSON text with every float written at 17 significant digits."""
    layers = []
    for w, b in zip(net.weights, net.biases):
        rows = ", ".join("[" + ", ".join(_fmt(v) for v in row) + "]" for row in w)
        bias = ", ".join(_fmt(v) for v in b)
        layers.append(f'    {{"W": [{rows}], "b": [{bias}]}}')
    return (
        "{\n"
        f'  "input_dim": {net.input_dim},\n'
        f'  "hidden_sizes": {json.dumps(net.hidden_sizes)},\n'
        f'  "link": {json.dumps(net.link)},\n'
        '  "layers": [\n' + ",\n".join(layers) + "\n  ]\n}\n"
    )


def network_from_dict(obj) -> ReluNetwork:
    if not isinstance(obj, dict):
        raise SchemaError("model file must contain a JSON object")
    for key in ("input_dim", "hidden_sizes", "link", "layers"):
        if key not in obj:
            raise SchemaError(f"missing required field {key!r}", key)
    link = obj["link"]
    if link not in LINKS:
        raise SchemaError(f"field 'link' must be one of {LINKS}, got {link!r}", "link")
    layers = obj["layers"]
    if not isinstance(layers, list) or not layers:
        raise SchemaError("field 'layers' must be a non-empty list", "layers")
    weights, biases = [], []
    for l, layer in enumerate(layers):
        if not isinstance(layer, dict) or "W" not in layer or "b" not in layer:
            raise SchemaError(f"layer {l} must be an object with 'W' and 'b'", "layers")
        try:
            w = np.array(layer["W"], dtype=np.float64)
            b = np.array(layer["b"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ShapeError(f"ragged or non-numeric entries ({exc})", l) from None
        if w.ndim != 2:
            raise ShapeError("'W' must be a rectangular matrix", l)
        if b.ndim != 1:
            raise ShapeError("'b' must be a flat list", l)
        weights.append(w)
        biases.append(b)
    if weights[-1].shape[0] != 1 or biases[-1].shape[0] != 1:
        raise ShapeError("output layer must have one row and one bias (multi-output heads are not supported)",
                         len(weights) - 1)
    net = ReluNetwork(tuple(weights), tuple(biases), link)
    if int(obj["input_dim"]) != net.input_dim:
        raise ShapeError(f"input_dim {obj['input_dim']} does not match first layer width {net.input_dim}", 0)
    if list(obj["hidden_sizes"]) != net.hidden_sizes:
        raise ShapeError(f"hidden_sizes {obj['hidden_sizes']} do not match layer shapes {net.hidden_sizes}")
    return net


def save_network(net: ReluNetwork, path) -> None:
    Path(path).write_text(dumps_network(net))


def load_network(path) -> ReluNetwork:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return network_from_dict(obj)


def make_network(weights: Sequence, biases: Sequence, link: str = "identity") -> ReluNetwork:
    return ReluNetwork(tuple(weights), tuple(biases), link)


def toy_network(link: str = "identity") -> ReluNetwork:
    """Two-hidden-layer [2, 4] network with hand-picked weights on a 2-d input.

    The first layer is a 45 degree rotation; the second layer cuts each
    quadrant with four lines. Output weights are all ones (they do not affect
    the partition).
    """
    s = 1.0 / math.sqrt(2.0)
    w0 = np.array([[-s, s], [s, s]])
    w1 = np.array([[1.0, 1 / 4], [1 / 2, 1 / 3], [1 / 3, 1 / 2], [1 / 4, 1.0]])
    b1 = np.full(4, -3.0 / 10.0)
    return ReluNetwork((w0, w1, np.ones((1, 4))), (np.zeros(2), b1, np.zeros(1)), link)
