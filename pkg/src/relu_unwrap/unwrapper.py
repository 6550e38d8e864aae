"""Activation patterns, activation regions and their exact local linear models.

A ReLU network is affine on every set of inputs that share an on/off
pattern of hidden units. :func:`unwrap` groups a dataset by pattern and
attaches to each group the closed-form affine map the network computes
there, plus the region statistics used by the diagnostics.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from functools import cached_property, total_ordering

import numpy as np

from . import kernels
from ._runtime import parallel_map
from .metrics import auc, auc_columns, performance
from .network import Dataset, ReluNetwork, ShapeError, apply_link, forward_batch

_CHUNK = 65536


@total_ordering
@dataclass(frozen=True)
class ActivationPattern:
    """Bit-packed on/off states of all hidden units, layer by layer.

    Bits are packed big-endian, so comparing ``packed`` byte strings orders
    patterns lexicographically by their bits.
    """

    packed: bytes
    layer_sizes: tuple[int, ...]

    @classmethod
    def from_bits(cls, bits, layer_sizes) -> "ActivationPattern":
        bits = np.asarray(bits, dtype=bool).reshape(-1)
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if bits.size != sum(layer_sizes):
            raise ShapeError(f"pattern has {bits.size} bits, network has {sum(layer_sizes)} hidden units")
        return cls(np.packbits(bits).tobytes(), layer_sizes)

    @classmethod
    def from_string(cls, text: str) -> "ActivationPattern":
        """Parse the ``"11;0110"`` form produced by :meth:`__str__`."""
        parts = text.strip().split(";")
        bits = [c == "1" for part in parts for c in part]
        return cls.from_bits(bits, [len(p) for p in parts])

    @property
    def n_bits(self) -> int:
        return sum(self.layer_sizes)

    @cached_property
    def bits(self) -> np.ndarray:
        raw = np.unpackbits(np.frombuffer(self.packed, dtype=np.uint8))[: self.n_bits]
        raw.setflags(write=False)
        return raw

    def layer(self, l: int) -> np.ndarray:
        """Layered pattern of hidden layer ``l`` (1-based)."""
        start = sum(self.layer_sizes[: l - 1])
        return self.bits[start:start + self.layer_sizes[l - 1]]

    def layers(self) -> list[np.ndarray]:
        return [self.layer(l) for l in range(1, len(self.layer_sizes) + 1)]

    @property
    def is_trivial(self) -> bool:
        return any(not seg.any() for seg in self.layers())

    def truncate(self, n_layers: int) -> "ActivationPattern":
        sizes = self.layer_sizes[:n_layers]
        return ActivationPattern.from_bits(self.bits[: sum(sizes)], sizes)

    def __str__(self) -> str:
        return ";".join("".join("1" if b else "0" for b in seg) for seg in self.layers())

    def __lt__(self, other):
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return (self.packed, self.layer_sizes) < (other.packed, other.layer_sizes)

    def short_hash(self) -> str:
        return hashlib.sha1(self.packed + bytes(str(self.layer_sizes), "ascii")).hexdigest()[:12]


@dataclass(frozen=True)
class LocalLinearModel:
    w_tilde: np.ndarray
    b_tilde: float
    pattern: ActivationPattern

    def eta(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return X @ self.w_tilde + self.b_tilde


@dataclass
class RegionRecord:
    region_id: int
    pattern: ActivationPattern
    llm: LocalLinearModel
    instance_indices: np.ndarray
    response_mean: float
    response_std: float
    local_perf: float  # NaN when undefined
    global_perf: float
    center: np.ndarray
    single_flag: bool
    degenerate: bool = False  # regression region with one instance: local MSE is 0 by definition

    @property
    def count(self) -> int:
        return int(self.instance_indices.size)


@dataclass
class UnwrapResult:
    regions: list[RegionRecord]
    net_ref: str
    dataset_fingerprint: str
    task: str
    link: str
    feature_names: list[str]
    n_instances: int
    network_perf: float
    instance_region: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return len(self.feature_names)

    def __len__(self) -> int:
        return len(self.regions)

    @cached_property
    def pattern_index(self) -> dict[ActivationPattern, int]:
        return {r.pattern: i for i, r in enumerate(self.regions)}

    @property
    def counts(self) -> np.ndarray:
        return np.array([r.count for r in self.regions], dtype=np.int64)

    @property
    def coef_matrix(self) -> np.ndarray:
        return np.array([r.llm.w_tilde for r in self.regions]).reshape(len(self.regions), self.d)

    @property
    def intercepts(self) -> np.ndarray:
        return np.array([r.llm.b_tilde for r in self.regions], dtype=np.float64)

    @property
    def centers(self) -> np.ndarray:
        return np.array([r.center for r in self.regions]).reshape(len(self.regions), self.d)

    @property
    def single_flags(self) -> np.ndarray:
        return np.array([r.single_flag for r in self.regions], dtype=bool)

    @property
    def perf_name(self) -> str:
        return "MSE" if self.task == "regression" else "AUC"

    def region_table_csv(self) -> str:
        name = self.perf_name
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Count", "Response Mean", "Response Std", f"Local {name}", f"Global {name}"])
        for r in self.regions:
            w.writerow([r.count, _num(r.response_mean), _num(r.response_std),
                        _num(r.local_perf), _num(r.global_perf)])
        return buf.getvalue()

    def llm_table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region_id", "pattern_hash", "pattern", "count", "b", *self.feature_names])
        for r in self.regions:
            w.writerow([r.region_id, r.pattern.short_hash(), str(r.pattern), r.count,
                        _num(r.llm.b_tilde), *(_num(v) for v in r.llm.w_tilde)])
        return buf.getvalue()


def _num(v) -> str:
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def _pattern_bits(net: ReluNetwork, X: np.ndarray, n_layers: int | None = None):
    eta, pre = forward_batch(net, X)
    if n_layers is not None:
        pre = pre[:n_layers]
    bits = np.concatenate([z > 0 for z in pre], axis=1)
    return eta, bits


def activation_pattern(net: ReluNetwork, x) -> ActivationPattern:
    """Unit ``i`` of layer ``l`` is on iff its pre-activation is strictly positive."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ShapeError(f"expected a vector of length {net.input_dim}, got shape {x.shape}")
    _, bits = _pattern_bits(net, x[None, :])
    return ActivationPattern.from_bits(bits[0], net.hidden_sizes)


def llm_coefficients(net: ReluNetwork, pattern: ActivationPattern) -> LocalLinearModel:
    """Affine map ``eta = w.x + b`` computed by ``net`` on the region of ``pattern``.

    Propagates ``(A, c)`` with ``z = A x + c`` through each layer, masking the
    rows of inactive units, which is the diagonal-mask chain product.
    """
    if tuple(pattern.layer_sizes) != tuple(net.hidden_sizes):
        raise ShapeError(f"pattern layer sizes {pattern.layer_sizes} do not match network {net.hidden_sizes}")
    A = net.weights[0]
    c = net.biases[0]
    for l in range(1, net.n_hidden_layers + 1):
        mask = pattern.layer(l).astype(np.float64)
        A = net.weights[l] @ (mask[:, None] * A)
        c = net.weights[l] @ (mask * c) + net.biases[l]
    return LocalLinearModel(A[0].copy(), float(c[0]), pattern)


def satisfies_region_constraints(net: ReluNetwork, pattern: ActivationPattern, x) -> bool:
    """Whether ``x`` meets the half-space constraints of ``pattern`` at every layer.

    On units the pre-activation must be >= 0 and off units <= 0, i.e. the
    signed pre-activations ``(-1)^P * z`` are all non-positive.
    """
    _, pre = forward_batch(net, np.asarray(x, dtype=np.float64)[None, :])
    for l, z in enumerate(pre, start=1):
        sign = np.where(pattern.layer(l).astype(bool), -1.0, 1.0)
        if np.any(sign * z[0] > 0):
            return False
    return True


def _group_patterns(net: ReluNetwork, X: np.ndarray, n_layers: int | None = None):
    """(eta, group id per row in first-occurrence order, packed key per group)."""
    chunks = [X[s:s + _CHUNK] for s in range(0, X.shape[0], _CHUNK)] or [X]

    def work(chunk):
        eta, bits = _pattern_bits(net, chunk, n_layers)
        packed = np.packbits(bits, axis=1)
        inv, first = kernels.group_rows(packed)
        return eta, inv, [packed[i].tobytes() for i in first]

    parts = parallel_map(work, chunks)
    table: dict[bytes, int] = {}
    keys: list[bytes] = []
    etas, ids = [], []
    for eta, inv, local_keys in parts:
        remap = np.empty(len(local_keys), dtype=np.int64)
        for k, key in enumerate(local_keys):
            gid = table.get(key)
            if gid is None:
                gid = table[key] = len(keys)
                keys.append(key)
            remap[k] = gid
        etas.append(eta)
        ids.append(remap[inv])
    return np.concatenate(etas), np.concatenate(ids), keys


def unwrap(net: ReluNetwork, data: Dataset) -> UnwrapResult:
    """Group ``data`` by activation pattern and derive each region's local linear model."""
    if data.n == 0:
        raise ValueError("cannot unwrap an empty dataset")
    if data.d != net.input_dim:
        raise ShapeError(f"data has {data.d} features, network expects {net.input_dim}")
    X, y = data.features, data.response
    eta, gid, keys = _group_patterns(net, X)
    sizes = tuple(net.hidden_sizes)
    order = np.argsort(gid, kind="stable")
    bounds = np.searchsorted(gid[order], np.arange(len(keys) + 1))
    members = [order[bounds[g]:bounds[g + 1]] for g in range(len(keys))]
    ranking = sorted(range(len(keys)), key=lambda g: (-members[g].size, keys[g]))

    patterns = [ActivationPattern(keys[g], sizes) for g in ranking]
    llms = [llm_coefficients(net, p) for p in patterns]
    W = np.array([m.w_tilde for m in llms]).reshape(len(llms), data.d)
    B = np.array([m.b_tilde for m in llms])

    if data.task == "classification":
        global_perf = np.concatenate([
            auc_columns(y, X @ W[s:s + 256].T + B[s:s + 256]) for s in range(0, len(llms), 256)
        ])
    else:
        global_perf = np.concatenate([
            np.mean((y[:, None] - (X @ W[s:s + 256].T + B[s:s + 256])) ** 2, axis=0)
            for s in range(0, len(llms), 256)
        ])

    instance_region = np.empty(data.n, dtype=np.int64)
    regions = []
    for rid, (g, pat, llm) in enumerate(zip(ranking, patterns, llms)):
        idx = members[g]
        instance_region[idx] = rid
        yr = y[idx]
        pred = X[idx] @ llm.w_tilde + llm.b_tilde
        if data.task == "classification":
            local = auc(yr, pred)
        else:
            local = float(np.mean((yr - pred) ** 2))
        regions.append(RegionRecord(
            region_id=rid,
            pattern=pat,
            llm=llm,
            instance_indices=idx,
            response_mean=float(yr.mean()),
            response_std=float(yr.std()),
            local_perf=float(local),
            global_perf=float(global_perf[rid]),
            center=X[idx].mean(axis=0),
            single_flag=bool(np.all(yr == yr[0])),
            degenerate=data.task == "regression" and idx.size == 1,
        ))
    net_perf = performance(data.task, y, apply_link(net.link, eta))
    return UnwrapResult(
        regions=regions,
        net_ref=net.fingerprint(),
        dataset_fingerprint=data.fingerprint(),
        task=data.task,
        link=net.link,
        feature_names=list(data.feature_names),
        n_instances=data.n,
        network_perf=float(net_perf),
        instance_region=instance_region,
    )


@dataclass
class RegionAssignment:
    pattern: ActivationPattern
    member: bool
    region_id: int | None


def assign_region(result: UnwrapResult, net: ReluNetwork, x) -> RegionAssignment:
    """Pattern of ``x`` and whether it is one of the data-induced patterns in ``result``."""
    p = activation_pattern(net, x)
    rid = result.pattern_index.get(p)
    return RegionAssignment(p, rid is not None, rid)


def assign_regions(result: UnwrapResult, net: ReluNetwork, X) -> np.ndarray:
    """Region id of every row of ``X``; -1 for patterns not seen in ``result``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _, gid, keys = _group_patterns(net, X)
    sizes = tuple(net.hidden_sizes)
    lookup = np.array([result.pattern_index.get(ActivationPattern(k, sizes), -1) for k in keys], dtype=np.int64)
    return lookup[gid] if len(keys) else np.zeros(0, dtype=np.int64)


@dataclass
class GridEnumeration:
    patterns: list[ActivationPattern]
    cell_map: np.ndarray  # (resolution, resolution); [iy, ix] -> index into patterns
    xs: np.ndarray
    ys: np.ndarray

    @property
    def n_regions(self) -> int:
        return len(self.patterns)


def enumerate_regions_grid(net: ReluNetwork, bounds=((-1.0, 1.0), (-1.0, 1.0)), resolution: int = 2000,
                           n_layers: int | None = None) -> GridEnumeration:
    """Distinct patterns realised on a ``resolution x resolution`` grid of grid nodes.

    ``n_layers`` restricts patterns to the first hidden layers.
    """
    if net.input_dim != 2:
        raise ShapeError(f"grid enumeration needs a 2-d input, network has {net.input_dim}")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    (x0, x1), (y0, y1) = bounds
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.c_[gx.ravel(), gy.ravel()]
    _, gid, keys = _group_patterns(net, pts, n_layers)
    sizes = tuple(net.hidden_sizes[:n_layers] if n_layers is not None else net.hidden_sizes)
    patterns = [ActivationPattern(k, sizes) for k in keys]
    return GridEnumeration(patterns, gid.reshape(resolution, resolution), xs, ys)
