"""Local linear profiles, joint importance and parallel-coordinate exports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .network import Dataset
from .unwrapper import UnwrapResult

KDE_POINTS = 64


def _fmt(v) -> str:
    return repr(float(v))


def silverman_bandwidth(x: np.ndarray) -> float:
    n = x.size
    sd = x.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25]) if n > 1 else (0.0, 0.0)
    spread = min(sd, (q75 - q25) / 1.349) if q75 > q25 else sd
    return 0.9 * spread * n ** (-0.2)


def kde_curve(x, grid) -> np.ndarray:
    """Gaussian KDE evaluated on ``grid``, scaled so its maximum is 1.

    Degenerate samples (one point, or zero spread) give a flat curve of ones.
    """
    x = np.asarray(x, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    h = silverman_bandwidth(x)
    if h <= 0 or not np.isfinite(h):
        return np.ones_like(grid)
    u = (grid[:, None] - x[None, :]) / h
    dens = np.exp(-0.5 * u * u).sum(axis=1)
    top = dens.max()
    return dens / top if top > 0 else np.ones_like(grid)


@dataclass
class ProfileSegment:
    """Centred marginal line ``slope * x_j - offset`` over the region's x-range."""
    region_id: int
    feature: int
    slope: float
    offset: float
    xmin: float
    xmax: float
    count: int
    density_x: np.ndarray
    density: np.ndarray

    def value(self, x):
        return self.slope * np.asarray(x, dtype=np.float64) - self.offset


def local_profile(result: UnwrapResult, data: Dataset, feature: int, top_k: int = 30) -> list[ProfileSegment]:
    """Profile segments of feature ``feature`` for the ``top_k`` largest regions."""
    if not 0 <= feature < result.d:
        raise ValueError(f"feature index {feature} out of range for d={result.d}")
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    X = data.features
    segs = []
    for r in result.regions[:top_k]:
        if r.count == 0:
            continue
        xj = X[r.instance_indices, feature]
        slope = float(r.llm.w_tilde[feature])
        grid = np.linspace(xj.min(), xj.max(), KDE_POINTS)
        segs.append(ProfileSegment(
            region_id=r.region_id, feature=feature, slope=slope,
            offset=float(np.mean(slope * xj)),
            xmin=float(xj.min()), xmax=float(xj.max()), count=r.count,
            density_x=grid, density=kde_curve(xj, grid),
        ))
    return segs


def profile_csv(segments: list[ProfileSegment]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region_id", "feature", "slope", "offset", "xmin", "xmax", "count"])
    for s in segments:
        w.writerow([s.region_id, s.feature, _fmt(s.slope), _fmt(s.offset), _fmt(s.xmin), _fmt(s.xmax), s.count])
    return buf.getvalue()


@dataclass
class ImportanceTable:
    ji_intercept: float
    ji_features: np.ndarray
    order: np.ndarray
    feature_names: list[str]

    def rows(self) -> list[tuple[str, float]]:
        """Intercept first, then features by decreasing importance."""
        return [("intercept", self.ji_intercept)] + [
            (self.feature_names[j], float(self.ji_features[j])) for j in self.order]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "ji"])
        for name, v in self.rows():
            w.writerow([name, _fmt(v)])
        return buf.getvalue()


def joint_importance(result: UnwrapResult) -> ImportanceTable:
    """Count-weighted squared-coefficient shares of the intercept and each feature.

    If every coefficient and intercept is exactly zero the shares are split
    uniformly so they still sum to one.
    """
    if len(result) == 0:
        raise ValueError("empty unwrap result")
    counts = result.counts.astype(np.float64)
    W = result.coef_matrix
    b = result.intercepts
    num_b = float(np.sum(counts * b * b))
    num_w = (counts[:, None] * W * W).sum(axis=0)
    T = num_b + float(num_w.sum())
    d = W.shape[1]
    if T == 0.0:
        ji_b = 1.0 / (d + 1)
        ji_w = np.full(d, 1.0 / (d + 1))
    else:
        ji_b = num_b / T
        ji_w = num_w / T
    order = np.argsort(-ji_w, kind="stable")
    return ImportanceTable(ji_b, ji_w, order, list(result.feature_names))


@dataclass
class ParallelCoordinates:
    region_ids: np.ndarray
    counts: np.ndarray
    values: np.ndarray  # (rows, [b,] w1..wd)
    columns: list[str]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region_id", "count", *self.columns])
        for rid, c, row in zip(self.region_ids, self.counts, self.values):
            w.writerow([int(rid), int(c), *(_fmt(v) for v in row)])
        return buf.getvalue()


def parallel_coordinates(result: UnwrapResult, exclude_single: bool = True,
                         include_intercept: bool = True) -> ParallelCoordinates:
    keep = [r for r in result.regions if r.count > 0 and not (exclude_single and r.single_flag)]
    cols = (["b"] if include_intercept else []) + list(result.feature_names)
    rows = [([r.llm.b_tilde] if include_intercept else []) + list(r.llm.w_tilde) for r in keep]
    return ParallelCoordinates(
        region_ids=np.array([r.region_id for r in keep], dtype=np.int64),
        counts=np.array([r.count for r in keep], dtype=np.int64),
        values=np.array(rows, dtype=np.float64).reshape(len(keep), len(cols)),
        columns=cols,
    )
