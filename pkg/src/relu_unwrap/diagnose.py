"""Region diagnostics: summary table, single-region census, polar projection, extrapolation verdicts."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .unwrapper import UnwrapResult

VERDICTS = ("poor", "good", "extraordinary", "undefined")


def _fmt(v) -> str:
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def region_table(result: UnwrapResult, top_k: int | None = None) -> list[list]:
    """Rows ``[region_id, count, mean, std, local, global]`` in count order."""
    if len(result) == 0:
        raise ValueError("empty unwrap result")
    regs = sorted(result.regions, key=lambda r: (-r.count, r.region_id))
    if top_k is not None:
        regs = regs[:top_k]
    return [[r.region_id, r.count, r.response_mean, r.response_std, r.local_perf, r.global_perf] for r in regs]


def region_table_csv(result: UnwrapResult, top_k: int | None = None) -> str:
    name = result.perf_name
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region_id", "Count", "Response Mean", "Response Std", f"Local {name}", f"Global {name}"])
    for rid, c, m, s, lo, gl in region_table(result, top_k):
        w.writerow([rid, c, _fmt(m), _fmt(s), _fmt(lo), _fmt(gl)])
    return buf.getvalue()


# -- census ------------------------------------------------------------------

@dataclass
class Census:
    n_regions: int
    n_single_regions: int
    n_instances: int
    n_single_instances: int

    @property
    def fraction_single(self) -> float:
        return self.n_single_regions / self.n_regions if self.n_regions else 0.0

    @property
    def instance_fraction_single(self) -> float:
        return self.n_single_instances / self.n_instances if self.n_instances else 0.0

    def to_dict(self) -> dict:
        return {
            "n_regions": self.n_regions,
            "n_single_regions": self.n_single_regions,
            "fraction_single": self.fraction_single,
            "n_instances": self.n_instances,
            "n_single_instances": self.n_single_instances,
            "instance_fraction_single": self.instance_fraction_single,
        }


def single_census(result: UnwrapResult) -> Census:
    if len(result) == 0:
        raise ValueError("empty unwrap result")
    flags = result.single_flags
    counts = result.counts
    return Census(len(flags), int(flags.sum()), int(counts.sum()), int(counts[flags].sum()))


# -- polar -------------------------------------------------------------------

@dataclass
class PolarPoint:
    region_id: int
    angle: float
    radius: float
    single_flag: bool
    degenerate: bool = False


def coefficient_projection(W: np.ndarray) -> tuple[np.ndarray, bool]:
    """2-D view of coefficient rows: identity for d<=2, top-2 principal components otherwise.

    Rows are weighted equally. Principal axes are sign-fixed so their largest
    absolute loading is positive. Returns ``(proj, degenerate)``.
    """
    W = np.asarray(W, dtype=np.float64)
    m, d = W.shape
    if d == 1:
        return np.hstack([W, np.zeros((m, 1))]), bool(np.all(W == 0))
    if d == 2:
        return W.copy(), bool(np.all(W == 0))
    C = W - W.mean(axis=0)
    cov = C.T @ C / max(m, 1)
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] <= 1e-14 * max(1.0, float(np.abs(W).max())):
        return np.zeros((m, 2)), True
    top = vecs[:, ::-1][:, :2]
    for k in range(2):
        j = int(np.argmax(np.abs(top[:, k])))
        if top[j, k] < 0:
            top[:, k] = -top[:, k]
    return C @ top, False


def polar_projection(result: UnwrapResult, sqrt_radius: bool = False) -> list[PolarPoint]:
    if len(result) == 0:
        raise ValueError("empty unwrap result")
    proj, degenerate = coefficient_projection(result.coef_matrix)
    out = []
    for r, (u, v) in zip(result.regions, proj):
        ang = 0.0 if degenerate else math.atan2(v, u) % (2 * math.pi)
        if ang >= 2 * math.pi:  # -0.0 and tiny negatives wrap to 2*pi
            ang = 0.0
        rad = math.sqrt(r.count) if sqrt_radius else float(r.count)
        out.append(PolarPoint(r.region_id, ang, rad, r.single_flag, degenerate))
    return out


def polar_csv(points: list[PolarPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region_id", "angle", "radius", "single_flag"])
    for p in points:
        w.writerow([p.region_id, _fmt(p.angle), _fmt(p.radius), int(p.single_flag)])
    return buf.getvalue()


# -- extrapolation ------------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    auc: float = 0.75
    mse_ratio: float = 2.0  # "good" MSE means <= mse_ratio * network MSE


@dataclass
class ExtrapolationRow:
    region_id: int
    count: int
    local_perf: float
    global_perf: float
    verdict: str


def classify(task: str, local: float, global_: float, thresholds: Thresholds, network_perf: float) -> str:
    if math.isnan(local) or math.isnan(global_):
        return "undefined"
    if task == "classification":
        good_local, good_global = local >= thresholds.auc, global_ >= thresholds.auc
    else:
        cut = thresholds.mse_ratio * network_perf
        good_local, good_global = local <= cut, global_ <= cut
    if good_global:
        return "good" if good_local else "extraordinary"
    return "poor"


def extrapolation_report(result: UnwrapResult, top_k: int = 10,
                         thresholds: Thresholds | None = None) -> list[ExtrapolationRow]:
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    th = thresholds or Thresholds()
    return [ExtrapolationRow(r.region_id, r.count, r.local_perf, r.global_perf,
                             classify(result.task, r.local_perf, r.global_perf, th, result.network_perf))
            for r in result.regions[:top_k]]


def extrapolation_csv(rows: list[ExtrapolationRow], task: str, thresholds: Thresholds, network_perf: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if task == "classification":
        buf.write(f"# good means AUC >= {thresholds.auc!r}\n")
    else:
        buf.write(f"# good means MSE <= {thresholds.mse_ratio!r} x network MSE ({network_perf!r})\n")
    w.writerow(["region_id", "count", "local", "global", "verdict"])
    for r in rows:
        w.writerow([r.region_id, r.count, _fmt(r.local_perf), _fmt(r.global_perf), r.verdict])
    return buf.getvalue()
