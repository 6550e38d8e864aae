"""Merging local linear models into a few refitted clusters, and flattening the
result into a single-hidden-layer ReLU network.

Merge outline
-------------
1. Connect every region centre to its ``T`` nearest neighbouring centres
   (symmetrised) and raise ``T`` until the graph is connected.
2. Ward agglomeration of the ``(w, b)`` vectors under that connectivity.
3. Cut the tree at each ``K``; clusters holding fewer than ``tau`` training
   instances are absorbed by the adjacent large cluster with the nearest
   instance-weighted centre.
4. Refit one GLM per cluster on its member instances.
5. Keep the ``K`` whose piecewise refit scores best on a held-out split.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import kernels
from ._runtime import parallel_map
from .glm import GlmError, GlmFit, fit_glm, wald_inference
from .metrics import higher_is_better, performance
from .network import Dataset, ReluNetwork, apply_link, predict_batch
from .trainer import TrainConfig, finetune, train, validation_split
from .unwrapper import ActivationPattern, UnwrapResult, _group_patterns

log = logging.getLogger(__name__)

REFITS = {"glm": "none", "l1_glm": "l1", "l2_glm": "l2", "none": "none", "l1": "l1", "l2": "l2"}
DEFAULT_K_GRID = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20)
FLATTEN_EPOCHS = 200


class MergeError(ValueError):
    pass


@dataclass
class MergeConfig:
    k_grid: list[int] = field(default_factory=lambda: list(DEFAULT_K_GRID))
    neighbors: int | None = None  # None: ceil(1% of the region count)
    tau: int = 30
    refit: str = "glm"
    strength: float | None = None
    validation_fraction: float = 0.2
    standardize: bool = False
    seed: int = 0

    def __post_init__(self):
        self.k_grid = sorted({int(k) for k in self.k_grid})
        if not self.k_grid or self.k_grid[0] < 1:
            raise MergeError("K grid values must be >= 1")
        if self.neighbors is not None and self.neighbors < 1:
            raise MergeError("neighbors must be >= 1")
        if self.tau < 1:
            raise MergeError("tau must be >= 1")
        if self.refit not in REFITS:
            raise MergeError(f"refit must be one of glm, l1_glm, l2_glm (got {self.refit!r})")

    @property
    def penalty(self) -> str:
        return REFITS[self.refit]


@dataclass
class MergedCluster:
    cluster_id: int
    region_ids: list[int]
    count: int
    refit: GlmFit
    response_mean: float
    response_std: float
    local_perf: float
    global_perf: float
    center: np.ndarray
    fallback: bool = False  # refit needed a ridge fallback


@dataclass
class MergedModel:
    clusters: list[MergedCluster]
    region_cluster: np.ndarray  # region id -> cluster id
    region_centers: np.ndarray
    region_patterns: list[ActivationPattern]
    neighbors: int
    config: MergeConfig
    k_selected: int
    validation_scores: dict[int, float]
    task: str
    feature_names: list[str]

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def family(self) -> str:
        return "gaussian" if self.task == "regression" else "binomial"

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "task": self.task,
            "feature_names": list(self.feature_names),
            "k_selected": self.k_selected,
            "n_clusters": self.n_clusters,
            "neighbors": self.neighbors,
            "config": cfg,
            "validation_scores": {str(k): v for k, v in self.validation_scores.items()},
            "regions": [{"region_id": i, "pattern": str(p), "cluster": int(c), "center": [float(v) for v in ctr]}
                        for i, (p, c, ctr) in enumerate(zip(self.region_patterns, self.region_cluster,
                                                            self.region_centers))],
            "clusters": [{
                "cluster_id": c.cluster_id,
                "region_ids": list(c.region_ids),
                "count": c.count,
                "intercept": float(c.refit.beta_hat[0]),
                "coef": [float(v) for v in c.refit.beta_hat[1:]],
                "response_mean": c.response_mean,
                "response_std": c.response_std,
                "local_perf": c.local_perf,
                "global_perf": c.global_perf,
                "center": [float(v) for v in c.center],
                "fallback": c.fallback,
                "refit": c.refit.to_dict(),
            } for c in self.clusters],
        }

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "MergedModel":
        regions = obj["regions"]
        cfg = dict(obj["config"])
        clusters = [MergedCluster(
            cluster_id=c["cluster_id"], region_ids=list(c["region_ids"]), count=c["count"],
            refit=GlmFit.from_dict(c["refit"]), response_mean=_unclean(c["response_mean"]),
            response_std=_unclean(c["response_std"]), local_perf=_unclean(c["local_perf"]),
            global_perf=_unclean(c["global_perf"]), center=np.array(c["center"], dtype=np.float64),
            fallback=c["fallback"]) for c in obj["clusters"]]
        d = len(obj["feature_names"])
        return cls(
            clusters=clusters,
            region_cluster=np.array([r["cluster"] for r in regions], dtype=np.int64),
            region_centers=np.array([r["center"] for r in regions], dtype=np.float64).reshape(len(regions), d),
            region_patterns=[ActivationPattern.from_string(r["pattern"]) for r in regions],
            neighbors=obj["neighbors"], config=MergeConfig(**cfg), k_selected=obj["k_selected"],
            validation_scores={int(k): _unclean(v) for k, v in obj["validation_scores"].items()},
            task=obj["task"], feature_names=list(obj["feature_names"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "MergedModel":
        return cls.from_dict(json.loads(text))


def _clean(obj):
    """NaN/inf are not JSON; store them as strings."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def _unclean(v):
    return float(v) if v is not None else None


# -- graph and tree ------------------------------------------------------------

def knn_graph(centers: np.ndarray, T: int) -> csr_matrix:
    """Symmetrised T-nearest-neighbour adjacency over region centres."""
    m = centers.shape[0]
    k = min(T + 1, m)
    _, idx = cKDTree(centers).query(centers, k=k)
    idx = np.asarray(idx).reshape(m, k)
    rows = np.repeat(np.arange(m), k)
    cols = idx.ravel()
    keep = rows != cols
    A = csr_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(m, m))
    A = ((A + A.T) > 0).astype(np.int8).tocsr()
    A.sort_indices()
    return A


def connected_knn_graph(centers: np.ndarray, T: int) -> tuple[csr_matrix, int]:
    """Smallest neighbour count ``>= T`` whose kNN graph is connected."""
    m = centers.shape[0]
    T = max(1, min(T, max(m - 1, 1)))
    while True:
        A = knn_graph(centers, T)
        n_comp, _ = connected_components(A, directed=False)
        if n_comp == 1 or T >= m - 1:
            return A, T
        T += 1


def cut_tree(children: np.ndarray, m: int, K: int) -> np.ndarray:
    """Cluster label per leaf after applying the first ``m - K`` merges.

    Labels are numbered by the smallest leaf index in each cluster.
    """
    parent = np.arange(m)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    rep = {i: i for i in range(m)}  # tree node id -> a leaf in it
    for s, (a, b) in enumerate(children[:max(m - K, 0)]):
        ra, rb = find(rep[int(a)]), find(rep[int(b)])
        parent[max(ra, rb)] = min(ra, rb)
        rep[m + s] = min(ra, rb)
    roots = np.array([find(i) for i in range(m)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels.astype(np.int64)


def absorb_small(labels: np.ndarray, region_counts: np.ndarray, region_centers: np.ndarray, tau: int,
                 graph: csr_matrix | None = None) -> np.ndarray:
    """Fold clusters with fewer than ``tau`` instances into the nearest large one.

    Distances are between instance-weighted centres. When the region
    connectivity ``graph`` is given, a small cluster may only join a large
    cluster it touches; absorption then proceeds in rounds (small clusters
    that touch no large cluster wait for a later round), so every cluster
    stays connected in the graph. With no large cluster, everything
    collapses into one cluster. Output labels are renumbered by decreasing
    cluster count (ties: smallest member region id).
    """
    labels = np.asarray(labels, dtype=np.int64).copy()
    region_counts = np.asarray(region_counts, dtype=np.float64)
    if graph is not None:
        coo = graph.tocoo()
        edges_a, edges_b = coo.row, coo.col
    while True:
        k = int(labels.max()) + 1
        counts = np.bincount(labels, weights=region_counts, minlength=k)
        sums = np.zeros((k, region_centers.shape[1]))
        np.add.at(sums, labels, region_centers * region_counts[:, None])
        centres = sums / np.maximum(counts, 1)[:, None]
        present = counts > 0
        large = np.flatnonzero(present & (counts >= tau))
        small = np.flatnonzero(present & (counts < tau))
        if small.size == 0:
            break
        if large.size == 0:
            labels[:] = 0
            break
        new = np.arange(k)
        if graph is None:
            touching = {int(c): large for c in small}
        else:
            la, lb = labels[edges_a], labels[edges_b]
            is_large = np.zeros(k, dtype=bool)
            is_large[large] = True
            sel = (la != lb) & ~is_large[la] & is_large[lb]
            touching = {}
            for c in np.unique(la[sel]):
                touching[int(c)] = np.unique(lb[sel][la[sel] == c])
            if not touching:  # disconnected graph: fall back to plain distance
                touching = {int(c): large for c in small}
        for c, cand in touching.items():
            dist = np.sum((centres[cand] - centres[c]) ** 2, axis=1)
            new[c] = cand[int(np.argmin(dist))]
        labels = new[labels]
    # renumber
    uniq = np.unique(labels)
    tot = {u: float(region_counts[labels == u].sum()) for u in uniq}
    first = {u: int(np.flatnonzero(labels == u)[0]) for u in uniq}
    order = sorted(uniq, key=lambda u: (-tot[u], first[u]))
    remap = {u: i for i, u in enumerate(order)}
    return np.array([remap[u] for u in labels], dtype=np.int64)


# -- refits ---------------------------------------------------------------------

def _family(task: str) -> str:
    return "gaussian" if task == "regression" else "binomial"


def refit_cluster(task: str, X, y, penalty: str, strength) -> tuple[GlmFit, bool]:
    """GLM refit; a singular unpenalized design falls back to a light ridge."""
    fam = _family(task)
    try:
        return fit_glm(fam, X, y, penalty, strength), False
    except GlmError:
        if penalty != "none":
            raise
    ridge = 1e-8 if fam == "gaussian" else 1e8
    return fit_glm(fam, X, y, "l2", ridge), True


def _piecewise_eta(fits: list[GlmFit], cluster_of_row: np.ndarray, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for c, f in enumerate(fits):
        sel = cluster_of_row == c
        if sel.any():
            out[sel] = f.eta(X[sel])
    return out


def _evaluate_k(K, children, m, result, X, y, fit_idx, val_idx, cfg, graph):
    labels = absorb_small(cut_tree(children, m, min(K, m)), result.counts.astype(np.float64),
                          result.centers, cfg.tau, graph)
    row_cluster = labels[result.instance_region]
    fits = []
    for c in range(int(labels.max()) + 1):
        rows = fit_idx[row_cluster[fit_idx] == c]
        if rows.size == 0:  # cluster only in the validation part: use all its rows
            rows = np.flatnonzero(row_cluster == c)
        fits.append(refit_cluster(result.task, X[rows], y[rows], cfg.penalty, cfg.strength)[0])
    eta = _piecewise_eta(fits, row_cluster[val_idx], X[val_idx])
    score = performance(result.task, y[val_idx], eta)
    return labels, score


def merge(result: UnwrapResult, data: Dataset, cfg: MergeConfig | None = None) -> MergedModel:
    """Cluster the LLMs of ``result`` and refit one GLM per cluster.

    ``data`` must be the dataset that ``result`` was unwrapped from.
    """
    cfg = cfg or MergeConfig()
    m = len(result)
    if m == 0:
        raise MergeError("empty unwrap result")
    if data.n != result.n_instances:
        raise MergeError("data does not match the unwrapped dataset")
    X, y = data.features, data.response

    pts = np.hstack([result.coef_matrix, result.intercepts[:, None]])
    if cfg.standardize:
        sd = pts.std(axis=0)
        pts = (pts - pts.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    T0 = cfg.neighbors if cfg.neighbors is not None else max(1, math.ceil(0.01 * m))
    if m > 1:
        A, T = connected_knn_graph(result.centers, T0)
        children, _ = kernels.ward_tree(pts, A.indptr.astype(np.int64), A.indices.astype(np.int64))
    else:
        A, T, children = None, T0, np.zeros((0, 2), dtype=np.int64)

    fit_idx, val_idx = validation_split(data.n, cfg.validation_fraction, cfg.seed)
    if val_idx.size == 0:
        fit_idx = val_idx = np.arange(data.n)
    grid = list(cfg.k_grid)
    evals = parallel_map(lambda K: _evaluate_k(K, children, m, result, X, y, fit_idx, val_idx, cfg, A),
                         grid)
    scores = {K: float(s) for K, (_, s) in zip(grid, evals)}
    sign = 1.0 if higher_is_better(result.task) else -1.0
    best = max(range(len(grid)), key=lambda i: (np.nan_to_num(sign * evals[i][1], nan=-np.inf), -grid[i]))
    labels = evals[best][0]
    log.debug("merge: m=%d T=%d scores=%s -> K=%d", m, T, scores, grid[best])

    row_cluster = labels[result.instance_region]
    clusters = []
    for c in range(int(labels.max()) + 1):
        rows = np.flatnonzero(row_cluster == c)
        fit, fb = refit_cluster(result.task, X[rows], y[rows], cfg.penalty, cfg.strength)
        yr = y[rows]
        clusters.append(MergedCluster(
            cluster_id=c,
            region_ids=[int(r) for r in np.flatnonzero(labels == c)],
            count=int(rows.size),
            refit=fit,
            response_mean=float(yr.mean()),
            response_std=float(yr.std()),
            local_perf=float(performance(result.task, yr, fit.eta(X[rows]))),
            global_perf=float(performance(result.task, y, fit.eta(X))),
            center=X[rows].mean(axis=0),
            fallback=fb,
        ))
    return MergedModel(
        clusters=clusters,
        region_cluster=labels,
        region_centers=result.centers,
        region_patterns=[r.pattern for r in result.regions],
        neighbors=T,
        config=cfg,
        k_selected=grid[best],
        validation_scores=scores,
        task=result.task,
        feature_names=list(result.feature_names),
    )


# -- prediction -----------------------------------------------------------------

def assign_clusters(model: MergedModel, net: ReluNetwork, X) -> np.ndarray:
    """Cluster of each row: through its region if the pattern is known, else by
    majority vote over the ``neighbors`` nearest region centres (ties: the
    cluster of the closest centre among the tied ones)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    index = {p: i for i, p in enumerate(model.region_patterns)}
    _, gid, keys = _group_patterns(net, X)
    sizes = tuple(net.hidden_sizes)
    lookup = np.array([index.get(ActivationPattern(k, sizes), -1) for k in keys], dtype=np.int64)
    rid = lookup[gid] if len(keys) else np.zeros(0, dtype=np.int64)
    out = np.where(rid >= 0, model.region_cluster[np.maximum(rid, 0)], -1)
    unseen = np.flatnonzero(rid < 0)
    if unseen.size:
        k = min(model.neighbors, len(model.region_patterns))
        _, nn = cKDTree(model.region_centers).query(X[unseen], k=k)
        nn = np.asarray(nn).reshape(unseen.size, k)
        for row, cand in zip(unseen, nn):
            labs = model.region_cluster[cand]
            votes = np.bincount(labs)
            winners = np.flatnonzero(votes == votes.max())
            # cand is sorted by distance, so the first hit among winners is the closest
            out[row] = next(int(l) for l in labs if l in winners)
    return out


def merged_eta(model: MergedModel, net: ReluNetwork, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return _piecewise_eta([c.refit for c in model.clusters], assign_clusters(model, net, X), X)


def predict_merged_batch(model: MergedModel, net: ReluNetwork, X) -> np.ndarray:
    return apply_link(net.link, merged_eta(model, net, X))


def predict_merged(model: MergedModel, net: ReluNetwork, x) -> float:
    return float(predict_merged_batch(model, net, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


# -- flattening -----------------------------------------------------------------

@dataclass
class FlattenInit:
    network: ReluNetwork
    output_fit: GlmFit
    fallback: bool


def flatten_init(model: MergedModel, data: Dataset) -> FlattenInit:
    """One hidden ReLU unit per cluster refit; output layer fitted by GLM on the activations."""
    W0 = np.array([c.refit.beta_hat[1:] for c in model.clusters], dtype=np.float64)
    b0 = np.array([c.refit.beta_hat[0] for c in model.clusters], dtype=np.float64)
    H = np.maximum(data.features @ W0.T + b0, 0.0)
    fam = model.family
    fallback = False
    try:
        out = fit_glm(fam, H, data.response, "none")
        if out.warnings:
            raise GlmError("; ".join(out.warnings))
    except (GlmError, np.linalg.LinAlgError) as exc:
        log.debug("flatten: output GLM fallback (%s)", exc)
        fallback = True
        out = fit_glm(fam, H, data.response, "l2", 1e-6 if fam == "gaussian" else 1.0)
    link = "identity" if fam == "gaussian" else "logit"
    net = ReluNetwork((W0, out.beta_hat[1:].reshape(1, -1).copy()),
                      (b0, np.array([out.beta_hat[0]])), link)
    return FlattenInit(net, out, fallback)


def normalize_hidden(net: ReluNetwork) -> ReluNetwork:
    """Rescale each hidden unit to a unit-norm ``(w, b)`` row, compensating in the output layer.

    ReLU is positively homogeneous, so the network function is unchanged; the
    refit logits can be large, and unit-scale rows let the optimiser move them.
    """
    (W0, W1), (b0, b1) = net.weights, net.biases
    s = np.sqrt((W0 ** 2).sum(axis=1) + b0 ** 2)
    s[s == 0] = 1.0
    return ReluNetwork((W0 / s[:, None], W1 * s[None, :]), (b0 / s, b1.copy()), net.link)


def flatten_config(seed: int = 0, **overrides) -> TrainConfig:
    """Default fine-tuning budget shared by the flattened net and its SLFN baseline."""
    opts = {"max_epochs": FLATTEN_EPOCHS, "patience": min(100, FLATTEN_EPOCHS), "seed": seed}
    opts.update(overrides)
    return TrainConfig(**opts)


def flatten(model: MergedModel, data: Dataset, cfg: TrainConfig | None = None) -> ReluNetwork:
    """Flattened single-hidden-layer network, fine-tuned with ``cfg``.

    ``cfg.hidden_sizes`` is ignored (the shape is fixed by the clusters).
    """
    if model.n_clusters < 1:
        raise MergeError("model has no clusters")
    cfg = cfg or flatten_config()
    return finetune(normalize_hidden(flatten_init(model, data).network), data, cfg)


def train_slfn(n_hidden: int, data: Dataset, cfg: TrainConfig | None = None) -> ReluNetwork:
    """Randomly initialised single-hidden-layer baseline of the same shape."""
    cfg = cfg or flatten_config()
    c = TrainConfig(**{**cfg.to_dict(), "hidden_sizes": [int(n_hidden)]})
    return train(data, c)


# -- comparison -----------------------------------------------------------------

COMPARE_COLUMNS = ["ReLU-Net", "Merge-Net", "FL-Net", "SLFN", "n_cluster"]


def compare_models(net: ReluNetwork, merged: MergedModel | None, flattened: ReluNetwork | None,
                   slfn: ReluNetwork | None, test: Dataset) -> dict:
    task = test.task
    y = test.response
    row = {"ReLU-Net": performance(task, y, predict_batch(net, test.features)),
           "Merge-Net": None, "FL-Net": None, "SLFN": None, "n_cluster": None}
    if merged is not None:
        row["Merge-Net"] = performance(task, y, predict_merged_batch(merged, net, test.features))
        row["n_cluster"] = merged.n_clusters
    if flattened is not None:
        row["FL-Net"] = performance(task, y, predict_batch(flattened, test.features))
    if slfn is not None:
        row["SLFN"] = performance(task, y, predict_batch(slfn, test.features))
    return row


def compare_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for row in rows:
        w.writerow(["" if row[c] is None else (str(row[c]) if c == "n_cluster" else repr(float(row[c])))
                    for c in COMPARE_COLUMNS])
    return buf.getvalue()


def merged_inference_csv(model: MergedModel, level: float = 0.95) -> str:
    """Wald tables of every unpenalized cluster refit, stacked with a ``region`` column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = None
    for c in model.clusters:
        if c.refit.penalty != "none" or c.refit.covariance is None:
            continue
        rep = wald_inference(c.refit, level, model.feature_names)
        if header is None:
            header = ["region", "term", *rep.columns]
            w.writerow(header)
        w.writerows(rep.table_rows(prefix=(c.cluster_id,)))
    if header is None:
        stat = "t" if model.family == "gaussian" else "z"
        alpha = 1.0 - level
        w.writerow(["region", "term", "coef", "std_err", stat, "p-value", f"[{alpha / 2:.3f}", f"{1 - alpha / 2:.3f}]"])
    return buf.getvalue()
