"""Pure Python/numpy versions of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and the same merge/tie-breaking order.
"""
from __future__ import annotations

import heapq

import numpy as np


def group_rows(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Group identical rows of a 2-d uint8 array.

    Returns ``(inverse, first)``: group id of every row, ids numbered in
    order of first occurrence, and the first row index of each group.
    """
    keys = np.ascontiguousarray(keys, dtype=np.uint8)
    n = keys.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    view = keys.view(np.dtype((np.void, keys.shape[1]))).ravel() if keys.shape[1] else np.zeros(n, dtype=np.uint8)
    _, first_sorted, inv_sorted = np.unique(view, return_index=True, return_inverse=True)
    # renumber by first occurrence
    order = np.argsort(first_sorted, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[inv_sorted.ravel()].astype(np.int64), first_sorted[order].astype(np.int64)


def _ward_cost(ca, cb, sa, sb):
    diff = ca - cb
    acc = 0.0
    for v in diff:
        acc += v * v
    return (sa * sb) / (sa + sb) * acc


def ward_tree(points: np.ndarray, indptr: np.ndarray, indices: np.ndarray):
    """Connectivity-constrained Ward agglomeration.

    ``indptr``/``indices`` is a symmetric CSR adjacency over the ``m`` input
    points. Returns ``(children, distances)`` where row ``s`` of ``children``
    holds the two cluster ids merged at step ``s`` (the result gets id
    ``m + s``) and ``distances[s] = sqrt(2 * delta)`` for the Ward increase
    ``delta``. Ties pop the smallest ``(i, j)`` pair first. Stops early if
    the graph is disconnected.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    m = points.shape[0]
    cent = [points[i].copy() for i in range(m)]
    size = [1.0] * m
    active = [True] * m
    nbrs = [set() for _ in range(m)]
    for i in range(m):
        for j in indices[indptr[i]:indptr[i + 1]]:
            j = int(j)
            if j != i:
                nbrs[i].add(j)
                nbrs[j].add(i)
    heap = []
    for i in range(m):
        for j in sorted(nbrs[i]):
            if i < j:
                heap.append((_ward_cost(cent[i], cent[j], 1.0, 1.0), i, j))
    heapq.heapify(heap)
    children, dists = [], []
    while heap and len(children) < m - 1:
        cost, i, j = heapq.heappop(heap)
        if not (active[i] and active[j]):
            continue
        k = len(cent)
        si, sj = size[i], size[j]
        cent.append((si * cent[i] + sj * cent[j]) / (si + sj))
        size.append(si + sj)
        active[i] = active[j] = False
        active.append(True)
        merged = (nbrs[i] | nbrs[j]) - {i, j}
        nbrs.append(set())
        for nb in sorted(merged):
            if not active[nb]:
                continue
            nbrs[nb].discard(i)
            nbrs[nb].discard(j)
            nbrs[nb].add(k)
            nbrs[k].add(nb)
            heapq.heappush(heap, (_ward_cost(cent[nb], cent[k], size[nb], size[k]), nb, k))
        nbrs[i] = set()
        nbrs[j] = set()
        children.append((i, j))
        dists.append(np.sqrt(2.0 * cost))
    return np.array(children, dtype=np.int64).reshape(-1, 2), np.array(dists, dtype=np.float64)


def lasso_cd(X, y, weights, lam, beta, intercept, tol, max_sweeps):
    """Cyclic coordinate descent for a weighted lasso with free intercept.

    Minimises ``0.5 * sum_i w_i (y_i - b - x_i.beta)^2 + lam * ||beta||_1``.
    Convergence when the largest coefficient change in a sweep is <= tol.
    Returns ``(beta, intercept, sweeps)``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    beta = np.array(beta, dtype=np.float64)
    b = float(intercept)
    n, p = X.shape
    sw = w.sum()
    col_sq = (w[:, None] * X * X).sum(axis=0)
    r = y - b - X @ beta
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        db = float(np.dot(w, r)) / sw
        b += db
        r -= db
        max_delta = max(max_delta, abs(db))
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            xj = X[:, j]
            rho = float(np.dot(w * xj, r)) + col_sq[j] * old
            if rho > lam:
                new = (rho - lam) / col_sq[j]
            elif rho < -lam:
                new = (rho + lam) / col_sq[j]
            else:
                new = 0.0
            if new != old:
                r -= (new - old) * xj
                beta[j] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta <= tol:
            break
    return beta, b, sweeps
