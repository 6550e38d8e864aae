# cython: boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled kernels: row grouping, constrained Ward agglomeration, weighted lasso CD.

Signatures and tie-breaking mirror ``_fallback.py`` exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.stdint cimport uint8_t, uint64_t, int64_t
from libcpp.vector cimport vector
from libcpp.set cimport set as cset
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from cython.operator cimport dereference as deref, preincrement as inc

cnp.import_array()


cdef inline uint64_t _hash_row(const uint8_t[:, ::1] keys, Py_ssize_t i, Py_ssize_t w) nogil:
    cdef uint64_t h = 1469598103934665603ULL
    cdef Py_ssize_t k
    for k in range(w):
        h ^= keys[i, k]
        h *= 1099511628211ULL
    return h


cdef inline bint _rows_equal(const uint8_t[:, ::1] keys, Py_ssize_t a, Py_ssize_t b, Py_ssize_t w) nogil:
    cdef Py_ssize_t k
    for k in range(w):
        if keys[a, k] != keys[b, k]:
            return False
    return True


def group_rows(keys):
    """Group identical rows of a 2-d uint8 array (open-addressing hash table)."""
    cdef const uint8_t[:, ::1] kv = np.ascontiguousarray(keys, dtype=np.uint8)
    cdef Py_ssize_t n = kv.shape[0], w = kv.shape[1]
    cdef cnp.ndarray[int64_t, ndim=1] inverse = np.empty(n, dtype=np.int64)
    if n == 0:
        return inverse, np.zeros(0, dtype=np.int64)
    cdef Py_ssize_t cap = 1024
    while cap < 2 * min(n, 1 << 16):
        cap <<= 1
    cdef vector[int64_t] slot_row = vector[int64_t](cap, -1)
    cdef vector[int64_t] slot_id = vector[int64_t](cap, -1)
    cdef vector[uint64_t] slot_hash = vector[uint64_t](cap, 0)
    cdef vector[int64_t] first
    cdef vector[uint64_t] hashes
    cdef Py_ssize_t i, s, mask, new_cap, r
    cdef uint64_t h
    cdef int64_t gid
    mask = cap - 1
    with nogil:
        for i in range(n):
            h = _hash_row(kv, i, w)
            s = <Py_ssize_t>(h & <uint64_t>mask)
            while True:
                if slot_row[s] < 0:
                    gid = first.size()
                    slot_row[s] = i
                    slot_id[s] = gid
                    slot_hash[s] = h
                    first.push_back(i)
                    hashes.push_back(h)
                    inverse[i] = gid
                    break
                if slot_hash[s] == h and _rows_equal(kv, slot_row[s], i, w):
                    inverse[i] = slot_id[s]
                    break
                s = (s + 1) & mask
            if <Py_ssize_t>first.size() * 2 > cap:
                new_cap = cap << 1
                slot_row.assign(new_cap, -1)
                slot_id.assign(new_cap, -1)
                slot_hash.assign(new_cap, 0)
                mask = new_cap - 1
                for r in range(<Py_ssize_t>first.size()):
                    s = <Py_ssize_t>(hashes[r] & <uint64_t>mask)
                    while slot_row[s] >= 0:
                        s = (s + 1) & mask
                    slot_row[s] = first[r]
                    slot_id[s] = r
                    slot_hash[s] = hashes[r]
                cap = new_cap
    out_first = np.empty(first.size(), dtype=np.int64)
    for i in range(<Py_ssize_t>first.size()):
        out_first[i] = first[i]
    return inverse, out_first


ctypedef pair[double, pair[int64_t, int64_t]] HeapItem


cdef inline double _ward_cost(double[:, ::1] cent, Py_ssize_t a, Py_ssize_t b,
                              double sa, double sb, Py_ssize_t p) nogil:
    cdef double acc = 0.0, diff
    cdef Py_ssize_t k
    for k in range(p):
        diff = cent[a, k] - cent[b, k]
        acc += diff * diff
    return (sa * sb) / (sa + sb) * acc


cdef inline void _push(priority_queue[HeapItem]& heap, double cost, int64_t i, int64_t j) nogil:
    # max-heap on negated keys pops smallest (cost, i, j) first
    heap.push(HeapItem(-cost, pair[int64_t, int64_t](-i, -j)))


def ward_tree(points, indptr, indices):
    """Connectivity-constrained Ward agglomeration; see ``_fallback.ward_tree``."""
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t m = pts.shape[0], p = pts.shape[1]
    cdef const int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t total = 2 * m - 1 if m > 0 else 0
    cdef double[:, ::1] cent = np.zeros((max(total, 1), p), dtype=np.float64)
    cdef vector[double] size = vector[double](max(total, 1), 0.0)
    cdef vector[char] active = vector[char](max(total, 1), 0)
    cdef vector[cset[int64_t]] nbrs = vector[cset[int64_t]](max(total, 1))
    cdef priority_queue[HeapItem] heap
    cdef cnp.ndarray[int64_t, ndim=2] children = np.empty((max(m - 1, 0), 2), dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] dists = np.empty(max(m - 1, 0), dtype=np.float64)
    cdef Py_ssize_t i, j, k, q, steps = 0
    cdef int64_t a, b, nb
    cdef double cost, si, sj
    cdef HeapItem top
    cdef cset[int64_t] merged
    cdef cset[int64_t].iterator it

    for i in range(m):
        for k in range(p):
            cent[i, k] = pts[i, k]
        size[i] = 1.0
        active[i] = 1
    for i in range(m):
        for q in range(ip[i], ip[i + 1]):
            j = ix[q]
            if j != i:
                nbrs[i].insert(j)
                nbrs[j].insert(i)
    with nogil:
        for i in range(m):
            it = nbrs[i].begin()
            while it != nbrs[i].end():
                j = deref(it)
                if i < j:
                    _push(heap, _ward_cost(cent, i, j, 1.0, 1.0, p), i, j)
                inc(it)
        while not heap.empty() and steps < m - 1:
            top = heap.top()
            heap.pop()
            cost = -top.first
            a = -top.second.first
            b = -top.second.second
            if not (active[a] and active[b]):
                continue
            k = m + steps
            si = size[a]
            sj = size[b]
            for q in range(p):
                cent[k, q] = (si * cent[a, q] + sj * cent[b, q]) / (si + sj)
            size[k] = si + sj
            active[a] = 0
            active[b] = 0
            active[k] = 1
            merged.clear()
            it = nbrs[a].begin()
            while it != nbrs[a].end():
                merged.insert(deref(it))
                inc(it)
            it = nbrs[b].begin()
            while it != nbrs[b].end():
                merged.insert(deref(it))
                inc(it)
            merged.erase(a)
            merged.erase(b)
            it = merged.begin()
            while it != merged.end():
                nb = deref(it)
                inc(it)
                if not active[nb]:
                    continue
                nbrs[nb].erase(a)
                nbrs[nb].erase(b)
                nbrs[nb].insert(k)
                nbrs[k].insert(nb)
                _push(heap, _ward_cost(cent, nb, k, size[nb], size[k], p), nb, k)
            nbrs[a].clear()
            nbrs[b].clear()
            children[steps, 0] = a
            children[steps, 1] = b
            dists[steps] = sqrt(2.0 * cost)
            steps += 1
    return children[:steps].copy(), dists[:steps].copy()


def lasso_cd(X, y, weights, double lam, beta, double intercept, double tol, int max_sweeps):
    """Weighted lasso by cyclic coordinate descent; see ``_fallback.lasso_cd``."""
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], p = Xv.shape[1], i, j
    out = np.array(beta, dtype=np.float64)
    cdef double[::1] bv = out
    cdef double[::1] r = np.empty(n, dtype=np.float64)
    cdef double[::1] col_sq = np.zeros(p, dtype=np.float64)
    cdef double b = intercept, sw = 0.0, acc, db, rho, old, new, max_delta, delta
    cdef int sweeps = 0, s
    with nogil:
        for i in range(n):
            sw += wv[i]
            acc = 0.0
            for j in range(p):
                acc += Xv[i, j] * bv[j]
                col_sq[j] += wv[i] * Xv[i, j] * Xv[i, j]
            r[i] = yv[i] - b - acc
        for s in range(1, max_sweeps + 1):
            sweeps = s
            max_delta = 0.0
            acc = 0.0
            for i in range(n):
                acc += wv[i] * r[i]
            db = acc / sw
            b += db
            for i in range(n):
                r[i] -= db
            if fabs(db) > max_delta:
                max_delta = fabs(db)
            for j in range(p):
                if col_sq[j] == 0.0:
                    continue
                old = bv[j]
                acc = 0.0
                for i in range(n):
                    acc += wv[i] * Xv[i, j] * r[i]
                rho = acc + col_sq[j] * old
                if rho > lam:
                    new = (rho - lam) / col_sq[j]
                elif rho < -lam:
                    new = (rho + lam) / col_sq[j]
                else:
                    new = 0.0
                if new != old:
                    delta = new - old
                    for i in range(n):
                        r[i] -= delta * Xv[i, j]
                    bv[j] = new
                    if fabs(delta) > max_delta:
                        max_delta = fabs(delta)
            if max_delta <= tol:
                break
    return out, b, sweeps
