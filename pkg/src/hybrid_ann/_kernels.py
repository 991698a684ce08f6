"""Compiled distance kernels shared by the graph, the search and the oracle.

Every caller goes through these functions so that a distance between the same
two vectors is bit-identical no matter which code path computed it.
Products of two float32 values are exact in float64; sums are accumulated in
float64 in a fixed order and the final distance is rounded to float32.
"""

import numpy as np
from numba import njit

# counter slots shared by the build and search kernels
DENSE_CALLS = 0
SPARSE_CALLS = 1
EXPANSIONS_STAGE1 = 2
EXPANSIONS_STAGE2 = 3
SPARSE_CALLS_STAGE1 = 4  # snapshot of SPARSE_CALLS when search stage 1 ends
N_COUNTERS = 5

METRIC_DENSE = 0
METRIC_HYBRID = 1


@njit(cache=True, inline="always")
def dense_dot(a, b):
    # eight fixed lanes (lane j holds positions i % 8 == j), combined pairwise
    n = a.shape[0]
    s0 = s1 = s2 = s3 = s4 = s5 = s6 = s7 = 0.0
    n8 = n - n % 8
    for t in range(n // 8):
        i = 8 * t
        s0 += np.float64(a[i]) * np.float64(b[i])
        s1 += np.float64(a[i + 1]) * np.float64(b[i + 1])
        s2 += np.float64(a[i + 2]) * np.float64(b[i + 2])
        s3 += np.float64(a[i + 3]) * np.float64(b[i + 3])
        s4 += np.float64(a[i + 4]) * np.float64(b[i + 4])
        s5 += np.float64(a[i + 5]) * np.float64(b[i + 5])
        s6 += np.float64(a[i + 6]) * np.float64(b[i + 6])
        s7 += np.float64(a[i + 7]) * np.float64(b[i + 7])
    for i in range(n8, n):
        s0 += np.float64(a[i]) * np.float64(b[i])
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))


@njit(cache=True, inline="always")
def sparse_dot(ia, va, ib, vb):
    # two-pointer merge; matches are accumulated in ascending coordinate order
    la = ia.shape[0]
    lb = ib.shape[0]
    i = 0
    j = 0
    acc = 0.0
    while i < la and j < lb:
        x = ia[i]
        y = ib[j]
        if x == y:
            acc += np.float64(va[i]) * np.float64(vb[j])
        i += x <= y
        j += y <= x
    return acc


@njit(cache=True, inline="always")
def ip_distance(dot):
    return np.float64(np.float32(1.0 - dot))


@njit(cache=True, inline="always")
def fuse(dense_dist, sparse_dist, alpha, gamma):
    return np.float64(np.float32(alpha * dense_dist + (1.0 - alpha) * gamma * sparse_dist))


@njit(cache=True)
def dense_distance(a, b):
    return ip_distance(dense_dot(a, b))


@njit(cache=True)
def sparse_distance(ia, va, ib, vb):
    return ip_distance(sparse_dot(ia, va, ib, vb))


@njit(cache=True, inline="always")
def point_distance(metric, qd, qi, qv, node, dense, indptr, indices, values,
                   alpha, gamma, counters):
    """Distance from a query (dense, sparse indices, sparse values) to a stored node."""
    counters[DENSE_CALLS] += 1
    dd = ip_distance(dense_dot(qd, dense[node]))
    if metric == METRIC_DENSE:
        return dd
    counters[SPARSE_CALLS] += 1
    lo = indptr[node]
    hi = indptr[node + 1]
    sd = ip_distance(sparse_dot(qi, qv, indices[lo:hi], values[lo:hi]))
    return fuse(dd, sd, alpha, gamma)


@njit(cache=True, inline="always")
def sparse_part(qi, qv, node, indptr, indices, values, counters):
    counters[SPARSE_CALLS] += 1
    lo = indptr[node]
    hi = indptr[node + 1]
    return ip_distance(sparse_dot(qi, qv, indices[lo:hi], values[lo:hi]))


@njit(cache=True)
def pair_distances(qd, qi, qv, nodes, metric, dense, indptr, indices, values,
                   alpha, gamma):
    out = np.empty(nodes.shape[0], dtype=np.float64)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    for t in range(nodes.shape[0]):
        out[t] = point_distance(metric, qd, qi, qv, nodes[t], dense, indptr,
                                indices, values, alpha, gamma, counters)
    return out
