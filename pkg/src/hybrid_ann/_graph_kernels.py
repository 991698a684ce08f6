"""Compiled HNSW build, refinement and search loops.

Graph layout (all numpy arrays, packed in a tuple ``G``):

    links0      int32 (n, 2m)   layer-0 adjacency, first deg0[i] entries valid
    deg0        int32 (n,)
    levels      int32 (n,)      top level of each node
    upper_off   int64 (n,)      row of the node's level-1 slot in upper_links, -1 if none
    upper_links int32 (S, m)    one row per (node, level >= 1) pair
    upper_deg   int32 (S,)

Store layout (tuple ``S``): dense float64 (n, N), indptr int64, indices uint32,
values float32.

Queues are binary heaps over (distance, id) keys compared lexicographically, so
the outcome of every search depends only on the keys, never on heap internals.
"""

import numpy as np
from numba import config, njit, prange

# prefer OpenMP: the bundled TBB is often too old and only produces a warning
config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

from hybrid_ann._kernels import (
    DENSE_CALLS,
    EXPANSIONS_STAGE1,
    EXPANSIONS_STAGE2,
    METRIC_DENSE,
    SPARSE_CALLS,
    SPARSE_CALLS_STAGE1,
    METRIC_HYBRID,
    N_COUNTERS,
    fuse,
    point_distance,
    sparse_part,
)

MODE_TWO_STAGE = 0
MODE_NAIVE_HYBRID = 1
MODE_DENSE_ONLY = 2

_NEG_INF = -np.inf


# ---------------------------------------------------------------- heaps


@njit(cache=True, inline="always")
def _lt(k1, i1, k2, i2):
    return k1 < k2 or (k1 == k2 and i1 < i2)


@njit(cache=True)
def _min_push(keys, ids, size, k, i):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if _lt(k, i, keys[parent], ids[parent]):
            keys[pos] = keys[parent]
            ids[pos] = ids[parent]
            pos = parent
        else:
            break
    keys[pos] = k
    ids[pos] = i
    return size + 1


@njit(cache=True)
def _min_sift_down(keys, ids, size, pos):
    k = keys[pos]
    i = ids[pos]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _lt(keys[child + 1], ids[child + 1], keys[child], ids[child]):
            child += 1
        if _lt(keys[child], ids[child], k, i):
            keys[pos] = keys[child]
            ids[pos] = ids[child]
            pos = child
        else:
            break
    keys[pos] = k
    ids[pos] = i


@njit(cache=True)
def _min_pop(keys, ids, size):
    size -= 1
    if size > 0:
        keys[0] = keys[size]
        ids[0] = ids[size]
        _min_sift_down(keys, ids, size, 0)
    return size


@njit(cache=True)
def _max_push(keys, ids, size, k, i):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if _lt(keys[parent], ids[parent], k, i):
            keys[pos] = keys[parent]
            ids[pos] = ids[parent]
            pos = parent
        else:
            break
    keys[pos] = k
    ids[pos] = i
    return size + 1


@njit(cache=True)
def _max_sift_down(keys, ids, size, pos):
    k = keys[pos]
    i = ids[pos]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _lt(keys[child], ids[child], keys[child + 1], ids[child + 1]):
            child += 1
        if _lt(k, i, keys[child], ids[child]):
            keys[pos] = keys[child]
            ids[pos] = ids[child]
            pos = child
        else:
            break
    keys[pos] = k
    ids[pos] = i


@njit(cache=True)
def _max_pop(keys, ids, size):
    size -= 1
    if size > 0:
        keys[0] = keys[size]
        ids[0] = ids[size]
        _max_sift_down(keys, ids, size, 0)
    return size


@njit(cache=True)
def _heapify_min(keys, ids, size):
    for pos in range(size // 2 - 1, -1, -1):
        _min_sift_down(keys, ids, size, pos)


@njit(cache=True)
def _heapify_max(keys, ids, size):
    for pos in range(size // 2 - 1, -1, -1):
        _max_sift_down(keys, ids, size, pos)


@njit(cache=True)
def _sort_pairs(keys, ids, size):
    # insertion sort is fine for queue-sized inputs, and stable under the total order
    for a in range(1, size):
        k = keys[a]
        i = ids[a]
        b = a - 1
        while b >= 0 and _lt(k, i, keys[b], ids[b]):
            keys[b + 1] = keys[b]
            ids[b + 1] = ids[b]
            b -= 1
        keys[b + 1] = k
        ids[b + 1] = i


# ---------------------------------------------------------------- graph access


@njit(cache=True, inline="always")
def _neighbors(G, node, level):
    if level == 0:
        return G[0][node, : G[1][node]]
    slot = G[3][node] + level - 1
    return G[4][slot, : G[5][slot]]


@njit(cache=True, inline="always")
def _set_neighbors(G, node, level, src, count):
    if level == 0:
        row = G[0][node]
        for t in range(count):
            row[t] = src[t]
        G[1][node] = count
    else:
        slot = G[3][node] + level - 1
        row = G[4][slot]
        for t in range(count):
            row[t] = src[t]
        G[5][slot] = count


@njit(cache=True, inline="always")
def _node_dist(metric, a, b, S, alpha, gamma, counters):
    dense, indptr, indices, values = S
    lo = indptr[a]
    hi = indptr[a + 1]
    return point_distance(metric, dense[a], indices[lo:hi], values[lo:hi], b,
                          dense, indptr, indices, values, alpha, gamma, counters)


@njit(cache=True, inline="always")
def _query_dist(metric, qd, qi, qv, node, S, alpha, gamma, counters):
    dense, indptr, indices, values = S
    return point_distance(metric, qd, qi, qv, node, dense, indptr, indices,
                          values, alpha, gamma, counters)


# ---------------------------------------------------------------- search primitives


@njit(cache=True, inline="always")
def stop_threshold(ef, tau):
    # the tiny epsilon keeps exact products such as 100 * (1 - 0.95) == 5 from
    # drifting above the integer update count through float rounding
    return ef * (1.0 - tau) - 1e-9


@njit(cache=True)
def greedy_descent(metric, qd, qi, qv, S, G, cur, curd, level, alpha, gamma, counters):
    while True:
        improved = False
        nbrs = _neighbors(G, cur, level)
        for t in range(nbrs.shape[0]):
            nb = nbrs[t]
            d = _query_dist(metric, qd, qi, qv, nb, S, alpha, gamma, counters)
            if _lt(d, nb, curd, cur):
                cur = nb
                curd = d
                improved = True
        if not improved:
            return cur, curd


@njit(cache=True)
def beam(metric, qd, qi, qv, S, G, level, ef, tau, slot,
         Wk, Wi, wsize, Ck, Ci, csize, visited, tag, alpha, gamma, counters):
    """Best-first search continuing from the queues (W max-heap, C min-heap).

    Stops when the closest candidate is worse than the worst kept result
    (queue full), or when an expansion inserts fewer than ef*(1-tau) results.
    """
    thr = stop_threshold(ef, tau)
    while csize > 0:
        ck = Ck[0]
        ci = Ci[0]
        if wsize >= ef and _lt(Wk[0], Wi[0], ck, ci):
            break
        csize = _min_pop(Ck, Ci, csize)
        counters[slot] += 1
        updates = 0
        nbrs = _neighbors(G, ci, level)
        for t in range(nbrs.shape[0]):
            nb = nbrs[t]
            if visited[nb] == tag:
                continue
            visited[nb] = tag
            d = _query_dist(metric, qd, qi, qv, nb, S, alpha, gamma, counters)
            if wsize < ef or _lt(d, nb, Wk[0], Wi[0]):
                csize = _min_push(Ck, Ci, csize, d, nb)
                wsize = _max_push(Wk, Wi, wsize, d, nb)
                if wsize > ef:
                    wsize = _max_pop(Wk, Wi, wsize)
                updates += 1
        if wsize >= ef and updates < thr:
            break
    return wsize, csize


@njit(cache=True)
def transition(qi, qv, S, Wk, Wi, wsize, Ck, Ci, csize, memo, memo_tag, tag,
               alpha, gamma, counters):
    """Re-score both queues with the hybrid distance; returns the best W entry."""
    dense, indptr, indices, values = S
    for t in range(wsize):
        node = Wi[t]
        sd = sparse_part(qi, qv, node, indptr, indices, values, counters)
        h = fuse(Wk[t], sd, alpha, gamma)
        memo[node] = h
        memo_tag[node] = tag
        Wk[t] = h
    for t in range(csize):
        node = Ci[t]
        if memo_tag[node] == tag:
            Ck[t] = memo[node]
        else:
            sd = sparse_part(qi, qv, node, indptr, indices, values, counters)
            h = fuse(Ck[t], sd, alpha, gamma)
            memo[node] = h
            memo_tag[node] = tag
            Ck[t] = h
    _heapify_max(Wk, Wi, wsize)
    _heapify_min(Ck, Ci, csize)
    entry = -1
    best = np.inf
    for t in range(wsize):
        if entry < 0 or _lt(Wk[t], Wi[t], best, entry):
            best = Wk[t]
            entry = Wi[t]
    return entry


@njit(cache=True)
def search_one(qd, qi, qv, S, G, entry, max_level, mode, sef, k, tau_dense,
               tau_hybrid, alpha, gamma, fresh_stage2, Wk, Wi, Ck, Ci, visited,
               memo, memo_tag, tag, counters, out_ids, out_d, stage1_ids):
    upper_metric = METRIC_HYBRID if mode == MODE_NAIVE_HYBRID else METRIC_DENSE
    cur = entry
    curd = _query_dist(upper_metric, qd, qi, qv, cur, S, alpha, gamma, counters)
    for level in range(max_level, 0, -1):
        cur, curd = greedy_descent(upper_metric, qd, qi, qv, S, G, cur, curd,
                                   level, alpha, gamma, counters)
    visited[cur] = tag
    wsize = _max_push(Wk, Wi, 0, curd, cur)
    csize = _min_push(Ck, Ci, 0, curd, cur)
    if mode == MODE_NAIVE_HYBRID:
        wsize, csize = beam(METRIC_HYBRID, qd, qi, qv, S, G, 0, sef, tau_hybrid,
                            EXPANSIONS_STAGE1, Wk, Wi, wsize, Ck, Ci, csize,
                            visited, tag, alpha, gamma, counters)
        counters[SPARSE_CALLS_STAGE1] = counters[SPARSE_CALLS]
    else:
        wsize, csize = beam(METRIC_DENSE, qd, qi, qv, S, G, 0, sef, tau_dense,
                            EXPANSIONS_STAGE1, Wk, Wi, wsize, Ck, Ci, csize,
                            visited, tag, alpha, gamma, counters)
        counters[SPARSE_CALLS_STAGE1] = counters[SPARSE_CALLS]
        tk = Wk[:wsize].copy()
        ti = Wi[:wsize].copy()
        _sort_pairs(tk, ti, wsize)
        for t in range(wsize):
            stage1_ids[t] = ti[t]
        if mode == MODE_TWO_STAGE:
            ep = transition(qi, qv, S, Wk, Wi, wsize, Ck, Ci, csize, memo,
                            memo_tag, tag, alpha, gamma, counters)
            epd = memo[ep]
            metric2 = METRIC_HYBRID
        else:
            ep = ti[0]
            epd = tk[0]
            metric2 = METRIC_DENSE
        if fresh_stage2:
            # restart from the entry alone; negative tags give a clean visited set
            tag = -tag
            visited[ep] = tag
            wsize = _max_push(Wk, Wi, 0, epd, ep)
            csize = _min_push(Ck, Ci, 0, epd, ep)
        wsize, csize = beam(metric2, qd, qi, qv, S, G, 0, sef, tau_hybrid,
                            EXPANSIONS_STAGE2, Wk, Wi, wsize, Ck, Ci, csize,
                            visited, tag, alpha, gamma, counters)
    _sort_pairs(Wk, Wi, wsize)
    n_out = min(k, wsize)
    for t in range(n_out):
        out_ids[t] = Wi[t]
        out_d[t] = Wk[t]
    return n_out


@njit(cache=True)
def _search_range(lo, hi, q_dense, q_indptr, q_indices, q_values, S, G, entry,
                  max_level, mode, sef, k, tau_dense, tau_hybrid, alpha, gamma,
                  fresh_stage2, Wk, Wi, Ck, Ci, visited, memo, memo_tag, tags,
                  counters, out_ids, out_d, out_n, stage1_ids):
    for q in range(lo, hi):
        tags[0] += 1
        tag = tags[0]
        a = q_indptr[q]
        b = q_indptr[q + 1]
        out_n[q] = search_one(q_dense[q], q_indices[a:b], q_values[a:b], S, G,
                              entry, max_level, mode, sef, k, tau_dense,
                              tau_hybrid, alpha, gamma, fresh_stage2, Wk, Wi,
                              Ck, Ci, visited,
                              memo, memo_tag, tag, counters[q], out_ids[q],
                              out_d[q], stage1_ids[q])


@njit(cache=True)
def search_batch(q_dense, q_indptr, q_indices, q_values, S, G, entry, max_level,
                 mode, sef, k, tau_dense, tau_hybrid, alpha, gamma, fresh_stage2,
                 record_stage1):
    nq = q_dense.shape[0]
    n = S[0].shape[0]
    out_ids = np.full((nq, k), -1, dtype=np.int32)
    out_d = np.full((nq, k), np.inf, dtype=np.float64)
    out_n = np.zeros(nq, dtype=np.int32)
    counters = np.zeros((nq, N_COUNTERS), dtype=np.int64)
    s1w = sef if record_stage1 else 0
    stage1_ids = np.full((nq, s1w), -1, dtype=np.int32)
    scratch = np.full((nq, sef), -1, dtype=np.int32) if not record_stage1 else stage1_ids
    Wk = np.empty(sef + 2, dtype=np.float64)
    Wi = np.empty(sef + 2, dtype=np.int32)
    Ck = np.empty(n + 2, dtype=np.float64)
    Ci = np.empty(n + 2, dtype=np.int32)
    visited = np.zeros(n, dtype=np.int64)
    memo = np.zeros(n, dtype=np.float64)
    memo_tag = np.zeros(n, dtype=np.int64)
    tags = np.zeros(1, dtype=np.int64)
    _search_range(0, nq, q_dense, q_indptr, q_indices, q_values, S, G, entry,
                  max_level, mode, sef, k, tau_dense, tau_hybrid, alpha, gamma,
                  fresh_stage2, Wk, Wi, Ck, Ci, visited, memo, memo_tag, tags,
                  counters, out_ids, out_d, out_n, scratch)
    return out_ids, out_d, out_n, counters, stage1_ids


@njit(cache=True, parallel=True)
def search_batch_parallel(q_dense, q_indptr, q_indices, q_values, S, G, entry,
                          max_level, mode, sef, k, tau_dense, tau_hybrid, alpha,
                          gamma, fresh_stage2, n_chunks):
    nq = q_dense.shape[0]
    n = S[0].shape[0]
    out_ids = np.full((nq, k), -1, dtype=np.int32)
    out_d = np.full((nq, k), np.inf, dtype=np.float64)
    out_n = np.zeros(nq, dtype=np.int32)
    counters = np.zeros((nq, N_COUNTERS), dtype=np.int64)
    scratch = np.full((nq, sef), -1, dtype=np.int32)
    step = (nq + n_chunks - 1) // n_chunks
    for c in prange(n_chunks):
        lo = c * step
        hi = min(nq, lo + step)
        if lo >= hi:
            continue
        Wk = np.empty(sef + 2, dtype=np.float64)
        Wi = np.empty(sef + 2, dtype=np.int32)
        Ck = np.empty(n + 2, dtype=np.float64)
        Ci = np.empty(n + 2, dtype=np.int32)
        visited = np.zeros(n, dtype=np.int64)
        memo = np.zeros(n, dtype=np.float64)
        memo_tag = np.zeros(n, dtype=np.int64)
        tags = np.zeros(1, dtype=np.int64)
        _search_range(lo, hi, q_dense, q_indptr, q_indices, q_values, S, G,
                      entry, max_level, mode, sef, k, tau_dense, tau_hybrid,
                      alpha, gamma, fresh_stage2, Wk, Wi, Ck, Ci, visited, memo,
                      memo_tag, tags, counters, out_ids, out_d, out_n, scratch)
    return out_ids, out_d, out_n, counters


# ---------------------------------------------------------------- construction


@njit(cache=True)
def heuristic_select(base_d, cand_ids, count, limit, metric, S, alpha, gamma,
                     counters, out, rejected):
    """Diversity rule: keep a candidate iff it is strictly closer to the base
    than to every neighbour kept so far; backfill with the nearest rejected.

    Candidates must be sorted ascending by (distance to base, id).
    """
    kept = 0
    n_rej = 0
    for t in range(count):
        if kept >= limit:
            break
        c = cand_ids[t]
        good = True
        for r in range(kept):
            d = _node_dist(metric, c, out[r], S, alpha, gamma, counters)
            if not (base_d[t] < d):
                good = False
                break
        if good:
            out[kept] = c
            kept += 1
        else:
            rejected[n_rej] = c
            n_rej += 1
    t = 0
    while kept < limit and t < n_rej:
        out[kept] = rejected[t]
        kept += 1
        t += 1
    return kept


@njit(cache=True)
def _add_link(G, s, p, level, cap, metric, S, alpha, gamma, counters, ck, ci, sel, rej):
    nbrs = _neighbors(G, s, level)
    deg = nbrs.shape[0]
    for t in range(deg):
        if nbrs[t] == p:
            return
    if deg < cap:
        if level == 0:
            G[0][s, deg] = p
            G[1][s] = deg + 1
        else:
            slot = G[3][s] + level - 1
            G[4][slot, deg] = p
            G[5][slot] = deg + 1
        return
    for t in range(deg):
        ci[t] = nbrs[t]
        ck[t] = _node_dist(metric, s, nbrs[t], S, alpha, gamma, counters)
    ci[deg] = p
    ck[deg] = _node_dist(metric, s, p, S, alpha, gamma, counters)
    _sort_pairs(ck, ci, deg + 1)
    kept = heuristic_select(ck, ci, deg + 1, cap, metric, S, alpha, gamma,
                            counters, sel, rej)
    _set_neighbors(G, s, level, sel, kept)


@njit(cache=True)
def _search_layer_for_node(metric, p, S, G, ep, epd, level, ef, Wk, Wi, Ck, Ci,
                           visited, tag, alpha, gamma, counters):
    dense, indptr, indices, values = S
    lo = indptr[p]
    hi = indptr[p + 1]
    visited[ep] = tag
    wsize = _max_push(Wk, Wi, 0, epd, ep)
    csize = _min_push(Ck, Ci, 0, epd, ep)
    wsize, csize = beam(metric, dense[p], indices[lo:hi], values[lo:hi], S, G,
                        level, ef, 1.0, EXPANSIONS_STAGE1, Wk, Wi, wsize, Ck, Ci,
                        csize, visited, tag, alpha, gamma, counters)
    _sort_pairs(Wk, Wi, wsize)
    return wsize


@njit(cache=True)
def _plan_insert(p, metric, S, G, entry, max_level, m, ef, alpha, gamma, Wk, Wi,
                 Ck, Ci, visited, tags, counters, sel_buf, sel_cnt, rej):
    """Find neighbour selections of node p for each of its levels (read-only)."""
    dense, indptr, indices, values = S
    lo = indptr[p]
    hi = indptr[p + 1]
    qd = dense[p]
    qi = indices[lo:hi]
    qv = values[lo:hi]
    top = G[2][p]
    cur = entry
    curd = _query_dist(metric, qd, qi, qv, cur, S, alpha, gamma, counters)
    for level in range(max_level, top, -1):
        cur, curd = greedy_descent(metric, qd, qi, qv, S, G, cur, curd, level,
                                   alpha, gamma, counters)
    for level in range(min(top, max_level), -1, -1):
        tags[0] += 1
        wsize = _search_layer_for_node(metric, p, S, G, cur, curd, level, ef,
                                       Wk, Wi, Ck, Ci, visited, tags[0], alpha,
                                       gamma, counters)
        sel_cnt[level] = heuristic_select(Wk, Wi, wsize, m, metric, S, alpha,
                                          gamma, counters, sel_buf[level], rej)
        cur = Wi[0]
        curd = Wk[0]


@njit(cache=True)
def _commit_insert(p, metric, S, G, max_level, m, alpha, gamma, counters,
                   sel_buf, sel_cnt, ck, ci, sel, rej):
    top = G[2][p]
    for level in range(min(top, max_level), -1, -1):
        cnt = sel_cnt[level]
        _set_neighbors(G, p, level, sel_buf[level], cnt)
        cap = 2 * m if level == 0 else m
        for t in range(cnt):
            _add_link(G, sel_buf[level][t], p, level, cap, metric, S, alpha,
                      gamma, counters, ck, ci, sel, rej)


@njit(cache=True)
def build_sequential(S, G, m, ef, metric, alpha, gamma, counters, start, entry,
                     max_level):
    """Insert nodes start..n-1 one at a time, in ascending id order."""
    n = S[0].shape[0]
    levels = G[2]
    Wk = np.empty(ef + 2, dtype=np.float64)
    Wi = np.empty(ef + 2, dtype=np.int32)
    Ck = np.empty(n + 2, dtype=np.float64)
    Ci = np.empty(n + 2, dtype=np.int32)
    visited = np.zeros(n, dtype=np.int64)
    tags = np.zeros(1, dtype=np.int64)
    top_all = 0
    for p in range(n):
        top_all = max(top_all, levels[p])
    sel_buf = np.empty((top_all + 1, 2 * m + 1), dtype=np.int32)
    sel_cnt = np.zeros(top_all + 1, dtype=np.int32)
    ck = np.empty(2 * m + 2, dtype=np.float64)
    ci = np.empty(2 * m + 2, dtype=np.int32)
    sel = np.empty(2 * m + 2, dtype=np.int32)
    rej = np.empty(max(ef, 2 * m) + 2, dtype=np.int32)
    if entry < 0:
        entry = start
        max_level = levels[start]
        start += 1
    for p in range(start, n):
        _plan_insert(p, metric, S, G, entry, max_level, m, ef, alpha, gamma, Wk,
                     Wi, Ck, Ci, visited, tags, counters, sel_buf, sel_cnt, rej)
        _commit_insert(p, metric, S, G, max_level, m, alpha, gamma, counters,
                       sel_buf, sel_cnt, ck, ci, sel, rej)
        if levels[p] > max_level:
            max_level = levels[p]
            entry = p
    return entry, max_level


@njit(cache=True, parallel=True)
def _plan_batch(lo, hi, metric, S, G, entry, max_level, m, ef, alpha, gamma,
                n_threads, sel_all, cnt_all, counters_t):
    n = S[0].shape[0]
    top_all = sel_all.shape[1] - 1
    for t in prange(n_threads):
        Wk = np.empty(ef + 2, dtype=np.float64)
        Wi = np.empty(ef + 2, dtype=np.int32)
        Ck = np.empty(n + 2, dtype=np.float64)
        Ci = np.empty(n + 2, dtype=np.int32)
        visited = np.zeros(n, dtype=np.int64)
        tags = np.zeros(1, dtype=np.int64)
        rej = np.empty(max(ef, 2 * m) + 2, dtype=np.int32)
        for p in range(lo + t, hi, n_threads):
            _plan_insert(p, metric, S, G, entry, max_level, m, ef, alpha, gamma,
                         Wk, Wi, Ck, Ci, visited, tags, counters_t[t],
                         sel_all[p - lo], cnt_all[p - lo], rej)
    return top_all


@njit(cache=True)
def _commit_batch(lo, hi, metric, S, G, entry, max_level, m, alpha, gamma,
                  counters, sel_all, cnt_all):
    ck = np.empty(2 * m + 2, dtype=np.float64)
    ci = np.empty(2 * m + 2, dtype=np.int32)
    sel = np.empty(2 * m + 2, dtype=np.int32)
    rej = np.empty(2 * m + 2, dtype=np.int32)
    levels = G[2]
    for p in range(lo, hi):
        _commit_insert(p, metric, S, G, max_level, m, alpha, gamma, counters,
                       sel_all[p - lo], cnt_all[p - lo], ck, ci, sel, rej)
    for p in range(lo, hi):
        if levels[p] > max_level:
            max_level = levels[p]
            entry = p
    return entry, max_level


# ---------------------------------------------------------------- refinement


@njit(cache=True)
def _refine_node(d, S, G, ef, limit, alpha, gamma, Wk, Wi, Ck, Ci, visited, tag,
                 counters, out, rej):
    dense, indptr, indices, values = S
    lo = indptr[d]
    hi = indptr[d + 1]
    visited[d] = tag
    csize = _min_push(Ck, Ci, 0, _NEG_INF, d)
    wsize, csize = beam(METRIC_HYBRID, dense[d], indices[lo:hi], values[lo:hi],
                        S, G, 0, ef, 1.0, EXPANSIONS_STAGE2, Wk, Wi, 0, Ck, Ci,
                        csize, visited, tag, alpha, gamma, counters)
    _sort_pairs(Wk, Wi, wsize)
    return heuristic_select(Wk, Wi, wsize, limit, METRIC_HYBRID, S, alpha, gamma,
                            counters, out, rej)


@njit(cache=True, parallel=True)
def refine_plan(S, G, ef, limit, alpha, gamma, n_threads, new_links, new_deg,
                counters_t):
    """Hybrid search from every node over the frozen stage-1 layer 0."""
    n = S[0].shape[0]
    for t in prange(n_threads):
        Wk = np.empty(ef + 2, dtype=np.float64)
        Wi = np.empty(ef + 2, dtype=np.int32)
        Ck = np.empty(n + 2, dtype=np.float64)
        Ci = np.empty(n + 2, dtype=np.int32)
        visited = np.zeros(n, dtype=np.int64)
        rej = np.empty(ef + 2, dtype=np.int32)
        tag = 0
        for d in range(t, n, n_threads):
            tag += 1
            new_deg[d] = _refine_node(d, S, G, ef, limit, alpha, gamma, Wk, Wi,
                                      Ck, Ci, visited, tag, counters_t[t],
                                      new_links[d], rej)


@njit(cache=True)
def refine_plan_sequential(S, G, ef, limit, alpha, gamma, new_links, new_deg,
                           counters):
    n = S[0].shape[0]
    Wk = np.empty(ef + 2, dtype=np.float64)
    Wi = np.empty(ef + 2, dtype=np.int32)
    Ck = np.empty(n + 2, dtype=np.float64)
    Ci = np.empty(n + 2, dtype=np.int32)
    visited = np.zeros(n, dtype=np.int64)
    rej = np.empty(ef + 2, dtype=np.int32)
    for d in range(n):
        new_deg[d] = _refine_node(d, S, G, ef, limit, alpha, gamma, Wk, Wi, Ck,
                                  Ci, visited, d + 1, counters, new_links[d], rej)


@njit(cache=True)
def _reverse_requests(new_links, new_deg):
    """Reverse-link requests grouped by target, each group in ascending source id."""
    n = new_deg.shape[0]
    ptr = np.zeros(n + 1, dtype=np.int64)
    for d in range(n):
        for t in range(new_deg[d]):
            ptr[new_links[d, t] + 1] += 1
    for s in range(n):
        ptr[s + 1] += ptr[s]
    fill = ptr[:n].copy()
    req = np.empty(ptr[n], dtype=np.int32)
    for d in range(n):
        for t in range(new_deg[d]):
            s = new_links[d, t]
            req[fill[s]] = d
            fill[s] += 1
    return ptr, req


@njit(cache=True)
def _commit_target(s, req, lo, hi, G, cap, S, alpha, gamma, counters,
                   node_of, ds, mat, lst, lslot, cs, out, rej, chosen):
    """Apply the reverse-link requests of one target in arrival order.

    Same result as one _add_link call per request; distances between members of
    the target's list are kept across re-prunes. A node dropped from the list
    is never requested again, so cap + 1 slots hold every live member.
    """
    deg = G[1][s]
    for k in range(cap + 1):
        node_of[k] = -1
    for t in range(deg):
        lst[t] = G[0][s, t]
        lslot[t] = t
        node_of[t] = lst[t]
        ds[t] = np.nan
        for j in range(cap + 1):
            mat[t, j] = np.nan
            mat[j, t] = np.nan
    for r in range(lo, hi):
        p = req[r]
        dup = False
        for t in range(deg):
            if lst[t] == p:
                dup = True
                break
        if dup:
            continue
        k = 0
        while node_of[k] >= 0:
            k += 1
        node_of[k] = p
        ds[k] = np.nan
        for j in range(cap + 1):
            mat[k, j] = np.nan
            mat[j, k] = np.nan
        if deg < cap:
            lst[deg] = p
            lslot[deg] = k
            deg += 1
            continue
        size = deg + 1
        for t in range(deg):
            cs[t] = lslot[t]
        cs[deg] = k
        for t in range(size):
            c = cs[t]
            if np.isnan(ds[c]):
                ds[c] = _node_dist(METRIC_HYBRID, s, node_of[c], S, alpha, gamma, counters)
        # sort slots by (distance to s, node id)
        for a in range(1, size):
            c = cs[a]
            b = a - 1
            while b >= 0 and _lt(ds[c], node_of[c], ds[cs[b]], node_of[cs[b]]):
                cs[b + 1] = cs[b]
                b -= 1
            cs[b + 1] = c
        kept = 0
        n_rej = 0
        for t in range(size):
            if kept >= cap:
                break
            c = cs[t]
            good = True
            for q in range(kept):
                o = out[q]
                d = mat[c, o]
                if np.isnan(d):
                    d = _node_dist(METRIC_HYBRID, node_of[c], node_of[o], S, alpha, gamma,
                                   counters)
                    mat[c, o] = d
                    mat[o, c] = d
                if not (ds[c] < d):
                    good = False
                    break
            if good:
                out[kept] = c
                kept += 1
            else:
                rej[n_rej] = c
                n_rej += 1
        t = 0
        while kept < cap and t < n_rej:
            out[kept] = rej[t]
            kept += 1
            t += 1
        for t in range(size):
            chosen[cs[t]] = False
        for t in range(kept):
            chosen[out[t]] = True
            lst[t] = node_of[out[t]]
            lslot[t] = out[t]
        for t in range(size):
            if not chosen[cs[t]]:
                node_of[cs[t]] = -1
        deg = kept
    _set_neighbors(G, s, 0, lst, deg)


@njit(cache=True)
def _commit_all(S, G, cap, alpha, gamma, new_links, new_deg, counters):
    n = new_deg.shape[0]
    for d in range(n):
        _set_neighbors(G, d, 0, new_links[d], new_deg[d])
    ptr, req = _reverse_requests(new_links, new_deg)
    node_of = np.empty(cap + 1, dtype=np.int64)
    ds = np.empty(cap + 1, dtype=np.float64)
    mat = np.empty((cap + 1, cap + 1), dtype=np.float64)
    lst = np.empty(cap + 1, dtype=np.int32)
    lslot = np.empty(cap + 1, dtype=np.int64)
    cs = np.empty(cap + 1, dtype=np.int64)
    out = np.empty(cap + 1, dtype=np.int64)
    rej = np.empty(cap + 1, dtype=np.int64)
    chosen = np.zeros(cap + 1, dtype=np.bool_)
    for s in range(n):
        if ptr[s + 1] > ptr[s]:
            _commit_target(s, req, ptr[s], ptr[s + 1], G, cap, S, alpha, gamma, counters,
                           node_of, ds, mat, lst, lslot, cs, out, rej, chosen)


def refine_commit(S, G, m, alpha, gamma, new_links, new_deg, counters):
    """Install the refined forward lists, then add reverse edges in source-id order.

    Each reverse link only reads and writes its target's list, so requests are
    grouped by target (keeping their order) and applied with a per-target
    distance cache; the graph equals one _add_link call per (source, target).
    """
    _commit_all(S, G, 2 * m, alpha, gamma, new_links, new_deg, counters)