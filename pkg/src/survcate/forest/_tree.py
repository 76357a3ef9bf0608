"""Compiled tree growing and forest prediction kernels.

Trees are stored as flat node arrays.  ``left[node] < 0`` marks a leaf whose
members are ``members[leaf_start[node]:leaf_start[node] + leaf_count[node]]``.
All sample indices inside this module refer to the canonical row order.
"""
import numpy as np
from numba import njit

SURVIVAL = 0
REGRESSION = 1


@njit(cache=True)
def _fen_add(tree, i, v):
    n = tree.size - 1
    while i <= n:
        tree[i] += v
        i += i & (-i)


@njit(cache=True)
def _fen_sum(tree, i):
    s = 0.0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@njit(cache=True)
def logrank_node_stats(U, D, rows):
    """Per-row terms of the log-rank statistic for the node holding ``rows``.

    With node event times ``t_k``, at-risk counts ``Y_k`` and deaths ``d_k``,
    a row at risk up to time rank ``r`` contributes ``D - H(r)`` to the
    numerator and ``A(r)`` to the linear part of the variance, where ``H`` and
    ``A`` are cumulative sums of ``d/Y`` and ``v/Y``; ``C`` cumulates ``v/Y^2``
    for the quadratic part.  ``r = -1`` means never at risk at an event time.
    """
    m = rows.size
    n_ev = 0
    for j in range(m):
        if D[rows[j]]:
            n_ev += 1
    rank = np.full(m, -1, dtype=np.int64)
    num_term = np.zeros(m)
    lin_term = np.zeros(m)
    if n_ev == 0:
        return n_ev, rank, num_term, lin_term, np.zeros(1)
    ev = np.empty(n_ev)
    q = 0
    for j in range(m):
        if D[rows[j]]:
            ev[q] = U[rows[j]]
            q += 1
    times = np.unique(ev)
    K = times.size
    count_at = np.zeros(K)
    deaths = np.zeros(K)
    for j in range(m):
        i = rows[j]
        r = np.searchsorted(times, U[i], side="right") - 1
        rank[j] = r
        if r >= 0:
            count_at[r] += 1.0
            if D[i]:
                deaths[r] += 1.0
    at_risk = np.empty(K)
    acc = 0.0
    for k in range(K - 1, -1, -1):
        acc += count_at[k]
        at_risk[k] = acc
    cum_h = np.empty(K)
    cum_a = np.empty(K)
    cum_c = np.empty(K)
    h = 0.0
    a = 0.0
    c = 0.0
    for k in range(K):
        y = at_risk[k]
        h += deaths[k] / y
        v = deaths[k] * (y - deaths[k]) / (y - 1.0) if y > 1.0 else 0.0
        a += v / y
        c += v / (y * y)
        cum_h[k] = h
        cum_a[k] = a
        cum_c[k] = c
    for j in range(m):
        r = rank[j]
        if r >= 0:
            num_term[j] = D[rows[j]] - cum_h[r]
            lin_term[j] = cum_a[r]
    return n_ev, rank, num_term, lin_term, cum_c


@njit(cache=True)
def logrank_sweep(xs, D, rows, n_ev, rank, num_term, lin_term, cum_c, min_child, cnt, csum):
    """Scores of every admissible split along node values ``xs`` (see ``logrank_scan``)."""
    m = rows.size
    scores = np.full(m, -1.0)
    order = np.argsort(xs, kind="mergesort")
    if n_ev == 0:
        return order, scores
    cnt[:] = 0.0
    csum[:] = 0.0
    num = 0.0
    lin = 0.0
    quad = 0.0
    n_left = 0
    ev_left = 0
    n_ranked = 0
    for pos in range(m - 1):
        j = order[pos]
        r = rank[j]
        if r >= 0:
            # sum over event times k <= r of C_k * Y_left(k), before adding this row
            s = cum_c[r] * (n_ranked - _fen_sum(cnt, r)) + _fen_sum(csum, r)
            quad += 2.0 * s + cum_c[r]
            _fen_add(cnt, r + 1, 1.0)
            _fen_add(csum, r + 1, cum_c[r])
            n_ranked += 1
            num += num_term[j]
            lin += lin_term[j]
        n_left += 1
        ev_left += D[rows[j]]
        if xs[order[pos + 1]] == xs[j]:
            continue
        if n_left < min_child or m - n_left < min_child:
            continue
        if ev_left < 1 or n_ev - ev_left < 1:
            continue
        var = lin - quad
        if var > 1e-12:
            scores[pos] = num * num / var
    return order, scores


@njit(cache=True)
def logrank_scan(x, U, D, rows, min_child):
    """Log-rank score of every admissible split of ``rows`` along ``x``.

    Returns ``(order, scores)``: ``scores[j]`` belongs to the split after the
    ``j``-th smallest value (``-1`` when the split is not allowed).
    """
    n_ev, rank, num_term, lin_term, cum_c = logrank_node_stats(U, D, rows)
    K = cum_c.size
    return logrank_sweep(x[rows], D, rows, n_ev, rank, num_term, lin_term, cum_c, min_child,
                         np.zeros(K + 1), np.zeros(K + 1))


@njit(cache=True)
def variance_scan(xs, y, w, rows, min_child):
    """Weighted between-child sum of squares for every admissible split along node values ``xs``."""
    m = rows.size
    scores = np.full(m, -1.0)
    order = np.argsort(xs, kind="mergesort")
    s_tot = 0.0
    w_tot = 0.0
    for j in range(m):
        s_tot += w[rows[j]] * y[rows[j]]
        w_tot += w[rows[j]]
    base = s_tot * s_tot / w_tot if w_tot > 0 else 0.0
    s_l = 0.0
    w_l = 0.0
    for pos in range(m - 1):
        i = rows[order[pos]]
        s_l += w[i] * y[i]
        w_l += w[i]
        if xs[order[pos + 1]] == xs[order[pos]]:
            continue
        n_left = pos + 1
        if n_left < min_child or m - n_left < min_child:
            continue
        w_r = w_tot - w_l
        if w_l <= 0.0 or w_r <= 0.0:
            continue
        s_r = s_tot - s_l
        gain = s_l * s_l / w_l + s_r * s_r / w_r - base
        if gain > 1e-12 * max(abs(base), 1e-300):
            scores[pos] = gain
    return order, scores


@njit(cache=True)
def grow_tree(kind, X, U, D, y, w, n_sub, mtry, min_node, alpha, honesty, seed):
    """Grow one tree on a random subsample of the canonical rows.

    Returns node arrays, leaf member positions and the in-bag positions.
    """
    np.random.seed(seed)
    n, d = X.shape
    perm = np.random.permutation(n)
    sub = np.sort(perm[:n_sub])
    if honesty:
        n_grow = n_sub // 2
        shuffled = np.random.permutation(sub)
        idx = np.sort(shuffled[:n_grow])
        fill = np.sort(shuffled[n_grow:])
    else:
        idx = sub.copy()
        fill = sub[:0]
    cap = 2 * idx.size + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    leaf_start = np.zeros(cap, dtype=np.int64)
    leaf_count = np.zeros(cap, dtype=np.int64)
    node_lo = np.zeros(cap, dtype=np.int64)
    node_hi = np.zeros(cap, dtype=np.int64)
    n_nodes = 1
    node_lo[0] = 0
    node_hi[0] = idx.size
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    top = 1
    buf = np.empty(idx.size, dtype=np.int64)
    while top > 0:
        top -= 1
        node = stack[top]
        lo = node_lo[node]
        hi = node_hi[node]
        m = hi - lo
        min_child = max(min_node, int(np.ceil(alpha * m)))
        best_f = -1
        best_thr = 0.0
        best_score = 0.0
        if m >= 2 * min_child:
            rows = idx[lo:hi]
            feats = np.random.permutation(d)[:mtry]
            if kind == SURVIVAL:
                n_ev, rank, num_term, lin_term, cum_c = logrank_node_stats(U, D, rows)
                cnt = np.zeros(cum_c.size + 1)
                csum = np.zeros(cum_c.size + 1)
            xs = np.empty(m)
            for f in feats:
                for j in range(m):
                    xs[j] = X[rows[j], f]
                if kind == SURVIVAL:
                    order, scores = logrank_sweep(xs, D, rows, n_ev, rank, num_term, lin_term,
                                                  cum_c, min_child, cnt, csum)
                else:
                    order, scores = variance_scan(xs, y, w, rows, min_child)
                for pos in range(m - 1):
                    if scores[pos] > best_score:
                        best_score = scores[pos]
                        best_f = f
                        v0 = xs[order[pos]]
                        v1 = xs[order[pos + 1]]
                        thr = 0.5 * (v0 + v1)
                        if thr >= v1:
                            thr = v0
                        best_thr = thr
        if best_f < 0:
            leaf_start[node] = lo
            leaf_count[node] = m
            continue
        # stable partition of the node's rows
        nl = 0
        for j in range(lo, hi):
            if X[idx[j], best_f] <= best_thr:
                buf[nl] = idx[j]
                nl += 1
        nr = nl
        for j in range(lo, hi):
            if X[idx[j], best_f] > best_thr:
                buf[nr] = idx[j]
                nr += 1
        idx[lo:hi] = buf[:m]
        feature[node] = best_f
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        node_lo[lc] = lo
        node_hi[lc] = lo + nl
        node_lo[rc] = lo + nl
        node_hi[rc] = hi
        stack[top] = rc
        stack[top + 1] = lc
        top += 2
    if honesty:
        members, leaf_start, leaf_count = _populate(X, fill, feature[:n_nodes], threshold[:n_nodes],
                                                    left[:n_nodes], right[:n_nodes])
    else:
        members = idx
        leaf_start = leaf_start[:n_nodes]
        leaf_count = leaf_count[:n_nodes]
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            leaf_start, leaf_count, members, sub)


@njit(cache=True)
def _descend(feature, threshold, left, right, root, x):
    node = root
    while left[node] >= 0:
        if x[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True)
def _populate(X, fill, feature, threshold, left, right):
    n_nodes = feature.size
    leaf = np.empty(fill.size, dtype=np.int64)
    count = np.zeros(n_nodes, dtype=np.int64)
    for j in range(fill.size):
        leaf[j] = _descend(feature, threshold, left, right, 0, X[fill[j]])
        count[leaf[j]] += 1
    start = np.zeros(n_nodes, dtype=np.int64)
    acc = 0
    for k in range(n_nodes):
        start[k] = acc
        acc += count[k]
    fillpos = start.copy()
    members = np.empty(fill.size, dtype=np.int64)
    for j in range(fill.size):
        members[fillpos[leaf[j]]] = fill[j]
        fillpos[leaf[j]] += 1
    return members, start, count


@njit(cache=True)
def accumulate_weights(feature, threshold, left, right, roots, leaf_start, leaf_count,
                       members, inbag, x, oob_for, out):
    """Add ``1 / |leaf|`` for each member of the query's leaf in every contributing tree.

    ``out`` is zeroed first; returns the number of contributing trees.
    """
    out[:] = 0.0
    used = 0
    for b in range(roots.size):
        if oob_for >= 0 and inbag[b, oob_for]:
            continue
        leaf = _descend(feature, threshold, left, right, roots[b], x)
        cnt = leaf_count[leaf]
        if cnt == 0:
            continue
        inv = 1.0 / cnt
        s = leaf_start[leaf]
        for j in range(s, s + cnt):
            out[members[j]] += inv
        used += 1
    return used


@njit(cache=True)
def predict_survival_batch(feature, threshold, left, right, roots, leaf_start, leaf_count,
                           members, inbag, Xq, oob_index, time_rank, sorted_times,
                           sorted_event, t_eval):
    """Weighted Nelson-Aalen survival at ``t_eval[q]`` for each query row ``q``.

    Training points are addressed by their position in time order through
    ``time_rank``; returns ``(survival, trees_used)``.
    """
    nq = Xq.shape[0]
    n = sorted_times.size
    out = np.empty(nq)
    used_out = np.empty(nq, dtype=np.int64)
    alpha = np.zeros(n)
    for q in range(nq):
        stop = np.searchsorted(sorted_times, t_eval[q], side="right")
        alpha[:] = 0.0
        used = 0
        o = oob_index[q]
        for b in range(roots.size):
            if o >= 0 and inbag[b, o]:
                continue
            leaf = _descend(feature, threshold, left, right, roots[b], Xq[q])
            cnt = leaf_count[leaf]
            if cnt == 0:
                continue
            inv = 1.0 / cnt
            s = leaf_start[leaf]
            for j in range(s, s + cnt):
                alpha[time_rank[members[j]]] += inv
            used += 1
        used_out[q] = used
        if used == 0:
            out[q] = np.nan
            continue
        total = 0.0
        for j in range(n):
            total += alpha[j]
        h = 0.0
        before = 0.0
        j = 0
        while j < stop:
            k = j
            dw = 0.0
            gw = 0.0
            while k < stop and sorted_times[k] == sorted_times[j]:
                gw += alpha[k]
                if sorted_event[k]:
                    dw += alpha[k]
                k += 1
            if dw > 0.0:
                h += dw / (total - before)
            before += gw
            j = k
        out[q] = np.exp(-h)
    return out, used_out


@njit(cache=True)
def predict_regression_batch(feature, threshold, left, right, roots, leaf_start, leaf_count,
                             members, inbag, Xq, oob_index, y, w):
    nq = Xq.shape[0]
    out = np.empty(nq)
    used_out = np.empty(nq, dtype=np.int64)
    for q in range(nq):
        num = 0.0
        den = 0.0
        plain_num = 0.0
        used = 0
        o = oob_index[q]
        for b in range(roots.size):
            if o >= 0 and inbag[b, o]:
                continue
            leaf = _descend(feature, threshold, left, right, roots[b], Xq[q])
            cnt = leaf_count[leaf]
            if cnt == 0:
                continue
            inv = 1.0 / cnt
            s = leaf_start[leaf]
            for j in range(s, s + cnt):
                i = members[j]
                num += inv * w[i] * y[i]
                den += inv * w[i]
                plain_num += inv * y[i]
            used += 1
        used_out[q] = used
        if used == 0:
            out[q] = np.nan
        elif den > 0.0:
            out[q] = num / den
        else:
            # every reachable member has zero sample weight
            out[q] = plain_num / used
    return out, used_out
