"""Numba kernels for tree growth and ensemble traversal.

Routing everywhere: go left iff x < threshold, NaN goes left.
Binned features use bin codes 0..n_edges for present values and MISSING_BIN for NaN;
bin <= b  <=>  x < edges[b].
"""

from __future__ import annotations

import numba as nb
import numpy as np

MAX_BINS = 256
MISSING_BIN = MAX_BINS  # histogram slot for NaN
EXACT_MAX = 64  # nodes with at most this many rows use exact midpoints


@nb.njit(cache=True)
def _gain_term(g, h, lam):
    return g * g / (h + lam)


@nb.njit(cache=True)
def _exact_split_gh(X, g, h, rows, start, end, f, lam, mcw, G, H, parent, xs, gs, hs):
    """Best split of one feature over all midpoints of the node's distinct values."""
    k = 0
    gmiss = 0.0
    hmiss = 0.0
    for i in range(start, end):
        r = rows[i]
        x = X[f, r]
        if np.isnan(x):
            gmiss += g[r]
            hmiss += h[r]
        else:
            xs[k] = x
            gs[k] = g[r]
            hs[k] = h[r]
            k += 1
    best_gain = 0.0
    best_thr = np.nan
    if k < 2:
        return best_gain, best_thr
    # stable insertion sort of (x, g, h) triples; k <= EXACT_MAX
    for j in range(1, k):
        xv = xs[j]
        gv = gs[j]
        hv = hs[j]
        i = j - 1
        while i >= 0 and xs[i] > xv:
            xs[i + 1] = xs[i]
            gs[i + 1] = gs[i]
            hs[i + 1] = hs[i]
            i -= 1
        xs[i + 1] = xv
        gs[i + 1] = gv
        hs[i + 1] = hv
    gl = gmiss
    hl = hmiss
    for j in range(k - 1):
        gl += gs[j]
        hl += hs[j]
        a = xs[j]
        b = xs[j + 1]
        if a == b:
            continue
        gr = G - gl
        hr = H - hl
        if hl < mcw or hr < mcw:
            continue
        gain = 0.5 * (_gain_term(gl, hl, lam) + _gain_term(gr, hr, lam) - parent)
        if gain > best_gain:
            thr = 0.5 * (a + b)
            if not (thr > a):
                thr = b
            best_gain = gain
            best_thr = thr
    return best_gain, best_thr


@nb.njit(cache=True)
def _build_hist(Xb_rows, g, h, rows, start, end, feats, HG, HH, slot):
    nf = feats.shape[0]
    for fi in range(nf):
        for b in range(MAX_BINS + 1):
            HG[slot, fi, b] = 0.0
            HH[slot, fi, b] = 0.0
    for i in range(start, end):
        r = rows[i]
        gr = g[r]
        hr = h[r]
        for fi in range(nf):
            b = Xb_rows[r, feats[fi]]
            HG[slot, fi, b] += gr
            HH[slot, fi, b] += hr


@nb.njit(cache=True)
def grow_gh(X, Xb_rows, edges, n_edges, g, h, rows, feats, max_depth, mcw, lam):
    """Greedy second-order tree over ``rows`` using features ``feats``.

    X: (d, n) float64, Xb_rows: (n, d) uint16 bin codes, edges: (d, MAX_BINS-1).
    Histograms live in stack slots; a split builds the smaller child's histogram and
    derives the larger one by subtraction from the parent.
    Returns feature, threshold, left, right, cover, value, node_count.
    """
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    cover = np.zeros(cap)
    value = np.zeros(cap)
    rows = rows.copy()
    if rows.shape[0] == 0:
        return feature[:1], threshold[:1], left[:1], right[:1], cover[:1], value[:1], 1

    nf = feats.shape[0]
    n_slots = max_depth + 2
    st_node = np.zeros(n_slots, np.int64)
    st_start = np.zeros(n_slots, np.int64)
    st_end = np.zeros(n_slots, np.int64)
    st_depth = np.zeros(n_slots, np.int64)
    HG = np.zeros((n_slots, nf, MAX_BINS + 1))
    HH = np.zeros((n_slots, nf, MAX_BINS + 1))
    xs = np.empty(EXACT_MAX)
    gs = np.empty(EXACT_MAX)
    hs = np.empty(EXACT_MAX)

    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = rows.shape[0]
    st_depth[0] = 0
    if rows.shape[0] > EXACT_MAX:
        _build_hist(Xb_rows, g, h, rows, 0, rows.shape[0], feats, HG, HH, 0)
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        s = sp
        node = st_node[s]
        start = st_start[s]
        end = st_end[s]
        depth = st_depth[s]
        G = 0.0
        H = 0.0
        for i in range(start, end):
            G += g[rows[i]]
            H += h[rows[i]]
        cover[node] = H
        value[node] = -G / (H + lam)
        if depth >= max_depth or end - start < 2 or H < 2 * mcw:
            continue
        parent = _gain_term(G, H, lam)
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        m = end - start
        for fi in range(nf):
            f = feats[fi]
            if m <= EXACT_MAX:
                gain, thr = _exact_split_gh(X, g, h, rows, start, end, f, lam, mcw, G, H, parent, xs, gs, hs)
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = thr
                continue
            ne = n_edges[f]
            gl = HG[s, fi, MISSING_BIN]
            hl = HH[s, fi, MISSING_BIN]
            for b in range(ne):
                gl += HG[s, fi, b]
                hl += HH[s, fi, b]
                gr = G - gl
                hr = H - hl
                if hl < mcw or hr < mcw:
                    continue
                gain = 0.5 * (_gain_term(gl, hl, lam) + _gain_term(gr, hr, lam) - parent)
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = edges[f, b]
        if best_f < 0:
            continue
        # partition rows[start:end] in place: left block first
        lo = start
        hi = end - 1
        while lo <= hi:
            x = X[best_f, rows[lo]]
            if x < best_thr or np.isnan(x):
                lo += 1
            else:
                tmp = rows[lo]
                rows[lo] = rows[hi]
                rows[hi] = tmp
                hi -= 1
        if lo == start or lo == end:
            continue
        ln = n_nodes
        rn = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = ln
        right[node] = rn
        nl = lo - start
        nr = end - lo
        left_small = nl <= nr
        if max(nl, nr) > EXACT_MAX:
            # small child's histogram -> slot s+1, large child's = parent - small -> slot s
            if left_small:
                _build_hist(Xb_rows, g, h, rows, start, lo, feats, HG, HH, s + 1)
            else:
                _build_hist(Xb_rows, g, h, rows, lo, end, feats, HG, HH, s + 1)
            for fi in range(nf):
                for b in range(MAX_BINS + 1):
                    HG[s, fi, b] -= HG[s + 1, fi, b]
                    HH[s, fi, b] -= HH[s + 1, fi, b]
        # slot s: large child, slot s+1: small child (processed next)
        if left_small:
            st_node[s] = rn
            st_start[s] = lo
            st_end[s] = end
            st_node[s + 1] = ln
            st_start[s + 1] = start
            st_end[s + 1] = lo
        else:
            st_node[s] = ln
            st_start[s] = start
            st_end[s] = lo
            st_node[s + 1] = rn
            st_start[s + 1] = lo
            st_end[s + 1] = end
        st_depth[s] = depth + 1
        st_depth[s + 1] = depth + 1
        sp = s + 2
    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        cover[:n_nodes],
        value[:n_nodes],
        n_nodes,
    )


@nb.njit(cache=True)
def _class_score(wc, W):
    s = 0.0
    for c in range(wc.shape[0]):
        s += wc[c] * wc[c]
    return s / W if W > 0 else 0.0


@nb.njit(cache=True)
def grow_gini(X, Xb, edges, n_edges, y, w, rows, n_classes, max_features, min_leaf, max_depth, seed):
    """Weighted-Gini classification tree with a fresh random feature subset per node.

    ``rows`` may contain duplicates (bootstrap). Leaves hold normalised weighted class
    distributions; cover is the summed sample weight.
    """
    np.random.seed(seed)
    d = X.shape[0]
    cap = 2 ** (max_depth + 1) - 1
    m_total = rows.shape[0]
    cap = min(cap, 2 * max(m_total, 1) + 1)
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    cover = np.zeros(cap)
    value = np.zeros((cap, n_classes))
    rows = rows.copy()
    if m_total == 0:
        return feature[:1], threshold[:1], left[:1], right[:1], cover[:1], value[:1], 1

    st_node = np.zeros(cap, np.int64)
    st_start = np.zeros(cap, np.int64)
    st_end = np.zeros(cap, np.int64)
    st_depth = np.zeros(cap, np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m_total
    sp = 1
    n_nodes = 1
    perm = np.arange(d)
    hist = np.zeros((MAX_BINS + 1, n_classes))
    hcount = np.zeros(MAX_BINS + 1, np.int64)
    wc = np.zeros(n_classes)
    wl = np.zeros(n_classes)
    wr = np.zeros(n_classes)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        wc[:] = 0.0
        for i in range(start, end):
            r = rows[i]
            wc[y[r]] += w[r]
        W = wc.sum()
        cover[node] = W
        for c in range(n_classes):
            value[node, c] = wc[c] / W if W > 0 else 1.0 / n_classes
        m = end - start
        if depth >= max_depth or m < 2 * min_leaf:
            continue
        n_present = 0
        for c in range(n_classes):
            if wc[c] > 0:
                n_present += 1
        if n_present < 2:
            continue
        parent = _class_score(wc, W)
        best = parent + 1e-12 * W
        best_f = -1
        best_thr = 0.0
        # partial Fisher-Yates: first max_features entries of perm are the sample
        for i in range(max_features):
            j = i + np.random.randint(d - i)
            t = perm[i]
            perm[i] = perm[j]
            perm[j] = t
        for fi in range(max_features):
            f = perm[fi]
            if m <= EXACT_MAX:
                # exact: sort present values
                xs = np.empty(m)
                idx = np.empty(m, np.int64)
                k = 0
                wl[:] = 0.0
                nl = 0
                for i in range(start, end):
                    r = rows[i]
                    x = X[f, r]
                    if np.isnan(x):
                        wl[y[r]] += w[r]
                        nl += 1
                    else:
                        xs[k] = x
                        idx[k] = r
                        k += 1
                order = np.argsort(xs[:k], kind="mergesort")
                for j in range(k - 1):
                    r = idx[order[j]]
                    wl[y[r]] += w[r]
                    nl += 1
                    a = xs[order[j]]
                    b = xs[order[j + 1]]
                    if a == b or nl < min_leaf or m - nl < min_leaf:
                        continue
                    WL = wl.sum()
                    for c in range(n_classes):
                        wr[c] = wc[c] - wl[c]
                    score = _class_score(wl, WL) + _class_score(wr, W - WL)
                    if score > best:
                        thr = 0.5 * (a + b)
                        if not (thr > a):
                            thr = b
                        best = score
                        best_f = f
                        best_thr = thr
                continue
            ne = n_edges[f]
            if ne == 0:
                continue
            hist[:, :] = 0.0
            hcount[:] = 0
            for i in range(start, end):
                r = rows[i]
                b = Xb[f, r]
                hist[b, y[r]] += w[r]
                hcount[b] += 1
            for c in range(n_classes):
                wl[c] = hist[MISSING_BIN, c]
            nl = hcount[MISSING_BIN]
            for b in range(ne):
                for c in range(n_classes):
                    wl[c] += hist[b, c]
                nl += hcount[b]
                if nl < min_leaf or m - nl < min_leaf:
                    continue
                WL = wl.sum()
                for c in range(n_classes):
                    wr[c] = wc[c] - wl[c]
                score = _class_score(wl, WL) + _class_score(wr, W - WL)
                if score > best:
                    best = score
                    best_f = f
                    best_thr = edges[f, b]
        if best_f < 0:
            continue
        lo = start
        hi = end - 1
        while lo <= hi:
            x = X[best_f, rows[lo]]
            if x < best_thr or np.isnan(x):
                lo += 1
            else:
                t = rows[lo]
                rows[lo] = rows[hi]
                rows[hi] = t
                hi -= 1
        if lo == start or lo == end:
            continue
        ln = n_nodes
        rn = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = ln
        right[node] = rn
        st_node[sp] = rn
        st_start[sp] = lo
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = ln
        st_start[sp] = start
        st_end[sp] = lo
        st_depth[sp] = depth + 1
        sp += 1
    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        cover[:n_nodes],
        value[:n_nodes],
        n_nodes,
    )


@nb.njit(cache=True)
def bin_matrix(X, edges, n_edges):
    """(n, d) float -> (d, n) uint16 bin codes."""
    n, d = X.shape
    out = np.empty((d, n), np.uint16)
    for f in range(d):
        ne = n_edges[f]
        for i in range(n):
            x = X[i, f]
            if np.isnan(x):
                out[f, i] = MISSING_BIN
            else:
                # first edge strictly greater than x
                lo = 0
                hi = ne
                while lo < hi:
                    mid = (lo + hi) // 2
                    if edges[f, mid] <= x:
                        lo = mid + 1
                    else:
                        hi = mid
                out[f, i] = lo
    return out


@nb.njit(cache=True)
def leaf_index(feature, threshold, left, right, x):
    node = 0
    while feature[node] >= 0:
        v = x[feature[node]]
        if v < threshold[node] or np.isnan(v):
            node = left[node]
        else:
            node = right[node]
    return node


@nb.njit(cache=True)
def apply_tree(feature, threshold, left, right, X):
    """Leaf index per row of X (n, d)."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        out[i] = leaf_index(feature, threshold, left, right, X[i])
    return out


@nb.njit(cache=True, parallel=True)
def ensemble_sum(X, feature, threshold, left, right, value, offsets, out_col, n_cols):
    """Sum of leaf values per output column over all trees.

    Trees are concatenated; tree t spans nodes offsets[t]:offsets[t+1] with child indices
    local to the tree. value is (total_nodes, k); tree t adds value[leaf, j] to column
    out_col[t] + j. Accumulation is in tree order for every row (deterministic).
    """
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    k = value.shape[1]
    out = np.zeros((n, n_cols))
    block = 256
    n_blocks = (n + block - 1) // block
    for bi in nb.prange(n_blocks):
        lo = bi * block
        hi = min(n, lo + block)
        for t in range(n_trees):
            base = offsets[t]
            col = out_col[t]
            for i in range(lo, hi):
                node = 0
                while feature[base + node] >= 0:
                    v = X[i, feature[base + node]]
                    if v < threshold[base + node] or np.isnan(v):
                        node = left[base + node]
                    else:
                        node = right[base + node]
                for j in range(k):
                    out[i, col + j] += value[base + node, j]
    return out


@nb.njit(cache=True)
def to_perfect(feature, threshold, left, right, value, depth, out_feat, out_thr, out_val):
    """Lay one tree out as a complete binary tree of the given depth.

    Internal slot i has children 2i+1 / 2i+2; leaves occupy slots 2^depth-1 onward.
    A leaf reached early becomes an always-left pass-through (threshold +inf) and its
    value is copied to every leaf slot below it.
    """
    n_int = 2**depth - 1
    stack_src = np.empty(n_int + 2 ** depth, np.int64)
    stack_dst = np.empty(n_int + 2 ** depth, np.int64)
    sp = 0
    stack_src[0] = 0
    stack_dst[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        src = stack_src[sp]
        dst = stack_dst[sp]
        if dst >= n_int:
            for j in range(value.shape[1]):
                out_val[dst - n_int, j] = value[src, j]
            continue
        if feature[src] >= 0:
            out_feat[dst] = feature[src]
            out_thr[dst] = threshold[src]
            stack_src[sp] = left[src]
            stack_dst[sp] = 2 * dst + 1
            sp += 1
            stack_src[sp] = right[src]
            stack_dst[sp] = 2 * dst + 2
            sp += 1
        else:
            out_feat[dst] = 0
            out_thr[dst] = np.inf
            stack_src[sp] = src
            stack_dst[sp] = 2 * dst + 1
            sp += 1
            stack_src[sp] = src
            stack_dst[sp] = 2 * dst + 2
            sp += 1


@nb.njit(cache=True, inline="always")
def _descend(codes, r, ft, rk, depth):
    a = 0
    for _ in range(depth):
        a = 2 * a + 1 + np.int64(codes[r, ft[a]] > rk[a])
    return a


@nb.njit(cache=True, parallel=True)
def perfect_sum(codes, feat, rank, val, out_col, n_cols, depth):
    """Ensemble leaf-value sums over complete-tree layouts.

    codes: (n, d) uint16, codes[i, f] = number of the model's thresholds on f that are
    <= x[i, f] (0 for NaN). rank: (T, 2^depth - 1) int32 position of each node's threshold
    in that sorted list, so ``x >= thr  <=>  code > rank``. val: (T, 2^depth, k).
    """
    n = codes.shape[0]
    n_trees = feat.shape[0]
    k = val.shape[2]
    n_int = 2**depth - 1
    out = np.zeros((n, n_cols))
    block = 64
    n_blocks = (n + block - 1) // block
    for bi in nb.prange(n_blocks):
        lo = bi * block
        hi = min(n, lo + block)
        for t in range(n_trees):
            ft = feat[t]
            rk = rank[t]
            vt = val[t]
            col = out_col[t]
            r = lo
            # four independent descents in flight hide the load latency of each step
            while r + 4 <= hi:
                a = 0
                b = 0
                c = 0
                e = 0
                for _ in range(depth):
                    a = 2 * a + 1 + np.int64(codes[r, ft[a]] > rk[a])
                    b = 2 * b + 1 + np.int64(codes[r + 1, ft[b]] > rk[b])
                    c = 2 * c + 1 + np.int64(codes[r + 2, ft[c]] > rk[c])
                    e = 2 * e + 1 + np.int64(codes[r + 3, ft[e]] > rk[e])
                for q in range(k):
                    out[r, col + q] += vt[a - n_int, q]
                    out[r + 1, col + q] += vt[b - n_int, q]
                    out[r + 2, col + q] += vt[c - n_int, q]
                    out[r + 3, col + q] += vt[e - n_int, q]
                r += 4
            while r < hi:
                a = _descend(codes, r, ft, rk, depth)
                for q in range(k):
                    out[r, col + q] += vt[a - n_int, q]
                r += 1
    return out
