"""Path-dependent TreeSHAP kernels (numba).

Path state lives in flat buffers sliced per tree level, as in the reference
polynomial-time algorithm: each level copies the parent's path into a fresh slice so
unwinding never disturbs the caller.

``expected_value`` is recursive and therefore not disk-cached: numba's cache does not
reload self-recursive functions reliably. The attribution walk itself uses an explicit stack.
"""

import numba as nb
import numpy as np

_RECIP = 1.0 / np.arange(1, 130, dtype=np.float64)  # 1/(i+1); trees deeper than 128 are rejected


@nb.njit(cache=True, inline="always")
def _extend(fidx, zf, of, pw, o, depth, zero_fraction, one_fraction, feature):
    fidx[o + depth] = feature
    zf[o + depth] = zero_fraction
    of[o + depth] = one_fraction
    pw[o + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[o + i + 1] += one_fraction * pw[o + i] * (i + 1) / (depth + 1)
        pw[o + i] = zero_fraction * pw[o + i] * (depth - i) / (depth + 1)


@nb.njit(cache=True)
def _unwind(fidx, zf, of, pw, o, depth, path_index):
    one_fraction = of[o + path_index]
    zero_fraction = zf[o + path_index]
    next_one = pw[o + depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[o + i]
            pw[o + i] = next_one * (depth + 1) / ((i + 1) * one_fraction)
            next_one = tmp - pw[o + i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[o + i] = pw[o + i] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(path_index, depth):
        fidx[o + i] = fidx[o + i + 1]
        zf[o + i] = zf[o + i + 1]
        of[o + i] = of[o + i + 1]


@nb.njit(cache=True, inline="always")
def _unwound_sum(zf, of, pw, o, depth, path_index):
    one_fraction = of[o + path_index]
    zero_fraction = zf[o + path_index]
    next_one = pw[o + depth]
    total = 0.0
    d1 = depth + 1.0
    if one_fraction != 0.0:
        inv_one = d1 / one_fraction
        zr = zero_fraction / d1
        # factors are computed off the loop-carried chain so each step is multiply/add only
        for i in range(depth - 1, -1, -1):
            tmp = next_one * inv_one * _RECIP[i]
            total += tmp
            next_one = pw[o + i] - tmp * (zr * (depth - i))
    else:
        for i in range(depth - 1, -1, -1):
            total += pw[o + i] * d1 / (zero_fraction * (depth - i))
    return total


@nb.njit(cache=True)
def _tree(base, feat, thr, left, right, cover, value, x, phi, col, scale,
          fidx, zf, of, pw, stack_i, stack_f):
    """Attributions of one tree (nodes offset by ``base``) added into phi[:, col:].

    Depth-first walk with an explicit stack. A frame is (node, parent path offset, depth,
    feature) plus (zero fraction, one fraction). The hot child is visited before the cold
    one, so the parent's path slice is intact when the cold frame is popped: descendants
    only write to deeper slices.
    """
    k = value.shape[1]
    sp = 0
    stack_i[0, 0] = 0
    stack_i[0, 1] = 0
    stack_i[0, 2] = 0
    stack_i[0, 3] = -1
    stack_f[0, 0] = 1.0
    stack_f[0, 1] = 1.0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_i[sp, 0]
        offset = stack_i[sp, 1]
        depth = stack_i[sp, 2]
        p_feature = stack_i[sp, 3]
        p_zero = stack_f[sp, 0]
        p_one = stack_f[sp, 1]

        # copy parent path into this level's slice
        o = offset + depth + 1
        for i in range(depth + 1):
            fidx[o + i] = fidx[offset + i]
            zf[o + i] = zf[offset + i]
            of[o + i] = of[offset + i]
            pw[o + i] = pw[offset + i]
        _extend(fidx, zf, of, pw, o, depth, p_zero, p_one, p_feature)

        nd = base + node
        f = feat[nd]
        if f < 0:
            for i in range(1, depth + 1):
                w = _unwound_sum(zf, of, pw, o, depth, i)
                c = w * (of[o + i] - zf[o + i]) * scale
                for j in range(k):
                    phi[fidx[o + i], col + j] += c * value[nd, j]
            continue

        # right iff x >= thr; NaN compares false and goes left
        if x[f] >= thr[nd]:
            hot, cold = right[nd], left[nd]
        else:
            hot, cold = left[nd], right[nd]
        w = cover[nd]
        hot_zero = cover[base + hot] / w
        cold_zero = cover[base + cold] / w
        in_zero = 1.0
        in_one = 1.0

        # a feature seen earlier on the path is unwound so it appears only once
        path_index = 0
        while path_index <= depth:
            if fidx[o + path_index] == f:
                break
            path_index += 1
        if path_index != depth + 1:
            in_zero = zf[o + path_index]
            in_one = of[o + path_index]
            _unwind(fidx, zf, of, pw, o, depth, path_index)
            depth -= 1

        if cold_zero > 0:
            stack_i[sp, 0] = cold
            stack_i[sp, 1] = o
            stack_i[sp, 2] = depth + 1
            stack_i[sp, 3] = f
            stack_f[sp, 0] = cold_zero * in_zero
            stack_f[sp, 1] = 0.0
            sp += 1
        stack_i[sp, 0] = hot
        stack_i[sp, 1] = o
        stack_i[sp, 2] = depth + 1
        stack_i[sp, 3] = f
        stack_f[sp, 0] = hot_zero * in_zero
        stack_f[sp, 1] = in_one
        sp += 1


@nb.njit
def expected_value(node, feat, left, right, cover, value, out):
    """Cover-weighted mean leaf value below ``node`` accumulated into ``out``."""
    if feat[node] < 0:
        for j in range(value.shape[1]):
            out[j] = value[node, j]
        return
    l, r = left[node], right[node]
    a = np.zeros(value.shape[1])
    b = np.zeros(value.shape[1])
    expected_value(l, feat, left, right, cover, value, a)
    expected_value(r, feat, left, right, cover, value, b)
    c = cover[node]
    for j in range(value.shape[1]):
        out[j] = (cover[l] * a[j] + cover[r] * b[j]) / c


@nb.njit(cache=True)
def _buffers(max_depth):
    s = (max_depth + 2) * (max_depth + 3) // 2
    return (np.zeros(s, np.int64), np.zeros(s), np.zeros(s), np.zeros(s),
            np.zeros((2 * max_depth + 4, 4), np.int64), np.zeros((2 * max_depth + 4, 2)))


@nb.njit(cache=True)
def tree_phi(feat, thr, left, right, cover, value, x, phi, col, scale, max_depth):
    fidx, zf, of, pw, si, sf = _buffers(max_depth)
    _tree(0, feat, thr, left, right, cover, value, x, phi, col, scale, fidx, zf, of, pw, si, sf)


@nb.njit(cache=True, parallel=True)
def ensemble_phi(X, feat, thr, left, right, cover, value, node_off, out_col, scale, n_cols, max_depth):
    """phi[i, j, c]: summed scaled attributions of every tree for row i.

    Trees are concatenated; tree t owns nodes node_off[t]:node_off[t+1] (child indices are
    tree-local) and writes its outputs to columns out_col[t]:out_col[t] + value.shape[1].
    """
    n, d = X.shape
    phi = np.zeros((n, d, n_cols))
    n_trees = len(out_col)
    for i in nb.prange(n):
        fidx, zf, of, pw, si, sf = _buffers(max_depth)
        x = X[i]
        ph = phi[i]
        for t in range(n_trees):
            a = node_off[t]
            if feat[a] < 0:
                continue
            _tree(a, feat, thr, left, right, cover, value, x, ph, out_col[t], scale[t],
                  fidx, zf, of, pw, si, sf)
    return phi
