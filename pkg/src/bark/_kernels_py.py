"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` function for function and are used when the
compiled extension is unavailable or ``BARK_PURE_PYTHON`` is set.
"""

import numpy as np


def route(X, feature, threshold, catmask, is_cat, left, right, leaf_id):
    """Leaf id reached by each row of ``X`` in a flattened tree."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        cur = node[active]
        done = left[cur] < 0
        if done.any():
            out[active[done]] = leaf_id[cur[done]]
            active = active[~done]
            cur = cur[~done]
        if not active.size:
            break
        f = feature[cur]
        vals = X[active, f]
        cat = is_cat[cur].astype(bool)
        go_left = np.empty(active.size, dtype=bool)
        num = ~cat
        go_left[num] = vals[num] <= threshold[cur[num]]
        if cat.any():
            codes = vals[cat].astype(np.uint64)
            go_left[cat] = ((catmask[cur[cat]] >> codes) & np.uint64(1)) == 1
        node[active] = np.where(go_left, left[cur], right[cur])
    return out


def changed_groups(old_ids, new_ids):
    """Leaves whose member sets differ between two partitions of the data.

    Returns ``(old_changed, new_changed)`` arrays of leaf ids.  A leaf of one
    partition is unchanged when the other partition has a leaf with exactly
    the same members; those leaves cancel in the kernel update.
    """
    if old_ids.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    n_old = int(old_ids.max()) + 1
    n_new = int(new_ids.max()) + 1
    pair = old_ids * n_new + new_ids
    c_pair = np.bincount(pair, minlength=n_old * n_new)
    c_old = np.bincount(old_ids, minlength=n_old)
    c_new = np.bincount(new_ids, minlength=n_new)
    nz = np.flatnonzero(c_pair)
    i, j = nz // n_new, nz % n_new
    same = (c_pair[nz] == c_old[i]) & (c_pair[nz] == c_new[j])
    old_same = np.zeros(n_old, dtype=bool)
    old_same[i[same]] = True
    new_same = np.zeros(n_new, dtype=bool)
    new_same[j[same]] = True
    return np.flatnonzero((c_old > 0) & ~old_same), np.flatnonzero((c_new > 0) & ~new_same)


def update_columns(old_ids, new_ids, scale):
    """Columns ``W`` and signs ``s`` with ``scale^2 (Phi* Phi*^T - Phi Phi^T) = W diag(s) W^T``."""
    old_c, new_c = changed_groups(old_ids, new_ids)
    n = old_ids.size
    k = len(new_c) + len(old_c)
    W = np.zeros((n, k))
    for col, leaf in enumerate(new_c):
        W[new_ids == leaf, col] = scale
    for col, leaf in enumerate(old_c):
        W[old_ids == leaf, len(new_c) + col] = scale
    signs = np.concatenate([np.ones(len(new_c)), -np.ones(len(old_c))])
    return W, signs


def lowrank_delta(Ainv, alpha, old_ids, new_ids, scale):
    """Change of ``y^T A^-1 y`` and ``log|A|`` when one tree's leaves change.

    ``A* = A + W diag(s) W^T``.  Returns ``(d_quad, d_logdet, B, Cinv, u)``
    with ``B = A^-1 W``, ``C = diag(s) + W^T B`` and ``u = W^T alpha``, which
    is what :func:`apply_lowrank` needs.  Raises ``LinAlgError`` when the
    capacitance matrix is singular or the determinant changes sign.
    """
    W, signs = update_columns(old_ids, new_ids, scale)
    k = W.shape[1]
    if k == 0:
        return 0.0, 0.0, W, np.zeros((0, 0)), np.zeros(0)
    B = Ainv @ W
    C = np.diag(signs) + W.T @ B
    sign, logabs = np.linalg.slogdet(C)
    n_neg = int(np.sum(signs < 0))
    if sign == 0 or sign * (-1) ** n_neg <= 0 or not np.isfinite(logabs):
        raise np.linalg.LinAlgError("low-rank update is not positive definite")
    Cinv = np.linalg.inv(C)
    u = W.T @ alpha
    return -float(u @ Cinv @ u), float(logabs), B, Cinv, u


def bnb_probe(reach, x, L, U, M, is_cat, values, offsets, G, Ainv, scale, sigma0_sq, noise, kappa):
    """Score one branch-and-bound box and a point ``x`` inside it.

    ``reach`` flags the leaves (grouped by tree via ``offsets``) that meet the
    box.  ``G[s, n, t]`` is the global leaf index of training point ``n`` in
    tree ``t`` of state ``s``.  Returns ``(upper bound, value at x, is cell,
    tree to branch on or -1)``.
    """
    reach = reach.astype(bool)
    starts = offsets[:-1]
    T = len(starts)
    idx = np.flatnonzero(reach)
    ok = np.ones(idx.size, dtype=bool)
    for f in range(len(x)):
        if is_cat[f]:
            ok &= ((M[idx, f] >> np.uint64(int(x[f]))) & np.uint64(1)) == 1
        else:
            ok &= (L[idx, f] < x[f]) & (x[f] <= U[idx, f])
    point = np.zeros(reach.size, dtype=bool)
    point[idx[ok]] = True

    counts = np.add.reduceat(reach.astype(np.int64), starts)
    hi = np.maximum.reduceat(np.where(reach, values, -np.inf), starts)
    lo = np.minimum.reduceat(np.where(reach, values, np.inf), starts)
    mean_ub = float(hi.sum())
    mean_x = float(values[point].sum())
    cell = bool(np.all(counts == 1))
    branch = -1 if cell else int(np.argmax(np.where(counts > 1, hi - lo, -1.0)))

    S, N, m = G.shape
    if kappa == 0.0:
        return (mean_x if cell else max(mean_ub, mean_x)), mean_x, cell, branch
    if N == 0:
        sd = float(np.mean(np.sqrt(sigma0_sq)))
        return mean_ub + kappa * sd, mean_x + kappa * sd, cell, branch
    single = point & (counts == 1)[np.repeat(np.arange(T), np.diff(offsets))]
    kx = scale[:, None] * point[G].sum(axis=2)
    w = np.einsum("sij,sj->si", Ainv, kx)
    q = np.einsum("si,si->s", w, kx)
    sd_x = np.sqrt(np.clip(sigma0_sq - q, 0.0, sigma0_sq))
    val = mean_x + kappa * float(sd_x.mean())
    if cell:
        return val, val, cell, branch
    ks = scale[:, None] * single[G].sum(axis=2)
    var1 = sigma0_sq - ks.max(axis=1) ** 2 / (sigma0_sq + noise)
    d = np.bincount(G.ravel(), weights=np.repeat(w.ravel(), m), minlength=reach.size)
    dmin = np.minimum.reduceat(np.where(reach, d, np.inf), starts).reshape(S, m).sum(axis=1)
    var_w = sigma0_sq + q - 2.0 * scale * dmin
    sd_ub = np.sqrt(np.clip(np.minimum(var1, var_w), 0.0, sigma0_sq))
    return max(mean_ub + kappa * float(sd_ub.mean()), val), val, cell, branch
