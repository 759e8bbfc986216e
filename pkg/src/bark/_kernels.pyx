# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_kernels_py``; same signatures and results."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, log

cnp.import_array()


def route(const double[:, ::1] X, const long[::1] feature, const double[::1] threshold,
          const cnp.uint64_t[::1] catmask, const cnp.uint8_t[::1] is_cat,
          const long[::1] left, const long[::1] right, const long[::1] leaf_id):
    """Leaf id reached by each row of ``X`` in a flattened tree."""
    cdef Py_ssize_t n = X.shape[0], i
    cdef long node, f
    cdef double v
    out = np.empty(n, dtype=np.int64)
    cdef long[::1] o = out
    with nogil:
        for i in range(n):
            node = 0
            while left[node] >= 0:
                f = feature[node]
                v = X[i, f]
                if is_cat[node]:
                    if (catmask[node] >> <cnp.uint64_t>v) & 1:
                        node = left[node]
                    else:
                        node = right[node]
                elif v <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            o[i] = leaf_id[node]
    return out


cdef _changed(const long[::1] old_ids, const long[::1] new_ids):
    cdef Py_ssize_t n = old_ids.shape[0], i
    cdef long n_old = 0, n_new = 0, a, b
    for i in range(n):
        if old_ids[i] + 1 > n_old:
            n_old = old_ids[i] + 1
        if new_ids[i] + 1 > n_new:
            n_new = new_ids[i] + 1
    # first partner seen for each leaf, and whether the pairing stayed one-to-one
    partner_old = np.full(n_old, -1, dtype=np.int64)
    partner_new = np.full(n_new, -1, dtype=np.int64)
    broken_old = np.zeros(n_old, dtype=np.uint8)
    broken_new = np.zeros(n_new, dtype=np.uint8)
    cdef long[::1] po = partner_old, pn = partner_new
    cdef cnp.uint8_t[::1] bo = broken_old, bn = broken_new
    for i in range(n):
        a = old_ids[i]
        b = new_ids[i]
        if po[a] == -1:
            po[a] = b
        elif po[a] != b:
            bo[a] = 1
        if pn[b] == -1:
            pn[b] = a
        elif pn[b] != a:
            bn[b] = 1
    # a leaf is unchanged iff it maps to a single partner that maps back only to it
    old_changed = []
    new_changed = []
    for a in range(n_old):
        if po[a] == -1:
            continue
        if bo[a] or bn[po[a]]:
            old_changed.append(a)
    for b in range(n_new):
        if pn[b] == -1:
            continue
        if bn[b] or bo[pn[b]]:
            new_changed.append(b)
    return np.array(old_changed, dtype=np.int64), np.array(new_changed, dtype=np.int64)


def changed_groups(old_ids, new_ids):
    """Leaves whose member sets differ between two partitions of the data."""
    old_ids = np.ascontiguousarray(old_ids, dtype=np.int64)
    new_ids = np.ascontiguousarray(new_ids, dtype=np.int64)
    if old_ids.shape[0] == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return _changed(old_ids, new_ids)


cdef int _invert(double[:, ::1] C, double[:, ::1] Cinv, double* logabs, int* sign) nogil:
    """Gauss-Jordan inverse with partial pivoting; returns 1 if singular."""
    cdef Py_ssize_t k = C.shape[0], i, j, r, piv
    cdef double best, tmp, f
    logabs[0] = 0.0
    sign[0] = 1
    for i in range(k):
        for j in range(k):
            Cinv[i, j] = 1.0 if i == j else 0.0
    for i in range(k):
        piv = i
        best = fabs(C[i, i])
        for r in range(i + 1, k):
            if fabs(C[r, i]) > best:
                best = fabs(C[r, i])
                piv = r
        if best == 0.0:
            return 1
        if piv != i:
            sign[0] = -sign[0]
            for j in range(k):
                tmp = C[i, j]; C[i, j] = C[piv, j]; C[piv, j] = tmp
                tmp = Cinv[i, j]; Cinv[i, j] = Cinv[piv, j]; Cinv[piv, j] = tmp
        f = C[i, i]
        if f < 0:
            sign[0] = -sign[0]
        logabs[0] += log(fabs(f))
        for j in range(k):
            C[i, j] /= f
            Cinv[i, j] /= f
        for r in range(k):
            if r != i and C[r, i] != 0.0:
                f = C[r, i]
                for j in range(k):
                    C[r, j] -= f * C[i, j]
                    Cinv[r, j] -= f * Cinv[i, j]
    return 0


def lowrank_delta(Ainv, alpha, old_ids, new_ids, double scale):
    """Change of ``y^T A^-1 y`` and ``log|A|`` when one tree's leaves change."""
    old_ids = np.ascontiguousarray(old_ids, dtype=np.int64)
    new_ids = np.ascontiguousarray(new_ids, dtype=np.int64)
    cdef const double[:, ::1] A = np.ascontiguousarray(Ainv, dtype=np.float64)
    cdef const double[::1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    old_c, new_c = changed_groups(old_ids, new_ids)
    cdef Py_ssize_t n_new = new_c.shape[0], n_old = old_c.shape[0]
    cdef Py_ssize_t k = n_new + n_old, n = old_ids.shape[0], i, j, c
    if k == 0:
        return 0.0, 0.0, np.zeros((n, 0)), np.zeros((0, 0)), np.zeros(0)
    # column index of each point in each partition, -1 if unchanged
    col_new = np.full(int(new_ids.max()) + 1, -1, dtype=np.int64)
    col_old = np.full(int(old_ids.max()) + 1, -1, dtype=np.int64)
    col_new[new_c] = np.arange(n_new)
    col_old[old_c] = n_new + np.arange(n_old)
    cdef const long[::1] cn = col_new, co = col_old
    cdef const long[::1] oi = old_ids, ni = new_ids
    B_arr = np.zeros((n, k))
    u_arr = np.zeros(k)
    C_arr = np.zeros((k, k))
    Cinv_arr = np.empty((k, k))
    cdef double[:, ::1] B = B_arr, C = C_arr, Ci = Cinv_arr
    cdef double[::1] u = u_arr
    cdef double logabs, quad = 0.0
    cdef int sign, singular, n_neg = <int>n_old
    cdef long col
    with nogil:
        # B = A^-1 W, accumulated member by member; A is symmetric so rows stand in for columns
        for j in range(n):
            for c in range(2):
                col = cn[ni[j]] if c == 0 else co[oi[j]]
                if col < 0:
                    continue
                u[col] += scale * al[j]
                for i in range(n):
                    B[i, col] += scale * A[j, i]
        # C = diag(s) + W^T B
        for j in range(n):
            for c in range(2):
                col = cn[ni[j]] if c == 0 else co[oi[j]]
                if col < 0:
                    continue
                for i in range(k):
                    C[col, i] += scale * B[j, i]
        for i in range(k):
            C[i, i] += 1.0 if i < n_new else -1.0
        singular = _invert(C, Ci, &logabs, &sign)
        if not singular:
            for i in range(k):
                for j in range(k):
                    quad += u[i] * Ci[i, j] * u[j]
    if singular or sign * (-1) ** n_neg <= 0:
        raise np.linalg.LinAlgError("low-rank update is not positive definite")
    return -quad, logabs, B_arr, Cinv_arr, u_arr


def bnb_probe(reach, const double[::1] x, const double[:, ::1] L, const double[:, ::1] U,
              const cnp.uint64_t[:, ::1] M, is_cat, const double[::1] values,
              const long[::1] offsets, const long[:, :, ::1] G, const double[:, :, ::1] Ainv,
              const double[::1] scale, const double[::1] sigma0_sq, const double[::1] noise,
              double kappa):
    """Score one branch-and-bound box and a point ``x`` inside it."""
    cdef const cnp.uint8_t[::1] r = np.ascontiguousarray(reach, dtype=np.uint8)
    cdef const cnp.uint8_t[::1] cat = np.ascontiguousarray(is_cat, dtype=np.uint8)
    cdef Py_ssize_t nL = r.shape[0], T = offsets.shape[0] - 1, D = x.shape[0]
    cdef Py_ssize_t S = G.shape[0], N = G.shape[1], m = G.shape[2]
    cdef Py_ssize_t g, l, f, s, n, t, i, j, branch = -1
    point_arr = np.zeros(nL, dtype=np.uint8)
    count_arr = np.zeros(T, dtype=np.int64)
    d_arr = np.zeros(nL)
    kx_arr = np.zeros(N)
    ks_arr = np.zeros(N)
    w_arr = np.zeros(N)
    cdef cnp.uint8_t[::1] point = point_arr
    cdef long[::1] count = count_arr
    cdef double[::1] d = d_arr, kx = kx_arr, ks = ks_arr, w = w_arr
    cdef double hi, lo, best_spread = -1.0, mean_ub = 0.0, mean_x = 0.0, v
    cdef double q, var_x, var1, var_w, kmax, dsum, dmin, sd_x_sum = 0.0, sd_ub_sum = 0.0
    cdef bint inside, cell = True
    cdef long leaf
    with nogil:
        for g in range(T):
            hi = -1e308
            lo = 1e308
            for l in range(offsets[g], offsets[g + 1]):
                if not r[l]:
                    continue
                count[g] += 1
                v = values[l]
                if v > hi:
                    hi = v
                if v < lo:
                    lo = v
                inside = True
                for f in range(D):
                    if cat[f]:
                        if not (M[l, f] >> <cnp.uint64_t>x[f]) & 1:
                            inside = False
                            break
                    elif not (L[l, f] < x[f] and x[f] <= U[l, f]):
                        inside = False
                        break
                if inside:
                    point[l] = 1
                    mean_x += v
            mean_ub += hi
            if count[g] > 1:
                cell = False
                if hi - lo > best_spread:
                    best_spread = hi - lo
                    branch = g
    if kappa == 0.0:
        return (mean_x if cell else max(mean_ub, mean_x)), mean_x, cell, branch
    if N == 0:
        v = float(np.mean(np.sqrt(np.asarray(sigma0_sq))))
        return mean_ub + kappa * v, mean_x + kappa * v, cell, branch
    with nogil:
        for s in range(S):
            for n in range(N):
                kx[n] = 0.0
                ks[n] = 0.0
                for t in range(m):
                    leaf = G[s, n, t]
                    if point[leaf]:
                        kx[n] += scale[s]
                        if count[s * m + t] == 1:
                            ks[n] += scale[s]
            q = 0.0
            for i in range(N):
                v = 0.0
                for j in range(N):
                    v = v + Ainv[s, i, j] * kx[j]
                w[i] = v
                q += v * kx[i]
            var_x = sigma0_sq[s] - q
            if var_x < 0.0:
                var_x = 0.0
            if var_x > sigma0_sq[s]:
                var_x = sigma0_sq[s]
            sd_x_sum += var_x ** 0.5
            if cell:
                continue
            kmax = 0.0
            for n in range(N):
                if ks[n] > kmax:
                    kmax = ks[n]
            var1 = sigma0_sq[s] - kmax * kmax / (sigma0_sq[s] + noise[s])
            for t in range(m):
                for l in range(offsets[s * m + t], offsets[s * m + t + 1]):
                    d[l] = 0.0
            for n in range(N):
                for t in range(m):
                    d[G[s, n, t]] += w[n]
            dsum = 0.0
            for t in range(m):
                dmin = 1e308
                for l in range(offsets[s * m + t], offsets[s * m + t + 1]):
                    if r[l] and d[l] < dmin:
                        dmin = d[l]
                dsum += dmin
            var_w = sigma0_sq[s] + q - 2.0 * scale[s] * dsum
            if var_w < var1:
                var1 = var_w
            if var1 < 0.0:
                var1 = 0.0
            if var1 > sigma0_sq[s]:
                var1 = sigma0_sq[s]
            sd_ub_sum += var1 ** 0.5
    val = mean_x + kappa * sd_x_sum / S
    if cell:
        return val, val, cell, branch
    return max(mean_ub + kappa * sd_ub_sum / S, val), val, cell, branch
