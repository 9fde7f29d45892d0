"""Hot loops, each in a numba version and an equivalent numpy version.

Public entry points dispatch on :func:`renyidistill._accel.use_numba`.  The two
paths agree to rounding; the numpy versions are also the readable reference.
"""

import numpy as np

from ._accel import njit, use_numba

# splitmix64 constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO = np.uint64(2)
_INV53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# counter-based Gaussian field


@njit
def _mix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def _normal_at(key, layer, i, j):
    h = _mix64(key + np.uint64(layer))
    h = _mix64(h ^ np.uint64(i))
    h = _mix64(h ^ np.uint64(j))
    b1 = _mix64(h ^ _ONE)
    b2 = _mix64(h ^ _TWO)
    u1 = (float(b1 >> _S11) + 0.5) * _INV53
    u2 = float(b2 >> _S11) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


@njit
def _field_nb(key, layer, rows, cols):
    out = np.empty(rows.size, dtype=np.float64)
    for t in range(rows.size):
        out[t] = _normal_at(key, layer, rows[t], cols[t])
    return out


def _mix64_np(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _field_np(key, layer, rows, cols):
    with np.errstate(over="ignore"):
        base = np.full(rows.shape, key, dtype=np.uint64) + np.uint64(layer)
        h = _mix64_np(base)
        h = _mix64_np(h ^ rows.astype(np.uint64))
        h = _mix64_np(h ^ cols.astype(np.uint64))
        b1 = _mix64_np(h ^ _ONE)
        b2 = _mix64_np(h ^ _TWO)
    u1 = ((b1 >> _S11).astype(np.float64) + 0.5) * _INV53
    u2 = (b2 >> _S11).astype(np.float64) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def gaussian_field(key, layer, rows, cols):
    """Standard normal values at the (layer, row, col) counters."""
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    key = np.uint64(key)
    if use_numba():
        return _field_nb(key, np.int64(layer), rows, cols)
    return _field_np(key, layer, rows, cols)


# ---------------------------------------------------------------------------
# allocation


@njit
def _hard_scores_nb(indptr, indices, data, xi_prime, eta, members, y):
    m = members.size
    nu_prime = np.zeros(m)
    nu_tilde = np.zeros(m)
    s = np.zeros(m)
    for t in range(m):
        j = members[t]
        for e in range(indptr[j], indptr[j + 1]):
            i = indices[e]
            xij = data[e]
            if eta[i] == 1:
                if xi_prime[i] == j:
                    nu_prime[t] += xij * xij
                    nu_tilde[t] += xij * xij
                    s[t] += xij * y[i]
            elif xi_prime[i] >= 0:
                nu_tilde[t] += xij * xij
    return nu_prime, nu_tilde, s


def _hard_scores_np(indptr, indices, data, xi_prime, eta, members, y):
    lo, hi = indptr[members], indptr[members + 1]
    counts = hi - lo
    pos = np.repeat(np.arange(members.size), counts)
    ent = np.repeat(lo - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
    rows = indices[ent]
    x = data[ent]
    e = eta[rows]
    xp = xi_prime[rows]
    hard = (e == 1) & (xp == members[pos])
    avail = hard | ((e == 0) & (xp >= 0))
    sq = x * x
    m = members.size
    nu_prime = np.bincount(pos[hard], weights=sq[hard], minlength=m)
    nu_tilde = np.bincount(pos[avail], weights=sq[avail], minlength=m)
    s = np.bincount(pos[hard], weights=(x * y[rows])[hard], minlength=m)
    return nu_prime, nu_tilde, s


def hard_scores(indptr, indices, data, xi_prime, eta, members, y):
    """Per-member hard-assigned variance, available variance and raw cross product."""
    args = (indptr, indices, data, xi_prime, eta, members, np.ascontiguousarray(y, dtype=np.float64))
    if use_numba():
        return _hard_scores_nb(*args)
    return _hard_scores_np(*args)


@njit
def _allocate_soft_nb(r_indptr, r_indices, soft_rows, member_pos, absw, tie_u):
    out = np.full(soft_rows.size, -1, dtype=np.int64)
    for t in range(soft_rows.size):
        i = soft_rows[t]
        best = -1.0
        count = 0
        for e in range(r_indptr[i], r_indptr[i + 1]):
            q = member_pos[r_indices[e]]
            if q < 0:
                continue
            a = absw[q]
            if a > best:
                best = a
                count = 1
            elif a == best:
                count += 1
        if count == 0:
            continue
        pick = min(int(tie_u[t] * count), count - 1)
        seen = 0
        for e in range(r_indptr[i], r_indptr[i + 1]):
            j = r_indices[e]
            q = member_pos[j]
            if q >= 0 and absw[q] == best:
                if seen == pick:
                    out[t] = j
                    break
                seen += 1
    return out


def _allocate_soft_np(r_indptr, r_indices, soft_rows, member_pos, absw, tie_u):
    out = np.full(soft_rows.size, -1, dtype=np.int64)
    lo, hi = r_indptr[soft_rows], r_indptr[soft_rows + 1]
    counts = hi - lo
    owner = np.repeat(np.arange(soft_rows.size), counts)
    ent = np.repeat(lo - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
    cols = r_indices[ent]
    q = member_pos[cols]
    keep = q >= 0
    owner, cols, q = owner[keep], cols[keep], q[keep]
    if owner.size == 0:
        return out
    a = absw[q]
    best = np.full(soft_rows.size, -np.inf)
    np.maximum.at(best, owner, a)
    tied = a == best[owner]
    owner, cols = owner[tied], cols[tied]
    n_tied = np.bincount(owner, minlength=soft_rows.size)
    has = n_tied > 0
    pick = np.minimum((tie_u * n_tied).astype(np.int64), n_tied - 1)
    start = np.concatenate(([0], np.cumsum(n_tied)[:-1]))
    out[has] = cols[start[has] + pick[has]]
    return out


def allocate_soft(r_indptr, r_indices, soft_rows, member_pos, absw, tie_u):
    """Pick, for each soft row, a uniformly random maximiser of ``|W'|`` among its members.

    ``member_pos[j]`` is the position of predictor ``j`` in the layer (or -1);
    ``tie_u`` holds one uniform per soft row.  Rows without a member get -1.
    """
    args = (r_indptr, r_indices, np.ascontiguousarray(soft_rows, dtype=np.int64),
            member_pos, absw, np.ascontiguousarray(tie_u, dtype=np.float64))
    if use_numba():
        return _allocate_soft_nb(*args)
    return _allocate_soft_np(*args)


# ---------------------------------------------------------------------------
# extraction


@njit
def _extract_nb(indptr, indices, data, xi_prime, eta, xi, members, nu_tilde, y, key, layer):
    n = y.size
    m = members.size
    w = np.zeros(m)
    breve_diag = np.zeros(n)
    for t in range(m):
        j = members[t]
        scale = 1.0 / np.sqrt(nu_tilde[t])
        acc = 0.0
        for e in range(indptr[j], indptr[j + 1]):
            i = indices[e]
            if eta[i] == 1:
                if xi_prime[i] != j:
                    continue
            elif xi_prime[i] < 0:
                continue
            b = data[e] * scale
            if xi[i] == j:
                acc += b * y[i]
                breve_diag[i] = b
            else:
                acc += b * _normal_at(key, layer, i, j)
        w[t] = acc
    return w, breve_diag


def _extract_np(indptr, indices, data, xi_prime, eta, xi, members, nu_tilde, y, key, layer):
    n = y.size
    lo, hi = indptr[members], indptr[members + 1]
    counts = hi - lo
    pos = np.repeat(np.arange(members.size), counts)
    ent = np.repeat(lo - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
    rows = indices[ent]
    cols = members[pos]
    e = eta[rows]
    xp = xi_prime[rows]
    avail = ((e == 1) & (xp == cols)) | ((e == 0) & (xp >= 0))
    rows, cols, pos = rows[avail], cols[avail], pos[avail]
    b = data[ent[avail]] / np.sqrt(nu_tilde[pos])
    own = xi[rows] == cols
    v = np.empty(rows.size)
    v[own] = y[rows[own]]
    other = ~own
    v[other] = _field_np(np.uint64(key), layer, rows[other], cols[other])
    w = np.bincount(pos, weights=b * v, minlength=members.size)
    breve_diag = np.zeros(n)
    breve_diag[rows[own]] = b[own]
    return w, breve_diag


def extract_scores(indptr, indices, data, xi_prime, eta, xi, members, nu_tilde, y, key, layer):
    """Scores ``W`` and the diagonal trace ``breve X[i, xi_i]`` for one layer.

    Auxiliary normals are read from the Gaussian field only on available
    entries not allocated to their column.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    if use_numba():
        return _extract_nb(indptr, indices, data, xi_prime, eta, xi, members, nu_tilde, y,
                           np.uint64(key), np.int64(layer))
    return _extract_np(indptr, indices, data, xi_prime, eta, xi, members, nu_tilde, y, key, layer)


# ---------------------------------------------------------------------------
# null-table estimators


@njit
def _partial_sum_tail_nb(cvals, partial):
    m_knots, n_sched = cvals.shape
    n_draw = partial.shape[0]
    out = np.zeros(m_knots)
    for m in range(m_knots):
        acc = 0.0
        for d in range(n_draw):
            lo = np.inf
            for s in range(n_sched):
                v = cvals[m, s] - partial[d, s]
                if v < lo:
                    lo = v
            acc += np.exp(-lo) if lo > 0.0 else 1.0
        out[m] = acc / n_draw
    return out


def _partial_sum_tail_np(cvals, partial):
    out = np.empty(cvals.shape[0])
    for m in range(cvals.shape[0]):
        lo = np.min(cvals[m][None, :] - partial, axis=1)
        out[m] = np.mean(np.exp(-np.maximum(lo, 0.0)))
    return out


def partial_sum_tail(cvals, partial):
    """Conditional-expectation survival estimate for nested exponential partial sums.

    Parameters
    ----------
    cvals : ndarray, shape (knots, schedule)
        Gamma quantiles ``c_i(x)`` at which the statistic crosses ``x``.
    partial : ndarray, shape (draws, schedule)
        Partial sums with the first exponential removed.
    """
    cvals = np.ascontiguousarray(cvals, dtype=np.float64)
    partial = np.ascontiguousarray(partial, dtype=np.float64)
    if use_numba():
        return _partial_sum_tail_nb(cvals, partial)
    return _partial_sum_tail_np(cvals, partial)


@njit
def _interp_nb(grid_t0, grid_step, values, slope, e):
    # values tabulated on a uniform grid in log(e); linear asymptote in e beyond it
    g = values.size
    if e <= 0.0:
        return 0.0
    t = (np.log(e) - grid_t0) / grid_step
    if t <= 0.0:
        return values[0]
    if t >= g - 1:
        e_last = np.exp(grid_t0 + grid_step * (g - 1))
        return values[g - 1] + slope * (e - e_last)
    k = int(t)
    f = t - k
    return values[k] * (1.0 - f) + values[k + 1] * f


def _interp_np(grid_t0, grid_step, values, slope, e):
    g = values.size
    e = np.asarray(e, dtype=np.float64)
    out = np.zeros(e.shape)
    pos = e > 0.0
    with np.errstate(divide="ignore"):
        t = (np.log(np.where(pos, e, 1.0)) - grid_t0) / grid_step
    e_last = np.exp(grid_t0 + grid_step * (g - 1))
    idx = np.clip(t.astype(np.int64), 0, g - 2)
    f = np.clip(t - idx, 0.0, 1.0)
    mid = values[idx] * (1.0 - f) + values[idx + 1] * f
    res = np.where(t <= 0.0, values[0], np.where(t >= g - 1, values[g - 1] + slope * (e - e_last), mid))
    out[pos] = res[pos]
    return out


@njit
def _order_stat_tail_nb(cvals, tsum, logr, t0, step, ppf_vals, ppf_slopes, cdf_vals, cdf_slope):
    m_knots, n_sched = cvals.shape
    n_draw = tsum.shape[0]
    out = np.zeros(m_knots)
    for m in range(m_knots):
        acc = 0.0
        for d in range(n_draw):
            best = -np.inf
            for s in range(n_sched):
                e = cvals[m, s] - tsum[d, s]
                if e <= 0.0:
                    best = 0.0
                    break
                v = _interp_nb(t0, step, ppf_vals[s], ppf_slopes[s], e) - logr[d, s]
                if v > best:
                    best = v
            if best >= 0.0:
                acc += 1.0
            else:
                acc += np.exp(_interp_nb(t0, step, cdf_vals, cdf_slope, -best))
        out[m] = acc / n_draw
    return out


def _order_stat_tail_np(cvals, tsum, logr, t0, step, ppf_vals, ppf_slopes, cdf_vals, cdf_slope):
    out = np.empty(cvals.shape[0])
    for m in range(cvals.shape[0]):
        e = cvals[m][None, :] - tsum
        sure = np.any(e <= 0.0, axis=1)
        v = np.empty(e.shape)
        for s in range(e.shape[1]):
            v[:, s] = _interp_np(t0, step, ppf_vals[s], ppf_slopes[s], e[:, s]) - logr[:, s]
        best = np.max(v, axis=1)
        best[sure] = 0.0
        prob = np.ones(best.shape)
        neg = best < 0.0
        prob[neg] = np.exp(_interp_np(t0, step, cdf_vals, cdf_slope, -best[neg]))
        out[m] = prob.mean()
    return out


def order_stat_tail(cvals, tsum, logr, grid, ppf_vals, ppf_slopes, cdf_vals, cdf_slope):
    """Conditional-expectation survival estimate for the statistic at a fixed ``p``.

    Conditions on the ratios of the smallest order statistics to the largest
    scheduled one; the remaining Beta-distributed anchor is integrated out
    through tabulated log quantile and log cdf curves.
    """
    t0, step = float(grid[0]), float(grid[1])
    args = (np.ascontiguousarray(cvals, dtype=np.float64),
            np.ascontiguousarray(tsum, dtype=np.float64),
            np.ascontiguousarray(logr, dtype=np.float64),
            t0, step,
            np.ascontiguousarray(ppf_vals, dtype=np.float64),
            np.ascontiguousarray(ppf_slopes, dtype=np.float64),
            np.ascontiguousarray(cdf_vals, dtype=np.float64),
            float(cdf_slope))
    if use_numba():
        return _order_stat_tail_nb(*args)
    return _order_stat_tail_np(*args)
