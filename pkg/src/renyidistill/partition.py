"""Automatic layering of a design for power.

Predictors that share samples compete for them.  The greedy scan admits a
predictor into the current layer only while every member keeps at least
``omega'`` of its variance hard-assigned and ``omega~`` available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .design import UNASSIGNED, Layer, Partitioning
from .rng import as_generator


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionConfig:
    """Thresholds for the greedy partitioner.

    Parameters
    ----------
    q0, q1 : float
        Target and minimal inclusion probabilities, ``q1 <= q0``.
    k_ref : int
        Top-k size used for the available-variance threshold.
    order_layers_by_size : bool
        Sort finished layers largest first.
    """

    q0: float = 0.9
    q1: float = 0.8
    k_ref: int = 20
    order_layers_by_size: bool = True

    def __post_init__(self):
        if not (0.0 < self.q1 <= self.q0 < 1.0):
            raise PartitionError(f"need 0 < q1 <= q0 < 1, got q0={self.q0}, q1={self.q1}")
        if int(self.k_ref) != self.k_ref or self.k_ref < 1:
            raise PartitionError("k_ref must be a positive integer")


@dataclass(frozen=True)
class TopKApprox:
    """Normal approximation to the top-k inclusion probability."""

    k: int
    p: int

    def __post_init__(self):
        if not 1 <= self.k < self.p:
            raise PartitionError(f"need 1 <= k < p, got k={self.k}, p={self.p}")

    @property
    def mu(self):
        return float(norm.isf(self.k / (2.0 * self.p)))

    @property
    def sigma2(self):
        k, p = self.k, self.p
        return k * (p - k) / (4.0 * (p + 1) * (p * norm.pdf(self.mu)) ** 2)

    def g(self, beta):
        return norm.cdf((np.abs(beta) - self.mu) / np.sqrt(self.sigma2 + 1.0))

    def g_inv(self, q):
        return self.mu + np.sqrt(self.sigma2 + 1.0) * norm.ppf(q)


def g_approx(k, p, beta):
    """Probability that a predictor with effect ``beta`` enters the top ``k`` of ``p``."""
    return TopKApprox(int(k), int(p)).g(beta)


def g_mc_oracle(k, p, beta, reps=100_000, rng=None):
    """Monte Carlo estimate of ``P(|Z + beta| >= |Z|_(k))``.

    ``|Z|_(k)`` is the k-th largest absolute value of ``p - 1`` independent
    normals.  It is drawn exactly: its two-sided tail probability is
    ``Beta(k, p - k)``.
    """
    if reps < 10_000:
        raise ValueError("reps must be at least 1e4")
    if not 1 <= k < p:
        raise PartitionError(f"need 1 <= k < p, got k={k}, p={p}")
    rng = as_generator(rng)
    b = rng.beta(k, p - k, size=reps)
    thresh = norm.isf(b / 2.0)
    z = rng.standard_normal(reps)
    return float(np.mean(np.abs(z + beta) >= thresh))


def _ratio(k, p, q0, q1):
    approx = TopKApprox(k, p)
    lo, hi = approx.g_inv(q1), approx.g_inv(q0)
    if lo <= 0 or hi <= 0:
        raise PartitionError(
            f"q0={q0}, q1={q1} give a nonpositive effect threshold for k={k}, p={p}; "
            "use larger q values"
        )
    return float(min((lo / hi) ** 2, 1.0))


def omega_thresholds(cfg, m, k, pl):
    """Hard-assigned and available variance thresholds ``(omega', omega~)``.

    ``m`` counts the predictors overlapping a given one (itself included);
    with no competitor (``m <= 1``) or a single predictor left (``pl <= 1``)
    the corresponding threshold is 1.
    """
    w_prime = 1.0 if m <= 1 else _ratio(1, int(m), cfg.q0, cfg.q1)
    kk = min(int(k), int(pl) - 1)
    w_tilde = 1.0 if pl <= 1 or kk < 1 else _ratio(kk, int(pl), cfg.q0, cfg.q1)
    return w_prime, w_tilde


def overlap_counts(d):
    """Number of predictors sharing at least one sample with each predictor, itself included."""
    x = d.to_scipy()
    pattern = x.copy()
    pattern.data = np.ones_like(pattern.data)
    gram = (pattern.T @ pattern).tocsr()
    return np.diff(gram.indptr)


_FREE = -1
_SOFT = -2


class _LayerState:
    """Sample ownership and variance bookkeeping for the layer being built."""

    def __init__(self, d):
        self.d = d
        self.status = np.full(d.n, _FREE, dtype=np.int64)
        self.member = np.zeros(d.p, dtype=bool)
        self.nu_p = np.zeros(d.p)
        self.nu_t = np.zeros(d.p)
        self.omega_p = np.ones(d.p)
        r_indptr, r_indices, r_data = d.csr
        self.r_indptr = r_indptr.tolist()
        self.r_indices = r_indices.tolist()
        self.r_sq = (r_data**2).tolist()

    def row_members(self, i):
        member = self.member
        for e in range(self.r_indptr[i], self.r_indptr[i + 1]):
            j = self.r_indices[e]
            if member[j]:
                yield j, self.r_sq[e]


def _try_add(state, c, omega_t, tol=1e-12):
    """Admit predictor ``c`` if a feasible sample assignment exists; roll back otherwise."""
    d = state.d
    rows, vals = d.column(c)
    status, nu_p, nu_t, omega_p = state.status, state.nu_p, state.nu_t, state.omega_p
    undo_status = []
    undo_nu = []  # (j, nu_p, nu_t) before the first change in this trial

    def touch(j):
        undo_nu.append((j, nu_p[j], nu_t[j]))

    def rollback():
        for i, st in reversed(undo_status):
            status[i] = st
        for j, a, b in reversed(undo_nu):
            nu_p[j] = a
            nu_t[j] = b
        state.member[c] = False
        return False

    touch(c)
    state.member[c] = True
    nu_p[c] = 0.0
    nu_t[c] = 0.0
    hurt = set()
    for i, x in zip(rows.tolist(), vals.tolist()):
        x2 = x * x
        st = int(status[i])
        if st == _FREE:
            undo_status.append((i, st))
            status[i] = c
            nu_p[c] += x2
            nu_t[c] += x2
        elif st == _SOFT:
            nu_t[c] += x2
        else:
            undo_status.append((i, st))
            status[i] = _SOFT
            for j, xj2 in state.row_members(i):
                if j == c:
                    continue
                touch(j)
                if j == st:
                    nu_p[j] -= xj2
                    hurt.add(j)
                else:
                    nu_t[j] += xj2
            nu_t[c] += x2

    deficit = {j for j in hurt | {c} if nu_p[j] < omega_p[j] - tol}
    while deficit:
        m = min(deficit, key=lambda j: (nu_p[j] - omega_p[j], j))
        best = None
        mrows, mvals = d.column(m)
        for i, x in zip(mrows.tolist(), mvals.tolist()):
            if status[i] != _SOFT:
                continue
            x2 = x * x
            if best is not None and x2 <= best[1]:
                continue
            if all(nu_t[j] - xj2 >= omega_t - tol for j, xj2 in state.row_members(i) if j != m):
                best = (i, x2)
        if best is None:
            return rollback()
        i, x2 = best
        undo_status.append((i, _SOFT))
        status[i] = m
        touch(m)
        nu_p[m] += x2
        for j, xj2 in state.row_members(i):
            if j != m:
                touch(j)
                nu_t[j] -= xj2
        if nu_p[m] >= omega_p[m] - tol:
            deficit.discard(m)
    if nu_t[c] < omega_t - tol:
        return rollback()
    return True


def _finish_layer(state, n):
    xi = np.full(n, UNASSIGNED, dtype=np.int64)
    eta = np.zeros(n, dtype=np.int8)
    hard = state.status >= 0
    xi[hard] = state.status[hard]
    eta[hard] = 1
    for i in np.flatnonzero(state.status == _SOFT):
        xi[i] = min(j for j, _ in state.row_members(int(i)))
    return Layer(xi, eta)


@dataclass(frozen=True, eq=False)
class LayerThresholds:
    """Thresholds each layer was built against; ``omega_prime`` follows ``members``."""

    members: np.ndarray
    omega_prime: np.ndarray
    omega_tilde: float


def greedy_partition(d, cfg=None, priority=None, return_thresholds=False):
    """Build layers by scanning predictors from densest to sparsest.

    Density is measured by the l4 norm of the unit-norm column (smaller is
    denser).  Predictors in ``priority`` are scanned first, in the given
    order.  With ``return_thresholds`` the per-layer thresholds are returned
    alongside the partitioning.
    """
    cfg = cfg or PartitionConfig()
    l4 = d.l4_norms()
    order = np.lexsort((np.arange(d.p), l4))
    if priority is not None:
        pri = [int(j) for j in priority]
        seen = set(pri)
        order = np.array(pri + [int(j) for j in order if int(j) not in seen], dtype=np.int64)
    overlap = overlap_counts(d)
    assigned = np.zeros(d.p, dtype=bool)
    built = []
    while not assigned.all():
        todo = order[~assigned[order]]
        pl = int(todo.size)
        state = _LayerState(d)
        _, omega_t = omega_thresholds(cfg, 1, cfg.k_ref, pl)
        cache = {}
        for c in todo.tolist():
            m = min(int(overlap[c]), pl)
            if m not in cache:
                cache[m] = omega_thresholds(cfg, m, cfg.k_ref, pl)[0]
            state.omega_p[c] = cache[m]
            if _try_add(state, c, omega_t):
                assigned[c] = True
        layer = _finish_layer(state, d.n)
        built.append((layer, LayerThresholds(layer.members, state.omega_p[layer.members].copy(), omega_t)))
    if cfg.order_layers_by_size:
        built.sort(key=lambda item: -item[0].size)
    rho = Partitioning(tuple(b[0] for b in built))
    if return_thresholds:
        return rho, [b[1] for b in built]
    return rho
