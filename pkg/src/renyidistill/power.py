"""Analytic power lower bounds for the outlier test and the inequalities behind them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.stats import norm

from ._special import log_beta_cdf
from .rtest import schedule


def lambda_k(beta, k):
    """Root mean square of the ``k`` largest ``|beta|``."""
    b = np.sort(np.abs(np.asarray(beta, dtype=np.float64)))[::-1]
    if not 1 <= k <= b.size:
        raise ValueError(f"need 1 <= k <= p, got k={k}, p={b.size}")
    return float(np.sqrt(np.mean(b[:k] ** 2)))


@dataclass(frozen=True)
class PowerBound:
    beta_tilde: float
    bound: float
    closed_form: float
    applicable: bool


def penalized_effect(lam, k, p, alpha):
    return lam - (math.sqrt(-2.0 * math.log(alpha) / k) + math.sqrt(2.0 * math.log(p)) + 1.0)


def power_bound_from_lambda(lam, k, p, alpha):
    """``Phi(beta~ sqrt(k))`` and the weaker ``1 - exp(-beta~^2 k / 2) / 4``; zero when ``beta~ <= 0``."""
    bt = penalized_effect(lam, k, p, alpha)
    if bt <= 0:
        return PowerBound(bt, 0.0, 0.0, False)
    return PowerBound(bt, float(norm.cdf(bt * math.sqrt(k))),
                      1.0 - 0.25 * math.exp(-bt * bt * k / 2.0),
                      True)


def power_lower_bound(beta, k, p=None, alpha=0.05):
    """Lower bound on the power of the single-``k`` test at level ``alpha``."""
    beta = np.asarray(beta, dtype=np.float64)
    p = beta.size if p is None else p
    return power_bound_from_lambda(lambda_k(beta, k), k, p, alpha)


def omnibus_lower_bound(beta, k, p=None, alpha=0.05):
    """Bound for the schedule statistic: best single-``i`` bound at level ``alpha / |I_k|``."""
    beta = np.asarray(beta, dtype=np.float64)
    p = beta.size if p is None else p
    sched = [int(i) for i in schedule(k) if i <= beta.size]
    level = alpha / len(schedule(k))
    best = PowerBound(-math.inf, 0.0, 0.0, False)
    for i in sched:
        pb = power_bound_from_lambda(lambda_k(beta, i), i, p, level)
        if pb.bound > best.bound or (not best.applicable and pb.beta_tilde > best.beta_tilde):
            best = pb
    return best


def _clamp01(x):
    return float(min(max(x, 0.0), 1.0))


def _pos(x):
    return max(x, 0.0)


@dataclass(frozen=True)
class ScheduleBounds:
    """Equal-coefficient bounds: ``m`` coefficients equal to ``beta1``, the rest zero."""

    small_k: float
    big_k: float
    oracle: float
    big_k_branch: int
    switch_ratio: float
    r: float
    j_star: int
    schedule: float = 0.0
    terms: tuple = field(default=())


def small_k_bound(beta1, k, p, alpha):
    """Bound when the scheduled ``k = 2**(j-1)`` does not exceed the number of signals."""
    j = int(round(math.log2(k))) + 1
    inner = _pos(beta1 - 2.0 * math.sqrt(math.log(p)) - math.sqrt(-(2.0 ** (-j + 2)) * j * math.log(alpha)) - 1.0)
    return _clamp01(1.0 - j / 4.0 * math.exp(-(2.0 ** (j - 2)) * inner * inner))


def oracle_bound(beta1, m, p, alpha):
    """Bound when the number of signals ``m`` is known."""
    jm = math.log2(m)
    inner = _pos(beta1 - 2.0 * math.sqrt(math.log(p)) - math.sqrt(-(2.0 ** (-jm + 1)) * math.log(alpha)) - 1.0)
    return _clamp01(1.0 - 0.25 * math.exp(-(2.0 ** (jm - 1)) * inner * inner))


def power_bound_schedule(beta1, m, k, p, alpha=0.05):
    """Evaluate the under-specified, over-specified and oracle bounds.

    Parameters
    ----------
    beta1 : float
        Common value of the ``m`` nonzero coefficients.
    k : int
        Power of two used by the schedule, ``k = 2**(j-1)``.

    Returns
    -------
    ScheduleBounds
        ``schedule`` is the bound that applies to this ``k``: ``small_k``
        when ``k <= m`` and ``big_k`` otherwise.
    """
    if k < 1 or (k & (k - 1)):
        raise ValueError("k must be a power of two")
    j = int(round(math.log2(k))) + 1
    j_star = int(math.floor(math.log2(m)))
    r = m / 2.0**j_star - 1.0
    root = 2.0 * math.sqrt(math.log(p))
    t1 = 2.0 ** (j_star - 2) * _pos(
        beta1 - root - math.sqrt(-(2.0 ** (-j_star + 2)) * j * math.log(alpha)) - 1.0) ** 2
    t2 = 2.0 ** (j_star - 1) * _pos(
        r * beta1 - root - math.sqrt(-(2.0 ** (-j_star + 1)) * j * math.log(alpha)) - 1.0) ** 2
    switch = (math.sqrt(2.0) - 1.0) * (root + math.sqrt(2.0) + beta1) / beta1
    branch = 0 if r < switch else 1
    chosen = (t1, t2)[branch]
    big = _clamp01(1.0 - j / 4.0 * math.exp(-chosen))
    small = small_k_bound(beta1, k, p, alpha)
    return ScheduleBounds(
        small_k=small,
        big_k=big,
        oracle=oracle_bound(beta1, m, p, alpha),
        big_k_branch=branch,
        switch_ratio=switch,
        r=r,
        j_star=j_star,
        schedule=small if k <= m else big,
        terms=(t1, t2),
    )


@dataclass
class InequalityReport:
    betacdf_worst_margin: float
    betacdf_witness: tuple
    chain_worst_margin: float
    pollak_worst_margin: float
    pollak_witness: float
    violations: list

    @property
    def ok(self):
        return not self.violations


def check_inequalities(ks=range(1, 33), ps=(10, 100, 1000), u_grid=None, z_grid=None):
    """Numerically verify the Beta-tail and Gaussian-tail bounds on grids.

    The Beta inequality is checked in its descending form
    ``log(1 - I_{p-k+1,k}(u)) <= k[log(1-u) + log p - log k] + k - 1 <= k[log(1-u) + log p]``;
    the Gaussian one is ``-log(1 - (2 Phi(z) - 1)) >= z^2 / 2``.  The
    Beta margin is that of the first inequality; ``chain_worst_margin`` is
    the margin of the second, which is zero at ``k = 1``.
    """
    if u_grid is None:
        u_grid = np.concatenate([np.logspace(-12, -1, 60), np.linspace(0.1, 0.9, 81),
                                 1.0 - np.logspace(-1, -12, 60)])
    if z_grid is None:
        z_grid = np.linspace(0.0, 37.0, 3701)
    u_grid = np.asarray(u_grid, dtype=np.float64)
    worst, witness, chain, violations = math.inf, None, math.inf, []
    for p in ps:
        for k in ks:
            if not 1 <= k < p:
                continue
            lhs = log_beta_cdf(k, p - k + 1, 1.0 - u_grid)  # = log(1 - I_{p-k+1,k}(u))
            mid = k * (np.log1p(-u_grid) + math.log(p) - math.log(k)) + (k - 1)
            rhs = k * (np.log1p(-u_grid) + math.log(p))
            margin = mid - lhs
            scale = np.maximum(1.0, np.abs(mid))
            idx = int(np.argmin(margin / scale))
            if margin[idx] < worst:
                worst, witness = float(margin[idx]), (k, p, float(u_grid[idx]))
            chain = min(chain, float(np.min(rhs - mid)))
            bad = np.flatnonzero((margin < -1e-9 * scale) | (rhs - mid < -1e-9 * scale))
            violations += [("betacdf", k, p, float(u_grid[b])) for b in bad]
    z = np.asarray(z_grid, dtype=np.float64)
    lhs = -(math.log(2.0) + special.log_ndtr(-np.abs(z)))
    pmargin = lhs - z * z / 2.0
    pidx = int(np.argmin(pmargin))
    violations += [("pollak", float(z[b])) for b in np.flatnonzero(pmargin < -1e-12 * np.maximum(1, z * z))]
    return InequalityReport(worst, witness, chain, float(pmargin[pidx]), float(z[pidx]), violations)
