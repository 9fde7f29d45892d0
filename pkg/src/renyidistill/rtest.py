"""The Rényi transform, the outlier statistic, its null tables, and baseline global tests."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import special, stats
from scipy.interpolate import PchipInterpolator
from scipy.sparse.csgraph import connected_components

from . import _kernels
from ._special import log_beta_cdf, log_gamma_sf
from .rng import as_generator

TABLE_VERSION = 1
METHODS = ("partial_sums", "order_statistics")
TABLE_DIR = "data/null_tables"


class NullTableError(ValueError):
    pass


def _check_u(u):
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0:
        raise ValueError("p-value vector is empty")
    if np.any(~(u > 0.0)) or np.any(u > 1.0):
        raise ValueError("p-values must lie in (0, 1]")
    return u


def schedule(k):
    """Geometric schedule ``(1, 2, 4, ..., 2**ceil(log2 k))``."""
    k = int(k)
    if k < 1:
        raise ValueError("k must be at least 1")
    top = (k - 1).bit_length()
    return 2 ** np.arange(top + 1)


def _smallest_sorted(u, count):
    """Ascending ``count`` smallest entries along the last axis."""
    if count < u.shape[-1]:
        u = np.partition(u, count - 1, axis=-1)[..., :count]
    return np.sort(u, axis=-1)


def renyi_transform(u, k):
    """Map the ``k`` smallest p-values to iid unit exponentials under the null.

    Parameters
    ----------
    u : array_like, shape (p,)
        p-values.
    k : int
        Number of components, ``1 <= k <= p``.

    Returns
    -------
    tau : ndarray, shape (k,)
        ``tau_i = i log(u_(i+1) / u_(i))`` for ``i < k`` and
        ``tau_k = -log BetaCdf(k, p - k + 1)(u_(k))``.
    """
    u = _check_u(u)
    p = u.size
    if not 1 <= k <= p:
        raise ValueError(f"need 1 <= k <= p, got k={k}, p={p}")
    t = _smallest_sorted(u, k)
    i = np.arange(1, k, dtype=np.float64)
    tau = np.empty(k)
    tau[:-1] = i * (np.log(t[1:]) - np.log(t[:-1]))
    tau[-1] = -log_beta_cdf(k, p - k + 1, t[-1])
    return tau


def _rho_tilde(t, p, sched):
    """Re-anchored sums for every ``i`` in ``sched``; ``t`` sorted along the last axis."""
    logt = np.log(t)
    csum = np.cumsum(logt, axis=-1)
    out = np.empty(t.shape[:-1] + (len(sched),))
    for s, i in enumerate(sched):
        head = (i - 1) * logt[..., i - 1] - (csum[..., i - 2] if i > 1 else 0.0)
        out[..., s] = head - log_beta_cdf(i, p - i + 1, t[..., i - 1])
    return out


def _stat_from_tilde(tilde, sched):
    parts = np.stack([-log_gamma_sf(i, tilde[..., s]) for s, i in enumerate(sched)], axis=-1)
    return parts.max(axis=-1)


def renyi_stat(u, k):
    """Outlier statistic: the largest Gamma-tail score along the schedule of ``k``.

    Accepts a single vector or a 2-d batch (one vector per row).
    """
    u = _check_u(u)
    p = u.shape[-1]
    sched = schedule(k)
    if sched[-1] > p:
        raise ValueError(f"schedule for k={k} reaches {sched[-1]} > p={p}")
    t = _smallest_sorted(u, int(sched[-1]))
    tilde = _rho_tilde(t, p, sched)
    out = _stat_from_tilde(tilde, sched)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# null tables


@dataclass(frozen=True, eq=False)
class NullTable:
    """Tabulated survival function of the outlier statistic.

    ``-log p`` is a monotone cubic through ``(knots_x, knots_y)`` up to
    ``fit_boundary`` and ``tail_intercept + tail_slope * x`` beyond it.
    """

    k: int
    sample_count: int
    knots_x: np.ndarray
    knots_y: np.ndarray
    tail_slope: float
    tail_intercept: float
    fit_boundary: float
    seed: int
    method: str = "partial_sums"
    p: int | None = None
    version: int = TABLE_VERSION

    def __post_init__(self):
        x = np.asarray(self.knots_x, dtype=np.float64)
        y = np.asarray(self.knots_y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise NullTableError("knots must be two equal-length 1-d arrays with >= 2 points")
        if np.any(np.diff(x) <= 0):
            raise NullTableError("knot positions must be strictly increasing")
        if np.any(np.diff(y) < 0):
            raise NullTableError("-log p must be nondecreasing across knots")
        if not self.tail_slope > 0:
            raise NullTableError("tail slope must be positive")
        if self.method not in METHODS:
            raise NullTableError(f"unknown table method {self.method!r}")
        object.__setattr__(self, "knots_x", x)
        object.__setattr__(self, "knots_y", y)

    @property
    def schedule(self):
        return schedule(self.k)

    @cached_property
    def _spline(self):
        return PchipInterpolator(self.knots_x, self.knots_y, extrapolate=False)

    def neglogp(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape)
        body = (x >= self.knots_x[0]) & (x <= self.fit_boundary)
        out[body] = self._spline(x[body])
        tail = x > self.fit_boundary
        out[tail] = self.tail_intercept + self.tail_slope * x[tail]
        out[np.isnan(x)] = np.nan
        return np.maximum(out, 0.0)

    def save(self, path):
        lines = [
            f"version {self.version}",
            f"k {self.k}",
            f"samples {self.sample_count}",
            f"seed {self.seed}",
            f"method {self.method}",
            f"p {self.p if self.p is not None else 0}",
            f"fit_boundary {self.fit_boundary!r}",
            f"tail_slope {self.tail_slope!r}",
            f"tail_intercept {self.tail_intercept!r}",
        ]
        lines += [f"{float(a)!r}  {float(b)!r}" for a, b in zip(self.knots_x, self.knots_y)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        header, xs, ys = {}, [], []
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise NullTableError(f"line {lineno}: expected two fields")
            if parts[0][0].isalpha():
                header[parts[0]] = parts[1]
            else:
                xs.append(float(parts[0]))
                ys.append(float(parts[1]))
        required = ("version", "k", "samples", "seed", "fit_boundary", "tail_slope", "tail_intercept")
        missing = [r for r in required if r not in header]
        if missing:
            raise NullTableError(f"table header missing {', '.join(missing)}")
        p = int(header.get("p", 0))
        return cls(
            k=int(header["k"]),
            sample_count=int(header["samples"]),
            knots_x=np.array(xs),
            knots_y=np.array(ys),
            tail_slope=float(header["tail_slope"]),
            tail_intercept=float(header["tail_intercept"]),
            fit_boundary=float(header["fit_boundary"]),
            seed=int(header["seed"]),
            method=header.get("method", "partial_sums"),
            p=p or None,
            version=int(header["version"]),
        )


def _crossing_points(x, sched):
    """``c_i(x)``: the Gamma(i) upper quantile at tail probability ``exp(-x)``."""
    x = np.asarray(x, dtype=np.float64)
    return np.stack([special.gammainccinv(int(i), np.exp(-x)) for i in sched], axis=-1)


class _PartialSums:
    """Nested partial sums of iid unit exponentials."""

    def __init__(self, sched, n_draws, rng, chunk=200_000):
        top = int(sched[-1])
        idx = np.asarray(sched) - 1
        self.rest = np.empty((n_draws, len(sched)))
        self.stat = np.empty(n_draws)
        for lo in range(0, n_draws, chunk):
            hi = min(lo + chunk, n_draws)
            e = rng.standard_exponential((hi - lo, top))
            s = np.cumsum(e, axis=1)[:, idx]
            self.rest[lo:hi] = s - e[:, :1]
            self.stat[lo:hi] = _stat_from_tilde(s, sched)
        self.sched = sched

    def survival(self, x):
        return _kernels.partial_sum_tail(_crossing_points(x, self.sched), self.rest)


class _OrderStatistics:
    """Ratios of the smallest uniform order statistics at a fixed ``p``.

    Conditioning on ``u_(i) / u_(K)`` leaves ``u_(K) ~ Beta(K, p - K + 1)``,
    which is integrated out exactly up to grid interpolation.
    """

    GRID_LO, GRID_HI, GRID_N = 1e-12, 700.0, 8192

    def __init__(self, sched, p, n_draws, rng, chunk=50_000):
        top = int(sched[-1])
        idx = np.asarray(sched) - 1
        self.sched, self.p = sched, p
        self.tsum = np.empty((n_draws, len(sched)))
        self.logr = np.empty((n_draws, len(sched)))
        self.stat = np.empty(n_draws)
        for lo in range(0, n_draws, chunk):
            hi = min(lo + chunk, n_draws)
            g = np.cumsum(rng.standard_exponential((hi - lo, top)), axis=1)
            logr = np.log(g) - np.log(g[:, -1:])
            csum = np.cumsum(logr, axis=1)
            i = np.asarray(sched, dtype=np.float64)
            prev = np.where(idx > 0, csum[:, np.maximum(idx - 1, 0)], 0.0)
            self.tsum[lo:hi] = (i - 1.0) * logr[:, idx] - prev
            self.logr[lo:hi] = logr[:, idx]
            h = rng.beta(top, p - top + 1, size=hi - lo)
            tilde = np.empty((hi - lo, len(sched)))
            for s, ii in enumerate(sched):
                tilde[:, s] = self.tsum[lo:hi, s] - log_beta_cdf(ii, p - ii + 1, np.exp(logr[:, ii - 1]) * h)
            self.stat[lo:hi] = _stat_from_tilde(tilde, sched)
        self._grids()

    def _grids(self):
        t = np.linspace(math.log(self.GRID_LO), math.log(self.GRID_HI), self.GRID_N)
        self.grid = (t[0], t[1] - t[0])
        e = np.exp(t)
        p = self.p
        vals = []
        for i in self.sched:
            i = int(i)
            y = np.exp(-e)
            ppf = special.betaincinv(i, p - i + 1, y)
            # tiny y: invert the leading power law of the Beta cdf
            lead = (-e + math.log(i) + special.betaln(i, p - i + 1)) / i
            vals.append(np.where(ppf > 1e-280, np.log(np.maximum(ppf, 1e-300)), lead))
        self.ppf_vals = np.array(vals)
        self.ppf_slopes = -1.0 / np.asarray(self.sched, dtype=np.float64)
        top = int(self.sched[-1])
        self.cdf_vals = log_beta_cdf(top, p - top + 1, np.exp(-e))
        self.cdf_slope = -float(top)

    def survival(self, x):
        return _kernels.order_stat_tail(
            _crossing_points(x, self.sched), self.tsum, self.logr, self.grid,
            self.ppf_vals, self.ppf_slopes, self.cdf_vals, self.cdf_slope,
        )


def simulate_null_stats(k, count, rng=None, method="order_statistics", p=None, chunk=100_000):
    """Independent null draws of the outlier statistic.

    ``"order_statistics"`` draws the smallest order statistics of ``p``
    uniforms exactly from exponential spacings and evaluates the statistic;
    ``"partial_sums"`` draws the nested-partial-sum surrogate.
    """
    rng = as_generator(rng)
    sched = schedule(k)
    top = int(sched[-1])
    idx = np.asarray(sched) - 1
    out = np.empty(int(count))
    for lo in range(0, out.size, chunk):
        hi = min(lo + chunk, out.size)
        g = np.cumsum(rng.standard_exponential((hi - lo, top)), axis=1)
        if method == "partial_sums":
            out[lo:hi] = _stat_from_tilde(g[:, idx], sched)
        elif method == "order_statistics":
            if p is None or p < top:
                raise ValueError("order_statistics draws need p >= the schedule's largest index")
            total = g[:, -1] + (rng.standard_gamma(p + 1 - top, size=hi - lo) if p + 1 > top else 0.0)
            out[lo:hi] = _stat_from_tilde(_rho_tilde(g / total[:, None], p, sched), sched)
        else:
            raise ValueError(f"method must be one of {METHODS}")
    return out


def build_null_table(k, sample_count=1_000_000, seed=0, method="partial_sums", p=None,
                     n_knots=160, tail_points=40):
    """Simulate the null law of the outlier statistic and tabulate ``-log p``.

    Parameters
    ----------
    k : int
        Drives the schedule ``(1, 2, 4, ...)``.
    sample_count : int
        Monte Carlo draws, at least ``10**5``.
    seed : int
    method : {"partial_sums", "order_statistics"}
        ``"partial_sums"`` simulates nested sums of unit exponentials and does
        not depend on ``p``.  ``"order_statistics"`` simulates the statistic
        of ``p`` uniforms directly and needs ``p``.
    n_knots, tail_points : int
        Body knot count and the number of points in the tail regression.

    Notes
    -----
    Knot positions are empirical quantiles of the simulated statistic; the
    tabulated survival values are conditional expectations given all but one
    of the simulated variables, which are smooth in ``x`` and far less noisy
    than the empirical cdf.
    """
    if sample_count < 100_000:
        raise ValueError("sample_count must be at least 1e5")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    sched = schedule(k)
    rng = np.random.default_rng(seed)
    if method == "partial_sums":
        sim = _PartialSums(sched, sample_count, rng)
        p = None
    else:
        if p is None or p < sched[-1]:
            raise ValueError("order_statistics tables need p >= the schedule's largest index")
        sim = _OrderStatistics(sched, int(p), sample_count, rng)

    srt = np.sort(sim.stat)
    boundary = float(srt[sample_count - 100])
    levels = np.linspace(0.02, math.log(sample_count / 100.0), n_knots)
    qx = np.quantile(srt, 1.0 - np.exp(-levels))
    qx = qx[qx < boundary]
    knots_x = np.unique(np.concatenate(([0.0], qx[qx > 0.0], [boundary])))
    surv = sim.survival(knots_x)
    knots_y = np.maximum.accumulate(-np.log(np.clip(surv, 1e-300, 1.0)))
    knots_y[0] = max(knots_y[0], 0.0)

    tail_lo = float(srt[max(sample_count - 10_000, 0)])
    tx = np.linspace(tail_lo, float(srt[-1]), tail_points)
    ty = -np.log(np.clip(sim.survival(tx), 1e-300, 1.0))
    yb = float(knots_y[-1])
    dx = tx - boundary
    slope = float(np.dot(dx, ty - yb) / np.dot(dx, dx))
    if not slope > 0:
        raise NullTableError(f"tail fit produced a nonpositive slope {slope}")
    return NullTable(
        k=int(k), sample_count=int(sample_count), knots_x=knots_x, knots_y=knots_y,
        tail_slope=slope, tail_intercept=yb - slope * boundary, fit_boundary=boundary,
        seed=int(seed), method=method, p=p,
    )


def renyi_pvalue(stat, table):
    """p-value of ``stat`` under ``table``; 1 below the first knot."""
    scalar = np.ndim(stat) == 0
    out = np.exp(-table.neglogp(np.atleast_1d(stat)))
    out = np.minimum(out, 1.0)
    return float(out[0]) if scalar else out


def table_filename(k, method="partial_sums", p=None):
    top = int(schedule(k)[-1])
    if method == "partial_sums":
        return f"renyi_k{top}.txt"
    return f"renyi_k{top}_p{int(p)}.txt"


_TABLE_CACHE = {}


def load_table(k, method="partial_sums", p=None, directory=None):
    """Load a shipped (or user-supplied) table whose schedule matches ``k``."""
    name = table_filename(k, method, p)
    if directory is None:
        path = resources.files("renyidistill").joinpath(TABLE_DIR, name)
    else:
        path = Path(directory) / name
    key = str(path)
    if key not in _TABLE_CACHE:
        if not path.is_file():
            raise NullTableError(
                f"no null table for k={k} (schedule top {schedule(k)[-1]}, method {method}"
                + (f", p={p}" if p else "") + f"); expected {name}"
            )
        _TABLE_CACHE[key] = NullTable.load(path)
    return _TABLE_CACHE[key]


def default_table(k, p):
    """Shipped table for ``(k, p)``: the exact ``order_statistics`` table when one
    exists for this ``p``, otherwise the ``partial_sums`` surrogate.

    The surrogate is exact for ``k = 1`` only; a warning is issued otherwise.
    """
    try:
        return load_table(k, "order_statistics", p)
    except NullTableError:
        if int(schedule(k)[-1]) > 1:
            warnings.warn(
                f"no order_statistics table for k={k}, p={p}; using the partial_sums "
                "surrogate, which is approximate for k > 1", stacklevel=3)
        return load_table(k)


def renyi_test(u, k, table=None):
    """Statistic and p-value for a p-value vector ``u``.

    Without ``table`` the shipped table is chosen by :func:`default_table`.
    """
    u = _check_u(u)
    if table is None:
        table = default_table(k, u.shape[-1])
    if not np.array_equal(table.schedule, schedule(k)):
        raise NullTableError(f"table built for k={table.k} does not match the schedule of k={k}")
    if table.p is not None and table.p != u.shape[-1]:
        raise NullTableError(f"table built for p={table.p}, got {u.shape[-1]} p-values")
    stat = renyi_stat(u, k)
    return stat, renyi_pvalue(stat, table)


# ---------------------------------------------------------------------------
# baselines


def baseline_minp(u):
    """Šidák-adjusted minimum p-value, ``1 - (1 - min u)^p`` (batched along the last axis)."""
    u = _check_u(u)
    p = u.shape[-1]
    return -np.expm1(p * np.log1p(-np.min(u, axis=-1)))


def baseline_cauchy(u):
    """Cauchy combination: mean of ``tan((1/2 - u) pi)`` referred to a standard Cauchy."""
    u = _check_u(u)
    stat = np.mean(1.0 / np.tan(np.pi * u), axis=-1)
    with np.errstate(divide="ignore"):
        pos = np.arctan(1.0 / stat) / np.pi
    out = np.where(stat > 0, pos, 0.5 + np.arctan(-stat) / np.pi)
    return out


def baseline_chisq(w):
    """Upper chi-square tail of ``sum w^2`` with ``len(w)`` degrees of freedom."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] == 0:
        raise ValueError("need at least one score")
    return stats.chi2.sf(np.sum(w * w, axis=-1), w.shape[-1])


@dataclass(eq=False)
class LRTWhitener:
    """Whitened scores for the Gaussian likelihood-ratio test of all coefficients.

    ``z = L^{-1} X_S^T y`` with ``L L^T = X_S^T X_S`` computed per connected
    block of the Gram matrix, so ``sum z^2`` is the LRT statistic and is
    chi-square with ``|S|`` degrees of freedom under the null.
    """

    design: object
    subset: np.ndarray | None = None
    _blocks: list = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        d = self.design
        cols = np.arange(d.p) if self.subset is None else np.asarray(self.subset, dtype=np.int64)
        self.subset = cols
        x = d.to_scipy()[:, cols].tocsc()
        gram = (x.T @ x).tocsr()
        ncomp, labels = connected_components(gram, directed=False)
        order = np.argsort(labels, kind="stable")
        sizes = np.bincount(labels, minlength=ncomp)
        starts = np.concatenate(([0], np.cumsum(sizes)))
        by_size = {}
        for c in range(ncomp):
            by_size.setdefault(int(sizes[c]), []).append(order[starts[c]:starts[c + 1]])
        self._blocks = []
        dense = gram.toarray() if cols.size <= 2000 else None
        for size, members in by_size.items():
            idx = np.array(members)  # (blocks, size)
            if dense is not None:
                g = dense[idx[:, :, None], idx[:, None, :]]
            else:
                g = np.stack([gram[m][:, m].toarray() for m in idx])
            linv = np.linalg.inv(np.linalg.cholesky(g))
            self._blocks.append((idx, linv))

    @property
    def dof(self):
        return int(self.subset.size)

    def scores(self, y):
        xty = self.design.rmatvec(y)[self.subset]
        z = np.empty(self.subset.size)
        for idx, linv in self._blocks:
            z[idx] = np.einsum("bij,bj->bi", linv, xty[idx])
        return z

    def pvalue(self, y):
        return float(baseline_chisq(self.scores(y)))
