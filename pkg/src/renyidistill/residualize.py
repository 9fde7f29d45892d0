"""Response preparation before distillation: rank-to-normal maps and covariate removal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .rng import as_generator

RANK_MODES = ("resampled", "fixed")


def ranks(y):
    """1-based ranks with ties broken by original index."""
    y = np.asarray(y, dtype=np.float64)
    r = np.empty(y.size, dtype=np.int64)
    r[np.argsort(y, kind="stable")] = np.arange(1, y.size + 1)
    return r


def rank_normalize(y, mode="fixed", rng=None):
    """Replace ``y`` by normal scores that share its ranks.

    Parameters
    ----------
    mode : {"fixed", "resampled"}
        ``"fixed"`` uses ``QuantileNormal((r - 3/8) / (n + 1/4))``;
        ``"resampled"`` assigns the sorted values of ``n`` fresh standard
        normals by rank, which is exactly normal under exchangeability.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n == 0:
        raise ValueError("cannot rank-normalise an empty response")
    r = ranks(y)
    if mode in ("fixed", "fixedQuantile", "fixed_quantile"):
        return norm.ppf((r - 0.375) / (n + 0.25))
    if mode == "resampled":
        w = np.sort(as_generator(rng).standard_normal(n))
        return w[r - 1]
    raise ValueError(f"unknown rank mode {mode!r}")


@dataclass(frozen=True, eq=False)
class CovariateBasis:
    """Orthonormal basis ``Q`` of the covariate column space (``n x q``)."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 2:
            raise ValueError("basis must be a 2-d array")
        gram = q.T @ q
        if not np.allclose(gram, np.eye(q.shape[1]), atol=1e-10, rtol=0):
            raise ValueError("basis columns are not orthonormal")
        object.__setattr__(self, "q", q)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def q_dim(self):
        return self.q.shape[1]

    @classmethod
    def from_covariates(cls, a, rank_tol=1e-10, intercept=False):
        """Modified Gram-Schmidt with one reorthogonalisation pass.

        Columns that are numerically dependent on earlier ones are dropped.
        """
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        if intercept:
            a = np.column_stack([np.ones(a.shape[0]), a])
        basis = []
        for col in a.T:
            v = col.copy()
            scale = np.linalg.norm(v)
            if scale == 0:
                continue
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv <= rank_tol * scale:
                continue
            basis.append(v / nv)
        if not basis:
            raise ValueError("covariates span no directions")
        return cls(np.column_stack(basis))

    @classmethod
    def intercept(cls, n):
        return cls(np.full((n, 1), 1.0 / np.sqrt(n)))


def residualize_covariates(y, basis, rng=None, eps_star=None):
    """Remove the covariate fit and add noise back inside the covariate space.

    Returns ``e + sigma * Q Q^T eps*`` where ``e`` is the least-squares
    residual and ``sigma`` the usual unbiased noise estimate, so that the
    output has covariance ``sigma^2 I`` when the noise is Gaussian.
    """
    y = np.asarray(y, dtype=np.float64)
    q = basis.q
    n, qd = q.shape
    if y.shape != (n,):
        raise ValueError(f"response has shape {y.shape}, basis has {n} rows")
    if n <= qd:
        raise ValueError(f"need n > q, got n={n}, q={qd}")
    coef = q.T @ y
    resid = y - q @ coef
    sigma2 = max(float(y @ y - coef @ coef), 0.0) / (n - qd)
    if eps_star is None:
        eps_star = as_generator(rng).standard_normal(n)
    eps_star = np.asarray(eps_star, dtype=np.float64)
    return resid + np.sqrt(sigma2) * (q @ (q.T @ eps_star))


def prepare_response(y, basis=None, rank_mode=None, rng=None):
    """Residualise on ``basis`` (if any), then rank-normalise (if requested)."""
    rng = as_generator(rng)
    out = np.asarray(y, dtype=np.float64)
    if basis is not None:
        out = residualize_covariates(out, basis, rng)
    if rank_mode not in (None, "off"):
        out = rank_normalize(out, rank_mode, rng)
    return out
