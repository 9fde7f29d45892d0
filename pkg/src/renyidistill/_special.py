"""Log-domain tails of the Beta and Gamma laws with integer shape parameters.

scipy's regularised incomplete functions underflow long before the statistics
used here stop being meaningful, so each helper falls back to an exact finite
sum when the direct value is too small to trust.
"""

import numpy as np
from scipy import special

_DIRECT_FLOOR = 1e-250


def _finish(out, scalar):
    return float(out[0]) if scalar else out


def log_gamma_sf(a, x):
    """``log(1 - GammaCdf(a, 1)(x))`` for integer ``a >= 1``.

    Uses the Poisson identity ``Q(a, x) = exp(-x) * sum_{m<a} x^m / m!``.
    """
    a = int(a)
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    direct = special.gammaincc(a, x)
    out = np.log(np.maximum(direct, _DIRECT_FLOOR))
    small = direct < _DIRECT_FLOOR
    if np.any(small):
        xs = x[small]
        m = np.arange(a, dtype=np.float64)
        terms = m * np.log(xs)[:, None] - special.gammaln(m + 1.0)
        out[small] = -xs + special.logsumexp(terms, axis=1)
    return _finish(out, scalar)


def log_beta_cdf(a, b, x):
    """``log BetaCdf(a, b)(x)`` for positive integers ``a, b``.

    Small values use ``P(Binomial(a + b - 1, x) >= a)`` summed in log space.
    """
    a, b = int(a), int(b)
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    with np.errstate(divide="ignore"):
        direct = special.betainc(a, b, x)
        out = np.log(np.maximum(direct, _DIRECT_FLOOR))
    small = (direct < _DIRECT_FLOOR) & (x > 0)
    if np.any(small):
        n = a + b - 1
        xs = x[small]
        # terms decay geometrically past m = a when x is tiny
        m = np.arange(a, min(n, a + 400) + 1, dtype=np.float64)
        logpmf = (
            special.gammaln(n + 1.0) - special.gammaln(m + 1.0) - special.gammaln(n - m + 1.0)
            + m * np.log(xs)[:, None]
            + (n - m) * np.log1p(-xs)[:, None]
        )
        out[small] = special.logsumexp(logpmf, axis=1)
    out[x <= 0] = -np.inf
    return _finish(out, scalar)
