"""Filtration: invertible splits of sorted uniforms and the exchange with a simulated copy.

Every filter maps the ascending order statistics ``T`` of ``p`` uniforms to a
tuple ``(P, Q, R)`` whose parts are mutually independent when ``T`` is null.
``P`` never crosses between the real and simulated streams, ``Q`` always does,
and slot ``R_i`` crosses when the real ``Q`` selects it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .rng import as_generator

VARIANTS = ("k1", "k2", "k3", "k4")

_ALIASES = {
    "k1": "k1", "smallestkratios": "k1", "smallest_k_ratios": "k1",
    "k2": "k2", "smallestkuniforms": "k2", "smallest_k_uniforms": "k2",
    "k3": "k3", "elementwiseratios": "k3", "elementwise_ratios": "k3",
    "k4": "k4", "generaltopk": "k4", "general_top_k": "k4", "topk": "k4",
}


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    """Which filter to apply and its parameters.

    Parameters
    ----------
    variant : str
        ``"k1"`` (smallest-k ratios), ``"k2"`` (smallest-k uniforms),
        ``"k3"`` (elementwise ratios) or ``"k4"`` (general top-k).  The long
        names are accepted too.
    k : int
        Number of leading order statistics the filter may exchange.
    c1, c2 : float
        Selection thresholds for the ratio slots and for the k-th slot of
        ``k4``.  Ignored by ``k1`` and ``k2``.
    """

    variant: str = "k4"
    k: int = 1
    c1: float = 0.05
    c2: float = 0.05

    def __post_init__(self):
        key = str(self.variant).strip().lower().replace("-", "_").replace(" ", "")
        if key not in _ALIASES:
            raise FilterError(f"unknown filter variant {self.variant!r}")
        object.__setattr__(self, "variant", _ALIASES[key])
        if int(self.k) != self.k or self.k < 1:
            raise FilterError(f"k must be a positive integer, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        for name in ("c1", "c2"):
            c = float(getattr(self, name))
            if not 0.0 <= c <= 1.0:
                raise FilterError(f"{name} must lie in [0, 1], got {c}")
            object.__setattr__(self, name, c)

    @property
    def has_selection(self):
        return self.variant in ("k3", "k4")

    def clamp(self, p):
        """Copy with ``k`` reduced to at most ``p``."""
        if self.k <= p:
            return self
        return FilterSpec(self.variant, p, self.c1, self.c2)

    @classmethod
    def parse(cls, text):
        """Parse ``variant,k[,c1[,c2]]`` or ``variant=..,k=..`` strings."""
        parts = [s.strip() for s in str(text).replace(";", ",").split(",") if s.strip()]
        if not parts:
            raise FilterError("empty filter specification")
        kw = {}
        positional = ["variant", "k", "c1", "c2"]
        for idx, part in enumerate(parts):
            if "=" in part:
                name, value = (s.strip() for s in part.split("=", 1))
            else:
                if idx >= len(positional):
                    raise FilterError(f"too many fields in {text!r}")
                name, value = positional[idx], part
            kw[name.lower()] = value
        return cls(kw.get("variant", "k4"), int(kw.get("k", 1)),
                   float(kw.get("c1", 0.05)), float(kw.get("c2", 0.05)))


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Components ``(P, Q, R)`` of one sorted vector.

    ``q`` holds ratios (``k1``), uniforms (``k2``) or 0/1 selection bits
    (``k3``, ``k4``); ``r`` is empty for ``k1`` and ``k2``.
    """

    variant: str
    k: int
    n: int
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray

    def same_parts(self, other):
        return (
            self.variant == other.variant and self.k == other.k and self.n == other.n
        )


def affine_g(x, c):
    """``(x - c) / (1 - c)``, taken as 1 when ``c == 1``."""
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    denom = 1.0 - c
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0.0, (x - c) / np.where(denom > 0.0, denom, 1.0), 1.0)
    return out


def _affine_g_inv(y, c):
    return c + (1.0 - c) * y


def _check_sorted(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise FilterError("order statistics must be a nonempty 1-d array")
    if np.any(np.diff(t) < 0):
        raise FilterError("order statistics must be sorted ascending")
    if t[0] <= 0.0 or t[-1] > 1.0 or not np.all(np.isfinite(t)):
        raise FilterError("order statistics must lie in (0, 1]")
    return t


def _split_bits(g, c):
    q = (g <= c).astype(np.int8)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(q == 1, g / (c if c > 0 else 1.0), affine_g(g, c))
    return q, r


def _merge_bits(q, r, c):
    return np.where(q == 1, c * r, _affine_g_inv(r, c))


def _beta_cdf(k, n, x):
    return special.betainc(k, n - k + 1, x)


def _beta_ppf(k, n, y):
    return special.betaincinv(k, n - k + 1, y)


def decompose(spec, t):
    """Split sorted uniforms ``t`` into ``(P, Q, R)`` according to ``spec``."""
    t = _check_sorted(t)
    n = t.size
    k = spec.k
    if k > n:
        raise FilterError(f"filter k={k} exceeds the number of order statistics {n}")
    anchor = t[k] if k < n else 1.0
    head = t[:k]
    if spec.variant == "k1":
        return Decomposition("k1", k, n, t[k:].copy(), head / anchor, np.empty(0))
    if spec.variant == "k2":
        return Decomposition("k2", k, n, affine_g(t[k:], t[k - 1]), head.copy(), np.empty(0))
    nxt = np.append(t[1:k], anchor)  # T_{j+1} for j = 1..k
    expo = np.arange(1, k + 1, dtype=np.float64)
    g = (head / nxt) ** expo
    if spec.variant == "k3":
        q, r = _split_bits(g, spec.c1)
        return Decomposition("k3", k, n, t[k:].copy(), q, r)
    # k4: ratio slots below k, Beta-cdf slot at k, tail rescaled by T_k
    q = np.empty(k, dtype=np.int8)
    r = np.empty(k)
    q[:-1], r[:-1] = _split_bits(g[:-1], spec.c1)
    gk = np.array([_beta_cdf(k, n, t[k - 1])])
    q[-1:], r[-1:] = _split_bits(gk, spec.c2)
    return Decomposition("k4", k, n, affine_g(t[k:], t[k - 1]), q, r)


def compose(spec, d, refs=()):
    """Invert :func:`decompose`.

    ``refs`` is a sequence of ``(Decomposition, t)`` pairs.  Where every input
    feeding a coordinate matches a reference exactly, that reference's
    coordinate is copied verbatim, so untouched values survive bit for bit.
    """
    n, k = d.n, d.k
    refs = [(rd, np.asarray(rt, dtype=np.float64)) for rd, rt in refs if rd.same_parts(d)]
    t = np.empty(n)

    if d.variant in ("k1", "k3"):
        t[k:] = d.p
    else:
        if d.variant == "k2":
            tk = d.q[k - 1]
        else:
            gk = _merge_bits(d.q[-1:], d.r[-1:], spec.c2)[0]
            tk = float(_beta_ppf(k, n, gk))
        for rd, rt in refs:
            if d.q[k - 1] == rd.q[k - 1] and (d.variant == "k2" or d.r[-1] == rd.r[-1]):
                tk = rt[k - 1]
                break
        upper = _affine_g_inv(d.p, tk)
        for rd, rt in refs:
            fx = (d.p == rd.p) & (tk == rt[k - 1])
            upper[fx] = rt[k:][fx]
        t[k:] = upper

    if d.variant == "k1":
        anchor = t[k] if k < n else 1.0
        head = d.q * anchor
        for rd, rt in refs:
            ref_anchor = rt[k] if k < n else 1.0
            if anchor == ref_anchor:
                fx = d.q == rd.q
                head[fx] = rt[:k][fx]
        t[:k] = head
    elif d.variant == "k2":
        t[:k] = d.q
        t[k - 1] = tk
    else:
        sel_c = np.full(k, spec.c1)
        top = k if d.variant == "k3" else k - 1
        if d.variant == "k4":
            t[k - 1] = tk
        g = _merge_bits(d.q, d.r, sel_c)
        for j in range(top - 1, -1, -1):
            above = t[j + 1] if j + 1 < n else 1.0
            val = g[j] ** (1.0 / (j + 1)) * above
            for rd, rt in refs:
                ref_above = rt[j + 1] if j + 1 < n else 1.0
                if d.q[j] == rd.q[j] and d.r[j] == rd.r[j] and above == ref_above:
                    val = rt[j]
                    break
            t[j] = val
    return t


def exchange(spec, d_real, d_sim, t_real=None, t_sim=None):
    """Mix real and simulated components into ``(t_extract, t_tilde)``.

    ``t_tilde`` keeps the real tail, receives the simulated ``Q`` and the real
    ``R`` slots that were not selected.  ``t_extract`` receives the real ``Q``
    and the real ``R`` slots that were selected.  Passing the original sorted
    vectors enables bit-exact restoration of untouched coordinates.
    """
    if not d_real.same_parts(d_sim) or d_real.variant != spec.variant:
        raise FilterError("decompositions come from different filter specifications")
    if spec.has_selection:
        sel = d_real.q == 1
        r_keep = np.where(sel, d_real.r, d_sim.r)
        r_tilde = np.where(sel, d_sim.r, d_real.r)
    else:
        r_keep = r_tilde = np.empty(0)
    tilde = Decomposition(spec.variant, d_real.k, d_real.n, d_real.p, d_sim.q, r_tilde)
    extr = Decomposition(spec.variant, d_real.k, d_real.n, d_sim.p, d_real.q, r_keep)
    refs = []
    if t_real is not None:
        refs.append((d_real, t_real))
    if t_sim is not None:
        refs.append((d_sim, t_sim))
    return compose(spec, extr, refs[::-1]), compose(spec, tilde, refs)


def sorted_uniforms(n, rng):
    """Ascending order statistics of ``n`` uniforms from exponential spacings."""
    gam = np.cumsum(rng.standard_exponential(n + 1))
    return gam[:n] / gam[n]


def apply_filter(spec, u_prime, rng=None):
    """Run one filtration on ``u_prime``.

    Returns
    -------
    u : ndarray
        The extracted p-values (real ``Q`` plus selected ``R`` slots).
    u_tilde : ndarray
        Values used to reconstruct the response, carrying the ranks of ``u_prime``.
    """
    rng = as_generator(rng)
    u_prime = np.asarray(u_prime, dtype=np.float64)
    n = u_prime.size
    spec = spec.clamp(n)
    order = np.argsort(u_prime, kind="stable")
    t_real = u_prime[order]
    t_sim = sorted_uniforms(n, rng)
    d_real = decompose(spec, t_real)
    d_sim = decompose(spec, t_sim)
    t_ext, t_til = exchange(spec, d_real, d_sim, t_real, t_sim)
    u = np.empty(n)
    u_tilde = np.empty(n)
    u[order] = t_ext
    u_tilde[order] = t_til
    return u, u_tilde
