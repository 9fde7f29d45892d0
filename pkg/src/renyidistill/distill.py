"""One round of distillation and the multi-layer driver.

A round takes a response ``y`` and a layer, and returns independent p-values
for the layer's predictors together with a new response that has the same null
law as ``y`` and is independent of those p-values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from .design import UNASSIGNED, DesignError, validate_partitioning
from .filters import FilterSpec, apply_filter
from .rng import GaussianField, as_generator

_TINY = np.finfo(np.float64).tiny


class InvalidLayerError(DesignError):
    pass


@dataclass(frozen=True, eq=False)
class AllocationResult:
    """Final assignment of samples for one layer.

    ``xi`` is ``-1`` for pass-through samples.  Per-member arrays follow
    ``members``.
    """

    members: np.ndarray
    xi: np.ndarray
    w_prime: np.ndarray
    nu_prime: np.ndarray
    nu: np.ndarray
    nu_tilde: np.ndarray


@dataclass(frozen=True, eq=False)
class ExtractionResult:
    members: np.ndarray
    w: np.ndarray
    signs: np.ndarray
    u_prime: np.ndarray
    a_diag: np.ndarray
    breve_diag: np.ndarray
    y: np.ndarray


@dataclass(frozen=True, eq=False)
class LayerReport:
    members: np.ndarray
    signs: np.ndarray
    nu_prime: np.ndarray
    nu: np.ndarray
    nu_tilde: np.ndarray
    unchanged: bool


@dataclass(frozen=True, eq=False)
class DistillResult:
    """Output of a full distillation.

    Attributes
    ----------
    y_final : ndarray
        Response left after the last layer.
    u_star : ndarray
        One p-value per predictor, indexed by predictor.
    per_layer : list of LayerReport
    """

    y_final: np.ndarray
    u_star: np.ndarray
    per_layer: list

    @property
    def index(self):
        return np.arange(self.u_star.size)


def _member_pos(members, p):
    pos = np.full(p, -1, dtype=np.int64)
    pos[members] = np.arange(members.size)
    return pos


def allocate(d, layer, y, rng=None):
    """Hard-assigned scores ``W'`` and the completed assignment ``xi``."""
    rng = as_generator(rng)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (d.n,):
        raise ValueError(f"response has shape {y.shape}, expected ({d.n},)")
    if layer.n != d.n:
        raise InvalidLayerError(f"layer has {layer.n} samples, design has {d.n}")
    members = layer.members
    if members.size == 0:
        raise InvalidLayerError("layer has no hard-assigned predictors")
    nu_prime, nu_tilde, s = _kernels.hard_scores(
        d.indptr, d.indices, d.data, layer.xi_prime, layer.eta, members, y
    )
    empty = members[nu_prime <= 0.0]
    if empty.size:
        raise InvalidLayerError(
            "no connected hard-assigned sample for predictor(s) "
            + ", ".join(str(j + 1) for j in empty[:20])
        )
    w_prime = s / np.sqrt(nu_prime)

    xi = np.where((layer.eta == 1), layer.xi_prime, UNASSIGNED).astype(np.int64)
    soft = np.flatnonzero((layer.eta == 0) & (layer.xi_prime != UNASSIGNED))
    tie_u = rng.random(soft.size)
    if soft.size:
        r_indptr, r_indices, _ = d.csr
        pos = _member_pos(members, d.p)
        xi[soft] = _kernels.allocate_soft(r_indptr, r_indices, soft, pos, np.abs(w_prime), tie_u)

    own = xi[d.indices] == d.col_ids
    nu_all = np.bincount(d.col_ids[own], weights=d.data[own] ** 2, minlength=d.p)
    return AllocationResult(members, xi, w_prime, nu_prime, nu_all[members], nu_tilde)


def extract(d, layer, alloc, y, field, layer_index=0):
    """Scores ``W``, uniforms ``U'`` and the ancillary trace ``A[i, xi_i]``."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(alloc.nu_tilde <= 0.0):
        raise InvalidLayerError("a layer member has no available variance")
    w, breve = _kernels.extract_scores(
        d.indptr, d.indices, d.data, layer.xi_prime, layer.eta, alloc.xi,
        alloc.members, alloc.nu_tilde, y, field.key, layer_index,
    )
    pos = _member_pos(alloc.members, d.p)
    assigned = alloc.xi >= 0
    a_diag = y.copy()
    a_diag[assigned] -= breve[assigned] * w[pos[alloc.xi[assigned]]]
    u_prime = np.clip(special.erfc(np.abs(w) / np.sqrt(2.0)), _TINY, 1.0)
    signs = np.where(w < 0.0, -1.0, 1.0)
    return ExtractionResult(alloc.members, w, signs, u_prime, a_diag, breve, y.copy())


def invert(extr, alloc, u_tilde, p=None):
    """Rebuild the response from filtered uniforms ``u_tilde`` (member order)."""
    u_tilde = np.asarray(u_tilde, dtype=np.float64)
    if u_tilde.shape != extr.w.shape:
        raise ValueError("u_tilde must have one entry per layer member")
    if np.any(~(u_tilde > 0.0)) or np.any(u_tilde > 1.0):
        raise ValueError("u_tilde entries must lie in (0, 1]")
    w_tilde = extr.signs * np.sqrt(2.0) * special.erfcinv(u_tilde)
    same = u_tilde == extr.u_prime
    w_tilde[same] = extr.w[same]
    p = p if p is not None else int(extr.members.max()) + 1
    pos = _member_pos(extr.members, p)
    y_new = extr.y.copy()
    rows = np.flatnonzero(alloc.xi >= 0)
    slot = pos[alloc.xi[rows]]
    moved = ~same[slot]
    rows, slot = rows[moved], slot[moved]
    y_new[rows] = extr.a_diag[rows] + extr.breve_diag[rows] * w_tilde[slot]
    return y_new


def _coerce_filter(f):
    if isinstance(f, FilterSpec):
        return f
    if isinstance(f, str):
        return FilterSpec.parse(f)
    if isinstance(f, dict):
        return FilterSpec(**f)
    raise TypeError(f"cannot interpret {f!r} as a filter")


def distill_iteration(d, layer, y, filt, rng=None, field=None, layer_index=0):
    """Allocation, extraction, filtration and inversion for one layer.

    Returns
    -------
    y_next : ndarray
    u : ndarray
        Extracted p-values, ordered like ``layer.members``.
    report : LayerReport
    """
    rng = as_generator(rng)
    if field is None:
        field = GaussianField.from_generator(rng)
    filt = _coerce_filter(filt)
    alloc = allocate(d, layer, y, rng)
    extr = extract(d, layer, alloc, y, field, layer_index)
    u, u_tilde = apply_filter(filt, extr.u_prime, rng)
    y_next = invert(extr, alloc, u_tilde, d.p)
    report = LayerReport(alloc.members, extr.signs, alloc.nu_prime, alloc.nu, alloc.nu_tilde,
                         bool(np.array_equal(u_tilde, extr.u_prime)))
    return y_next, u, report


def distill(d, rho, y, filters, rng=None, field=None, validate=True):
    """Run every layer of ``rho`` in order and merge the p-values.

    Parameters
    ----------
    filters : FilterSpec or sequence of FilterSpec
        One filter for all layers, or one per layer.
    field : GaussianField, optional
        Source of the auxiliary normals; drawn from ``rng`` when omitted.
    """
    rng = as_generator(rng)
    if validate:
        validate_partitioning(d, rho).raise_if_invalid()
    if isinstance(filters, (FilterSpec, str, dict)):
        filters = [filters] * len(rho)
    filters = [_coerce_filter(f) for f in filters]
    if len(filters) != len(rho):
        raise ValueError(f"{len(filters)} filters for {len(rho)} layers")
    if field is None:
        field = GaussianField.from_generator(rng)
    y_cur = np.asarray(y, dtype=np.float64).copy()
    u_star = np.full(d.p, np.nan)
    reports = []
    for idx, (layer, filt) in enumerate(zip(rho, filters)):
        y_cur, u, rep = distill_iteration(d, layer, y_cur, filt, rng, field, idx)
        u_star[layer.members] = u
        reports.append(rep)
    if np.any(np.isnan(u_star)):
        raise InvalidLayerError("partitioning left some predictors without a p-value")
    return DistillResult(y_cur, u_star, reports)
