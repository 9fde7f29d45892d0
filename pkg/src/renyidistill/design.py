"""Sparse design matrices, layers and partitionings.

Predictors and samples are 0-based in memory.  Assignment vectors use ``-1``
for "unassigned"; the text formats are 1-based with ``0`` for unassigned.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

UNASSIGNED = -1


class DesignError(ValueError):
    """Invalid design matrix or partitioning input."""


class DisconnectedPredictorError(DesignError):
    pass


class DesignParseError(DesignError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseDesign:
    """Column-sparse predictor matrix with unit-norm columns (CSC layout).

    Parameters
    ----------
    n, p : int
        Sample and predictor counts.
    indptr : array of int, length ``p + 1``
        Column pointers into ``indices``/``data``.
    indices : array of int
        Row index of every stored entry; strictly increasing within a column.
    data : array of float
        Nonzero values.
    col_norm_tol : float
        Allowed deviation of each column's sum of squares from 1.
    """

    n: int
    p: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    col_norm_tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "indptr", _readonly(self.indptr, np.int64))
        object.__setattr__(self, "indices", _readonly(self.indices, np.int64))
        object.__setattr__(self, "data", _readonly(self.data, np.float64))
        self._validate()

    def _validate(self):
        n, p = self.n, self.p
        if n < 1 or p < 1:
            raise DesignError(f"design needs n >= 1 and p >= 1, got n={n}, p={p}")
        if self.indptr.shape != (p + 1,) or self.indptr[0] != 0:
            raise DesignError("indptr must have length p + 1 and start at 0")
        if self.indices.shape != self.data.shape or self.indptr[-1] != self.data.size:
            raise DesignError("indices/data length does not match indptr")
        counts = np.diff(self.indptr)
        if np.any(counts < 0):
            raise DesignError("indptr must be nondecreasing")
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise DisconnectedPredictorError(
                f"disconnected predictor(s) with no nonzero entries: "
                f"{', '.join(str(j + 1) for j in empty[:20])}"
            )
        if np.any(self.data == 0.0) or not np.all(np.isfinite(self.data)):
            raise DesignError("stored entries must be finite and nonzero")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise DesignError("row index out of range")
        step = np.diff(self.indices)
        inner = np.ones(step.size, dtype=bool)
        inner[self.indptr[1:-1] - 1] = False  # boundaries between columns
        if np.any(step[inner] <= 0):
            raise DesignError("row indices must be strictly increasing within each column")
        ss = np.bincount(self.col_ids, weights=self.data**2, minlength=p)
        bad = np.flatnonzero(np.abs(ss - 1.0) > self.col_norm_tol)
        if bad.size:
            raise DesignError(
                f"column(s) not unit-normalized: {', '.join(str(j + 1) for j in bad[:20])}"
            )

    # construction ---------------------------------------------------------

    @classmethod
    def from_coo(cls, n, p, rows, cols, values, normalize=True, col_norm_tol=1e-10):
        """Build from 0-based triples; columns are divided by their norms."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (rows.shape == cols.shape == values.shape):
            raise DesignError("rows, cols and values must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= p):
            raise DesignError("triple index out of range")
        order = np.lexsort((rows, cols))
        rows, cols, values = rows[order], cols[order], values[order]
        dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if np.any(dup):
            k = np.flatnonzero(dup)[0]
            raise DesignError(f"duplicate entry at row {rows[k] + 1}, column {cols[k] + 1}")
        counts = np.bincount(cols, minlength=p)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise DisconnectedPredictorError(
                f"disconnected predictor(s) with no entries: "
                f"{', '.join(str(j + 1) for j in empty[:20])}"
            )
        if normalize:
            norms = np.sqrt(np.bincount(cols, weights=values**2, minlength=p))
            zero = np.flatnonzero(norms == 0.0)
            if zero.size:
                raise DesignError(
                    f"zero column norm for predictor(s) {', '.join(str(j + 1) for j in zero[:20])}"
                )
            values = values / norms[cols]
        keep = values != 0.0
        rows, cols, values = rows[keep], cols[keep], values[keep]
        indptr = np.zeros(p + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols, minlength=p), out=indptr[1:])
        return cls(n, p, indptr, rows, values, col_norm_tol)

    @classmethod
    def from_columns(cls, n, columns, normalize=True):
        """Build from a list of ``(rows, values)`` pairs, one per predictor."""
        rows, cols, vals = [], [], []
        for j, (r, v) in enumerate(columns):
            r = np.asarray(r, dtype=np.int64)
            rows.append(r)
            cols.append(np.full(r.size, j, dtype=np.int64))
            vals.append(np.asarray(v, dtype=np.float64))
        if not rows:
            raise DesignError("design needs at least one column")
        return cls.from_coo(
            n, len(columns), np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
            normalize=normalize,
        )

    # derived views --------------------------------------------------------

    @property
    def nnz(self):
        return int(self.data.size)

    @cached_property
    def col_ids(self):
        ids = np.repeat(np.arange(self.p, dtype=np.int64), np.diff(self.indptr))
        ids.setflags(write=False)
        return ids

    @cached_property
    def csr(self):
        """Row-major copy ``(indptr, col_indices, data)`` with sorted columns."""
        m = self.to_scipy().tocsr()
        m.sort_indices()
        return (
            np.asarray(m.indptr, dtype=np.int64),
            np.asarray(m.indices, dtype=np.int64),
            np.asarray(m.data, dtype=np.float64),
        )

    def column(self, j):
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def to_scipy(self):
        return sp.csc_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.p))

    def matvec(self, beta):
        """Return ``X @ beta``."""
        beta = np.asarray(beta, dtype=np.float64)
        return np.bincount(self.indices, weights=self.data * beta[self.col_ids], minlength=self.n)

    def rmatvec(self, y):
        """Return ``X.T @ y``."""
        y = np.asarray(y, dtype=np.float64)
        return np.bincount(self.col_ids, weights=self.data * y[self.indices], minlength=self.p)

    def l4_norms(self):
        return np.bincount(self.col_ids, weights=self.data**4, minlength=self.p) ** 0.25


@dataclass(frozen=True, eq=False)
class Layer:
    """One distillation round: assignment vector and hard-assignment flags.

    ``xi_prime[i] == -1`` marks a pass-through sample.  Samples with
    ``eta[i] == 0`` and an assigned ``xi_prime`` are soft: their final
    assignment is chosen during allocation among the layer's predictors.
    """

    xi_prime: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        xi = _readonly(self.xi_prime, np.int64)
        eta = _readonly(self.eta, np.int8)
        if xi.ndim != 1 or xi.shape != eta.shape:
            raise DesignError("xi_prime and eta must be 1-d arrays of equal length")
        if np.any(xi < UNASSIGNED):
            raise DesignError("xi_prime entries must be >= -1")
        if np.any((eta != 0) & (eta != 1)):
            raise DesignError("eta entries must be 0 or 1")
        object.__setattr__(self, "xi_prime", xi)
        object.__setattr__(self, "eta", eta)

    @property
    def n(self):
        return int(self.xi_prime.size)

    @cached_property
    def members(self):
        """Sorted predictor set S_l: predictors with at least one hard-assigned sample."""
        hard = (self.eta == 1) & (self.xi_prime != UNASSIGNED)
        m = np.unique(self.xi_prime[hard])
        m.setflags(write=False)
        return m

    @property
    def size(self):
        return int(self.members.size)

    def member_mask(self, p):
        mask = np.zeros(p, dtype=bool)
        mask[self.members] = True
        return mask


@dataclass(frozen=True)
class Partitioning:
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise DesignError("a partitioning needs at least one layer")

    @property
    def L(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


def entry_masks(d, layer):
    """Boolean masks over stored entries: hard-assigned and available (X-tilde support).

    An entry (i, j) is available when sample i is hard-assigned to j, or when
    sample i is soft and j belongs to the layer.
    """
    if layer.n != d.n:
        raise DesignError(f"layer has {layer.n} samples, design has {d.n}")
    xi = layer.xi_prime[d.indices]
    eta = layer.eta[d.indices]
    hard = (eta == 1) & (xi == d.col_ids)
    soft = (eta == 0) & (xi != UNASSIGNED) & layer.member_mask(d.p)[d.col_ids]
    return hard, hard | soft


def variance_fractions(d, layer):
    """Hard-assigned and available variance per layer member.

    Returns
    -------
    nu_prime, nu_tilde : ndarray
        Indexed like ``layer.members``.
    """
    hard, avail = entry_masks(d, layer)
    sq = d.data**2
    nu_prime = np.bincount(d.col_ids[hard], weights=sq[hard], minlength=d.p)
    nu_tilde = np.bincount(d.col_ids[avail], weights=sq[avail], minlength=d.p)
    m = layer.members
    return nu_prime[m], nu_tilde[m]


@dataclass
class LayerDiagnostics:
    index: int
    members: np.ndarray
    complete: bool
    connected: bool
    incomplete_predictors: list = field(default_factory=list)
    disconnected_samples: list = field(default_factory=list)  # (sample, predictor)
    shape_error: str = ""

    @property
    def size(self):
        return int(self.members.size)


@dataclass
class PartitionDiagnostics:
    layers: list
    overlapping_predictors: list
    uncovered_predictors: list

    @property
    def disjoint(self):
        return not self.overlapping_predictors

    @property
    def covering(self):
        return not self.uncovered_predictors

    @property
    def ok(self):
        return (
            self.disjoint
            and self.covering
            and all(l.complete and l.connected and not l.shape_error for l in self.layers)
        )

    def violations(self):
        """Human-readable list of every failure (1-based indices)."""
        out = []
        for l in self.layers:
            tag = f"layer {l.index + 1}"
            if l.shape_error:
                out.append(f"{tag}: {l.shape_error}")
            for j in l.incomplete_predictors:
                out.append(f"{tag}: predictor {j + 1} has no connected hard-assigned sample")
            for i, j in l.disconnected_samples:
                out.append(f"{tag}: sample {i + 1} assigned to predictor {j + 1} with X = 0")
        for j in self.overlapping_predictors:
            out.append(f"predictor {j + 1} is hard-assigned in more than one layer")
        for j in self.uncovered_predictors:
            out.append(f"predictor {j + 1} is not assigned to any layer")
        return out

    def raise_if_invalid(self):
        if not self.ok:
            raise DesignError("invalid partitioning:\n  " + "\n  ".join(self.violations()))


def validate_partitioning(d, rho):
    """Check the partitioning conditions and report every violation."""
    layers = []
    seen = np.zeros(d.p, dtype=np.int64)
    for idx, layer in enumerate(rho):
        if layer.n != d.n:
            layers.append(LayerDiagnostics(idx, np.empty(0, np.int64), False, False,
                                           shape_error=f"layer has {layer.n} samples, design has {d.n}"))
            continue
        if layer.xi_prime.size and layer.xi_prime.max() >= d.p:
            layers.append(LayerDiagnostics(idx, np.empty(0, np.int64), False, False,
                                           shape_error="xi_prime refers to a predictor beyond p"))
            continue
        m = layer.members
        seen[m] += 1
        on_pattern = np.zeros(d.n, dtype=bool)
        on_pattern[d.indices[layer.xi_prime[d.indices] == d.col_ids]] = True
        bad = np.flatnonzero((layer.xi_prime != UNASSIGNED) & ~on_pattern)
        disconnected = [(int(i), int(layer.xi_prime[i])) for i in bad]
        hard, _ = entry_masks(d, layer)
        has_hard = np.zeros(d.p, dtype=bool)
        has_hard[d.col_ids[hard]] = True
        incomplete = [int(j) for j in m if not has_hard[j]]
        layers.append(LayerDiagnostics(idx, m, not incomplete, not disconnected,
                                       incomplete, disconnected))
    return PartitionDiagnostics(
        layers,
        [int(j) for j in np.flatnonzero(seen > 1)],
        [int(j) for j in np.flatnonzero(seen == 0)],
    )


# text formats ---------------------------------------------------------------


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8")
    if isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        return source
    raise TypeError("source must be a path or a text stream")


def _data_lines(stream):
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def load_design(source, col_norm_tol=1e-10):
    """Read a coordinate-format design file and normalise its columns.

    The first data line is ``n p nnz``; each following line is
    ``row col value`` with 1-based indices.  Lines starting with ``#`` are
    ignored.
    """
    stream = _open_text(source)
    try:
        lines = _data_lines(stream)
        try:
            lineno, header = next(lines)
        except StopIteration:
            raise DesignParseError("empty design file") from None
        parts = header.split()
        if len(parts) != 3:
            raise DesignParseError("header must be 'n p nnz'", lineno)
        try:
            n, p, nnz = (int(x) for x in parts)
        except ValueError:
            raise DesignParseError("header values must be integers", lineno) from None
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        k = 0
        for lineno, line in lines:
            parts = line.split()
            if len(parts) != 3:
                raise DesignParseError("expected 'row col value'", lineno)
            if k >= nnz:
                raise DesignParseError(f"more than the declared {nnz} entries", lineno)
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise DesignParseError("malformed triple", lineno) from None
            if not (1 <= i <= n):
                raise DesignParseError(f"row index {i} out of range 1..{n}", lineno)
            if not (1 <= j <= p):
                raise DesignParseError(f"column index {j} out of range 1..{p}", lineno)
            if not np.isfinite(v):
                raise DesignParseError("non-finite value", lineno)
            rows[k], cols[k], vals[k] = i - 1, j - 1, v
            k += 1
        if k != nnz:
            raise DesignParseError(f"declared {nnz} entries but found {k}")
    finally:
        if stream is not source:
            stream.close()
    return SparseDesign.from_coo(n, p, rows, cols, vals, normalize=True, col_norm_tol=col_norm_tol)


def save_design(d, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{d.n} {d.p} {d.nnz}\n")
        for j in range(d.p):
            r, v = d.column(j)
            for i, x in zip(r, v):
                fh.write(f"{i + 1} {j + 1} {float(x)!r}\n")


def load_partitioning(source, n=None):
    """Read layers of ``i xiPrime eta`` lines separated by ``%`` lines."""
    stream = _open_text(source)
    blocks, current = [], []
    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("%"):
                if current:
                    blocks.append(current)
                current = []
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DesignParseError("expected 'i xiPrime eta'", lineno)
            try:
                current.append((int(parts[0]), int(parts[1]), int(parts[2]), lineno))
            except ValueError:
                raise DesignParseError("partitioning fields must be integers", lineno) from None
        if current:
            blocks.append(current)
    finally:
        if stream is not source:
            stream.close()
    if not blocks:
        raise DesignParseError("partitioning file has no layers")
    layers = []
    for block in blocks:
        size = n if n is not None else max(b[0] for b in block)
        xi = np.full(size, UNASSIGNED, dtype=np.int64)
        eta = np.zeros(size, dtype=np.int8)
        for i, j, e, lineno in block:
            if not (1 <= i <= size):
                raise DesignParseError(f"sample index {i} out of range 1..{size}", lineno)
            if j < 0 or e not in (0, 1):
                raise DesignParseError("xiPrime must be >= 0 and eta 0 or 1", lineno)
            xi[i - 1] = j - 1
            eta[i - 1] = e
        layers.append(Layer(xi, eta))
    return Partitioning(tuple(layers))


def save_partitioning(rho, path):
    with open(path, "w", encoding="utf-8") as fh:
        for idx, layer in enumerate(rho):
            if idx:
                fh.write("%\n")
            for i in range(layer.n):
                fh.write(f"{i + 1} {int(layer.xi_prime[i]) + 1} {int(layer.eta[i])}\n")
