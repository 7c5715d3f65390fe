"""Core data types: empirical measures, measure networks, couplings.

All types are immutable after construction (arrays are locked read-only), so
instances can be shared freely across threads. Operations are pure functions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    MarginalMismatch,
    NegativeEntry,
    NonFiniteEntry,
    NonPositiveWeight,
    WeightSumMismatch,
)

WEIGHT_SUM_TOL = 1e-12
MARGINAL_TOL = 1e-9
CLASSIFY_TOL = 1e-9


def _as_locked(arr, dtype=np.float64):
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Probability mass on a finite set of points in R^d.

    ``weights`` has shape (n,), strictly positive, summing to 1;
    ``points`` has shape (n, d).
    """

    weights: np.ndarray
    points: np.ndarray

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class MeasureNetwork:
    """An empirical measure together with an edge-weight matrix on its support.

    The edge matrix is not required to be symmetric; ``symmetric`` records
    whether it was at construction.
    """

    base: EmpiricalMeasure
    edges: np.ndarray
    symmetric: bool = field(default=False)

    @property
    def n(self) -> int:
        return self.base.n


@dataclass(frozen=True)
class Coupling:
    """Nonnegative matrix with prescribed row and column marginals."""

    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape


class CouplingKind(enum.Enum):
    DETERMINISTIC = "deterministic"
    PURELY_PROBABILISTIC = "purely_probabilistic"
    MIXED = "mixed"


@dataclass(frozen=True)
class CouplingClass:
    """Classification of a coupling plus the two diagnostics it is based on.

    ``max_split`` is the largest second-largest row entry (0 for a coupling
    induced by a map); ``max_residual`` is the largest row drift-vector norm
    (0 for a coupling that only redistributes mass in place).
    """

    kind: CouplingKind
    max_split: float
    max_residual: float


def validate_measure(weights, points, renormalize: bool = False) -> EmpiricalMeasure:
    """Validate raw arrays into an :class:`EmpiricalMeasure`.

    Parameters
    ----------
    weights : array-like, shape (n,)
        Strictly positive masses. Must sum to 1 within 1e-12 unless
        ``renormalize`` is set, in which case they are rescaled.
    points : array-like, shape (n, d)
        Support locations. A 1-d array is treated as n points in R^1.
    renormalize : bool
        Rescale the weights to sum to exactly 1 instead of erroring.
    """
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if w.ndim != 1 or p.ndim != 2:
        raise DimensionMismatch(
            f"weights must be 1-d and points 2-d, got {w.ndim}-d and {p.ndim}-d"
        )
    if w.shape[0] != p.shape[0]:
        raise DimensionMismatch(
            f"{w.shape[0]} weights for {p.shape[0]} points"
        )
    if w.shape[0] < 1 or p.shape[1] < 1:
        raise DimensionMismatch("need n >= 1 points in d >= 1 dimensions")
    if not np.isfinite(w).all() or not np.isfinite(p).all():
        raise NonFiniteEntry("weights and points must be finite")
    if (w <= 0.0).any():
        bad = int(np.argmin(w))
        raise NonPositiveWeight(f"weight {w[bad]!r} at index {bad}")
    s = float(w.sum())
    if renormalize:
        w = w / s
    elif abs(s - 1.0) > WEIGHT_SUM_TOL:
        raise WeightSumMismatch(f"weights sum to {s!r}, not 1")
    return EmpiricalMeasure(_as_locked(w), _as_locked(p))


def prune_measure(weights, points, renormalize: bool = True) -> EmpiricalMeasure:
    """Drop zero-weight atoms, then validate. Negative weights still error."""
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if w.shape[0] != p.shape[0]:
        raise DimensionMismatch(f"{w.shape[0]} weights for {p.shape[0]} points")
    keep = w != 0.0
    return validate_measure(w[keep], p[keep], renormalize=renormalize)


def validate_network(weights, points, edges, renormalize: bool = False) -> MeasureNetwork:
    """Validate raw arrays into a :class:`MeasureNetwork`.

    The edge matrix must be square with side n and finite; symmetry is
    recorded, not required.
    """
    base = validate_measure(weights, points, renormalize=renormalize)
    e = np.asarray(edges, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] != e.shape[1]:
        raise DimensionMismatch(f"edge matrix must be square, got {e.shape}")
    if e.shape[0] != base.n:
        raise DimensionMismatch(
            f"edge matrix side {e.shape[0]} != support size {base.n}"
        )
    if not np.isfinite(e).all():
        raise NonFiniteEntry("edge matrix must be finite")
    sym = bool(np.array_equal(e, e.T))
    return MeasureNetwork(base, _as_locked(e), symmetric=sym)


def validate_coupling(matrix, a, b) -> Coupling:
    """Validate a transport plan against marginals ``a`` (rows) and ``b`` (cols).

    Row and column sums must match within 1e-9 per entry; all entries must be
    nonnegative. The worst offending row/column is reported on failure.
    """
    g = np.asarray(matrix, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if g.ndim != 2:
        raise DimensionMismatch(f"coupling must be a matrix, got {g.ndim}-d")
    n, m = g.shape
    if a.shape != (n,) or b.shape != (m,):
        raise DimensionMismatch(
            f"coupling is {n}x{m} but marginals have lengths {a.shape[0]} and {b.shape[0]}"
        )
    if not np.isfinite(g).all():
        raise NonFiniteEntry("coupling entries must be finite")
    if (g < 0.0).any():
        i, j = np.unravel_index(int(np.argmin(g)), g.shape)
        raise NegativeEntry(f"entry {g[i, j]!r} at ({i}, {j})")
    rerr = np.abs(g.sum(axis=1) - a)
    cerr = np.abs(g.sum(axis=0) - b)
    if rerr.max(initial=0.0) > MARGINAL_TOL or cerr.max(initial=0.0) > MARGINAL_TOL:
        wr = int(np.argmax(rerr))
        wc = int(np.argmax(cerr))
        raise MarginalMismatch(
            f"worst row {wr} off by {rerr[wr]:.3e}, worst column {wc} off by {cerr[wc]:.3e}"
        )
    return Coupling(_as_locked(g), _as_locked(a), _as_locked(b))


def classify_coupling(
    gamma: Coupling,
    source: EmpiricalMeasure,
    target: EmpiricalMeasure,
    tol: float = CLASSIFY_TOL,
) -> CouplingClass:
    """Classify a coupling as deterministic, purely probabilistic, or mixed.

    A coupling is deterministic when each source atom sends its mass to a
    single target (each row has exactly one entry above ``tol``); it is purely
    probabilistic when every row's mass-weighted displacement vectors cancel,
    i.e. ``|| sum_j gamma_ij (y_j - x_i) || <= tol`` for all i. Both
    diagnostics are reported whatever the verdict. A coupling satisfying both
    definitions (e.g. the identity coupling on matched supports) is reported
    deterministic.
    """
    g = gamma.matrix
    n, m = g.shape
    if source.n != n or target.n != m:
        raise DimensionMismatch(
            f"coupling {n}x{m} does not match supports {source.n} and {target.n}"
        )
    if source.dim != target.dim:
        raise DimensionMismatch(
            f"source dimension {source.dim} != target dimension {target.dim}"
        )
    if m >= 2:
        top2 = -np.partition(-g, 1, axis=1)[:, 1]
        max_split = float(top2.max())
    else:
        max_split = 0.0
    # drift vector per row: sum_j g_ij y_j - rowsum_i * x_i
    drift = g @ target.points - g.sum(axis=1, keepdims=True) * source.points
    max_residual = float(np.sqrt((drift**2).sum(axis=1)).max())
    if max_split <= tol and float(g.max(axis=1).min()) > tol:
        kind = CouplingKind.DETERMINISTIC
    elif max_residual <= tol:
        kind = CouplingKind.PURELY_PROBABILISTIC
    else:
        kind = CouplingKind.MIXED
    return CouplingClass(kind, max_split, max_residual)


def uniform_measure(points) -> EmpiricalMeasure:
    """Uniform weights on the given points."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    n = p.shape[0]
    return validate_measure(np.full(n, 1.0 / n), p)
