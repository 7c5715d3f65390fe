"""Feature transforms: R^9 SPD embedding, kernel reconstruction, weighting.

The SPD embedding flattens a (location, 3x3 SPD matrix) pair into R^9 with
the location block scaled by lambda and the matrix block by (1 - lambda).
With ``isometric=True`` (default) the off-diagonal coefficients are sqrt(2),
which makes the flattening distance-preserving for the Frobenius metric;
the literal coefficient-2 variant is kept behind ``isometric=False``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateTraces,
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
    OutOfGrid,
)
from .measures import EmpiricalMeasure

SPD_EPS = 1e-8


@dataclass(frozen=True)
class SpdFeature:
    """A spatial location with an associated 3x3 SPD matrix."""

    location: np.ndarray
    matrix: np.ndarray


def _check_sym3(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (3, 3):
        raise DimensionMismatch(f"expected a 3x3 matrix, got {M.shape}")
    scale = 1.0 + float(np.abs(M).max())
    if float(np.abs(M - M.T).max()) > 1e-12 * scale:
        raise NotSymmetric("matrix is not symmetric within 1e-12")
    return M


def project_spd(matrix, eps: float = SPD_EPS) -> np.ndarray:
    """Clamp eigenvalues below ``eps`` up to ``eps`` and reassemble.

    Already-SPD inputs come back unchanged up to eigensolver roundoff.
    """
    M = _check_sym3(matrix)
    evals, evecs = np.linalg.eigh(M)
    if evals.min() >= eps:
        return M
    return (evecs * np.maximum(evals, eps)) @ evecs.T


def embed_spd(feature: SpdFeature, lam: float, isometric: bool = True) -> np.ndarray:
    """Flatten (location, SPD matrix) into R^9.

    Layout: [l*x1, l*x2, l*x3, m11, c*m12, c*m13, m22, c*m23, m33] with the
    matrix block scaled by (1 - lam) and c = sqrt(2) when ``isometric`` else
    the literal 2. lam = 1 zeroes the matrix block, lam = 0 the locations.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    x = np.asarray(feature.location, dtype=np.float64).reshape(-1)
    if x.shape != (3,):
        raise DimensionMismatch(f"location must be a 3-vector, got shape {x.shape}")
    M = _check_sym3(feature.matrix)
    evals = np.linalg.eigvalsh(M)
    if evals.min() <= 0.0:
        raise NotPositiveDefinite(f"minimum eigenvalue {evals.min():.3e} <= 0")
    c = np.sqrt(2.0) if isometric else 2.0
    w = 1.0 - lam
    return np.array(
        [
            lam * x[0],
            lam * x[1],
            lam * x[2],
            w * M[0, 0],
            c * w * M[0, 1],
            c * w * M[0, 2],
            w * M[1, 1],
            c * w * M[1, 2],
            w * M[2, 2],
        ]
    )


def embed_spd_dataset(features, lam: float, isometric: bool = True) -> np.ndarray:
    """Stack :func:`embed_spd` over a sequence of features; shape (N, 9)."""
    return np.stack([embed_spd(f, lam, isometric) for f in features])


def compute_lambda_star(Z0, Z1) -> float:
    """Variance-balancing weight from datasets embedded at lambda 0 and 1.

    lambda* = tr(Z0^T Z0) / (tr(Z1^T Z1) + tr(Z0^T Z0)).
    """
    Z0 = np.asarray(Z0, dtype=np.float64)
    Z1 = np.asarray(Z1, dtype=np.float64)
    t0 = float((Z0**2).sum())
    t1 = float((Z1**2).sum())
    if t0 + t1 <= 0.0:
        raise DegenerateTraces("both embedded datasets have zero norm")
    return t0 / (t1 + t0)


def kernel_reconstruct(
    measure: EmpiricalMeasure, grid_side: int, bandwidth: float = 1.0
) -> np.ndarray:
    """Gaussian-kernel image of a planar measure on a grid_side^2 pixel grid.

    Entry (i, j) is sum_k a_k N(x_k | (i, j), bandwidth^2 I_2), normalized to
    total mass 1. The identity covariance (bandwidth 1) is the reference
    setting; points must lie inside [0, grid_side - 1]^2.
    """
    if measure.dim != 2:
        raise DimensionMismatch(f"kernel reconstruction needs d = 2, got {measure.dim}")
    if grid_side < 1:
        raise ValueError("grid_side must be >= 1")
    pts = measure.points
    if pts.min() < 0.0 or pts.max() > grid_side - 1:
        raise OutOfGrid(
            f"points span [{pts.min():.3g}, {pts.max():.3g}], outside the grid"
        )
    grid = np.arange(grid_side, dtype=np.float64)
    s2 = 2.0 * bandwidth * bandwidth
    e0 = np.exp(-((pts[:, 0:1] - grid[None, :]) ** 2) / s2)
    e1 = np.exp(-((pts[:, 1:2] - grid[None, :]) ** 2) / s2)
    A = (measure.weights[:, None] * e0).T @ e1
    return A / A.sum()
