"""Barycentric projections, LOT vector fields, and distance decompositions.

Every squared transport cost splits into a deterministic part (the cost of
the map-induced coupling onto the barycentric projection) and a probabilistic
part (the cost of redistributing mass from the projection to the target).
The split holds for any feasible coupling; only the claim that the
deterministic part *is* a squared distance needs optimality, which is what
``coupling_certified_optimal`` tracks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InstanceTooLarge,
    MarginalMismatch,
    MissingEdges,
    NonUniformWeights,
)
from .exact_ot import solve_w2
from .gw_fgw import (
    FgwParams,
    diam2,
    solve_fgw,
    solve_gw,
    solve_gw_oracle,
    transport_cost_gw,
    transport_cost_w,
)
from .measures import (
    Coupling,
    EmpiricalMeasure,
    MeasureNetwork,
    _as_locked,
)


@dataclass(frozen=True)
class ProjectionResult:
    """Image of a barycentric projection.

    ``mapped_points`` holds T(X); ``projected_measure`` is T#nu carrying the
    source weights; ``projected_edges`` is the averaged edge matrix when the
    target had one; ``vector_field`` is T(X) - X.
    """

    mapped_points: np.ndarray
    projected_measure: EmpiricalMeasure
    vector_field: np.ndarray
    projected_edges: Optional[np.ndarray] = None


@dataclass(frozen=True)
class DecompositionReport:
    total: float
    deterministic: float
    probabilistic: float
    percent_explained: float
    coupling_certified_optimal: bool
    diam2_target: Optional[float] = None
    diam2_projection: Optional[float] = None


def _check_marginals(gamma: Coupling, source: EmpiricalMeasure, target: EmpiricalMeasure):
    g = gamma.matrix
    if g.shape != (source.n, target.n):
        raise MarginalMismatch(
            f"coupling {g.shape} does not match supports {source.n} and {target.n}"
        )
    rerr = np.abs(g.sum(axis=1) - source.weights).max()
    cerr = np.abs(g.sum(axis=0) - target.weights).max()
    if rerr > 1e-9 or cerr > 1e-9:
        raise MarginalMismatch(
            f"coupling marginals off by {max(rerr, cerr):.3e} from the measures"
        )


def barycentric_map(gamma: Coupling, source: EmpiricalMeasure, target: EmpiricalMeasure) -> np.ndarray:
    """Map image T(x_i) = sum_j (gamma_ij / a_i) y_j, one row per source atom."""
    _check_marginals(gamma, source, target)
    return (gamma.matrix @ target.points) / source.weights[:, None]


def _percent(deterministic: float, total: float) -> float:
    if total > 0.0:
        return min(1.0, max(0.0, deterministic / total))
    return 1.0


def project_w(gamma: Coupling, source: EmpiricalMeasure, target: EmpiricalMeasure) -> ProjectionResult:
    """Barycentric projection of ``target`` onto the support of ``source``."""
    if source.dim != target.dim:
        raise DimensionMismatch(
            f"source dimension {source.dim} != target dimension {target.dim}"
        )
    mapped = barycentric_map(gamma, source, target)
    measure = EmpiricalMeasure(source.weights, _as_locked(mapped))
    return ProjectionResult(
        mapped_points=_as_locked(mapped),
        projected_measure=measure,
        vector_field=_as_locked(mapped - source.points),
    )


def projected_edges(gamma: Coupling, source: EmpiricalMeasure, B) -> np.ndarray:
    """Averaged edge matrix C_ik = sum_jl (g_ij/a_i)(g_kl/a_k) B_jl."""
    g = gamma.matrix
    a = source.weights
    return (g @ np.asarray(B, dtype=np.float64) @ g.T) / np.outer(a, a)


def project_gw(gamma: Coupling, Xnet: MeasureNetwork, Ynet: MeasureNetwork) -> ProjectionResult:
    """GW barycentric projection: nodes stay put, only structure is averaged."""
    _check_marginals(gamma, Xnet.base, Ynet.base)
    C = projected_edges(gamma, Xnet.base, Ynet.edges)
    return ProjectionResult(
        mapped_points=Xnet.base.points,
        projected_measure=Xnet.base,
        vector_field=_as_locked(np.zeros_like(Xnet.base.points)),
        projected_edges=_as_locked(C),
    )


def project_fgw(gamma: Coupling, Xnet: MeasureNetwork, Ynet: MeasureNetwork) -> ProjectionResult:
    """Fused projection: mapped nodes and averaged edges together."""
    if Xnet.base.dim != Ynet.base.dim:
        raise DimensionMismatch(
            f"node dimensions {Xnet.base.dim} and {Ynet.base.dim} differ"
        )
    mapped = barycentric_map(gamma, Xnet.base, Ynet.base)
    C = projected_edges(gamma, Xnet.base, Ynet.edges)
    measure = EmpiricalMeasure(Xnet.base.weights, _as_locked(mapped))
    return ProjectionResult(
        mapped_points=_as_locked(mapped),
        projected_measure=measure,
        vector_field=_as_locked(mapped - Xnet.base.points),
        projected_edges=_as_locked(C),
    )


def w_components(gamma, X, Y, a):
    """(deterministic, probabilistic) parts of sum gamma ||x - y||^2.

    ``deterministic`` is sum_i a_i ||x_i - T(x_i)||^2 and ``probabilistic``
    is sum_ij gamma_ij ||T(x_i) - y_j||^2 with T the barycentric map of
    gamma. Valid for any coupling with row sums a.
    """
    g = gamma.matrix if isinstance(gamma, Coupling) else np.asarray(gamma)
    T = (g @ Y) / a[:, None]
    det = float(a @ ((X - T) ** 2).sum(axis=1))
    prob = transport_cost_w(g, T, Y)
    return det, prob, T


def gw_components(gamma, A, B, a):
    """(deterministic, probabilistic) parts of the GW transport cost.

    ``deterministic`` is sum_ik a_i a_k (A_ik - C_ik)^2 and ``probabilistic``
    is sum_ijkl gamma_ij gamma_kl (C_ik - B_jl)^2 with C the averaged edge
    matrix of gamma. Valid for any coupling with row sums a.
    """
    g = gamma.matrix if isinstance(gamma, Coupling) else np.asarray(gamma)
    C = (g @ B @ g.T) / np.outer(a, a)
    det = float(a @ ((A - C) ** 2) @ a)
    prob = transport_cost_gw(g, C, B)
    return det, prob, C


def pushforward_coupling(gamma: Coupling, proj: ProjectionResult, target: EmpiricalMeasure) -> Coupling:
    """pi = (T, id)#gamma: the same matrix re-based on (T#nu, mu)."""
    return Coupling(gamma.matrix, proj.projected_measure.weights, target.weights)


def decompose_w2(
    nu: EmpiricalMeasure,
    mu: EmpiricalMeasure,
    gamma: Optional[Coupling] = None,
    certified: Optional[bool] = None,
) -> DecompositionReport:
    """Split the squared-W2 transport cost of a coupling into components.

    With ``gamma`` omitted an optimal coupling is computed (and the report is
    marked certified, so the deterministic part equals W2^2(nu, T#nu)). A
    supplied coupling is used as-is; the additive identity then still holds
    but the deterministic part need not be a squared distance unless the
    caller asserts ``certified=True``.
    """
    if nu.dim != mu.dim:
        raise DimensionMismatch(f"dimensions {nu.dim} and {mu.dim} differ")
    if gamma is None:
        gamma = solve_w2(nu, mu).coupling
        certified = True if certified is None else certified
    else:
        _check_marginals(gamma, nu, mu)
        certified = False if certified is None else certified
    total = transport_cost_w(gamma, nu.points, mu.points)
    det, prob, _ = w_components(gamma, nu.points, mu.points, nu.weights)
    return DecompositionReport(
        total=total,
        deterministic=det,
        probabilistic=prob,
        percent_explained=_percent(det, total),
        coupling_certified_optimal=bool(certified),
    )


def decompose_gw(
    Xnet: MeasureNetwork,
    Ynet: MeasureNetwork,
    gamma: Optional[Coupling] = None,
    params: Optional[FgwParams] = None,
    certified: Optional[bool] = None,
) -> DecompositionReport:
    """Split the GW transport cost of a coupling into components.

    With ``gamma`` omitted, the small-instance oracle is tried first (its
    certification propagates to the report); otherwise the conditional
    gradient solver supplies a local optimum, which is not certified. The
    diam2 fields are filled: probabilistic = diam2(Y)^2 - diam2(T)^2 holds
    for whatever coupling generated the projection.
    """
    if gamma is None:
        try:
            res = solve_gw_oracle(Xnet, Ynet)
            gamma = res.coupling
            if certified is None:
                certified = res.globally_certified
        except (InstanceTooLarge, NonUniformWeights):
            res = solve_gw(Xnet, Ynet, params or FgwParams(alpha=0.0))
            gamma = res.coupling
            if certified is None:
                certified = False
    else:
        _check_marginals(gamma, Xnet.base, Ynet.base)
        certified = False if certified is None else certified
    total = transport_cost_gw(gamma, Xnet.edges, Ynet.edges)
    det, prob, C = gw_components(gamma, Xnet.edges, Ynet.edges, Xnet.base.weights)
    a = Xnet.base.weights
    b = Ynet.base.weights
    return DecompositionReport(
        total=total,
        deterministic=det,
        probabilistic=prob,
        percent_explained=_percent(det, total),
        coupling_certified_optimal=bool(certified),
        diam2_target=float(np.sqrt(b @ (Ynet.edges**2) @ b)),
        diam2_projection=float(np.sqrt(a @ (C**2) @ a)),
    )


def decompose_fgw(
    Xnet: MeasureNetwork,
    Ynet: MeasureNetwork,
    alpha: float,
    gamma: Optional[Coupling] = None,
    params: Optional[FgwParams] = None,
    certified: Optional[bool] = None,
) -> DecompositionReport:
    """Split the fused transport cost: total = C^a(T) + C^a(pi).

    The identity holds for any supplied coupling; separability does not need
    optimality. alpha = 1 reduces to :func:`decompose_w2` and alpha = 0 to
    :func:`decompose_gw` (which also fills the diam2 fields).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 1.0:
        return decompose_w2(Xnet.base, Ynet.base, gamma=gamma, certified=certified)
    if alpha == 0.0:
        return decompose_gw(Xnet, Ynet, gamma=gamma, params=params, certified=certified)
    if Xnet.base.dim != Ynet.base.dim:
        raise DimensionMismatch(
            f"node dimensions {Xnet.base.dim} and {Ynet.base.dim} differ"
        )
    if gamma is None:
        fw = params or FgwParams(alpha=alpha)
        if fw.alpha != alpha:
            fw = FgwParams(alpha, fw.max_iters, fw.fw_tol, fw.restarts, fw.seed)
        res = solve_fgw(Xnet, Ynet, fw)
        gamma = res.coupling
        if certified is None:
            certified = res.globally_certified
    else:
        _check_marginals(gamma, Xnet.base, Ynet.base)
        certified = False if certified is None else certified
    a = Xnet.base.weights
    det_w, prob_w, _ = w_components(gamma, Xnet.base.points, Ynet.base.points, a)
    det_g, prob_g, _ = gw_components(gamma, Xnet.edges, Ynet.edges, a)
    det = alpha * det_w + (1.0 - alpha) * det_g
    prob = alpha * prob_w + (1.0 - alpha) * prob_g
    # the total is evaluated directly; its agreement with det + prob is the
    # identity under test, not an implementation artifact
    total = alpha * transport_cost_w(gamma, Xnet.base.points, Ynet.base.points) + (
        1.0 - alpha
    ) * transport_cost_gw(gamma, Xnet.edges, Ynet.edges)
    return DecompositionReport(
        total=total,
        deterministic=det,
        probabilistic=prob,
        percent_explained=_percent(det, total),
        coupling_certified_optimal=bool(certified),
    )


def vectorize_embedding(
    proj: ProjectionResult, alpha: float, plain_triu: bool = False
) -> np.ndarray:
    """Fixed-length vector for a projection: node block then edge block.

    The node block Vec(T(X)) is present iff alpha < 1; the edge block is the
    upper triangle (diagonal included, row-major) of 2C - diag(C), present
    iff alpha > 0, so the length is I(alpha<1) n d + I(alpha>0) (n + n(n-1)/2).
    The factor 2 compensates for storing one copy of each symmetric
    off-diagonal entry in squared-norm computations; ``plain_triu`` switches
    to the unscaled upper triangle of C for ablation.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    blocks = []
    n = proj.mapped_points.shape[0]
    if alpha < 1.0:
        blocks.append(proj.mapped_points.ravel())
    if alpha > 0.0:
        if proj.projected_edges is None:
            raise MissingEdges("edge block requested but the projection has no edges")
        C = proj.projected_edges
        M = C if plain_triu else 2.0 * C - np.diag(np.diag(C))
        iu = np.triu_indices(n)
        blocks.append(M[iu])
    return np.concatenate(blocks) if blocks else np.empty(0)


def w_cross_term(gamma, X, Y, a) -> float:
    """sum_ij gamma_ij <x_i - T(x_i), T(x_i) - y_j>; identically zero."""
    g = gamma.matrix if isinstance(gamma, Coupling) else np.asarray(gamma)
    T = (g @ Y) / a[:, None]
    left = X - T
    # sum_j gamma_ij (T_i - y_j) = rowsum_i T_i - (g Y)_i
    inner = g.sum(axis=1)[:, None] * T - g @ Y
    return float((left * inner).sum())


def gw_cross_term(gamma, A, B, a) -> float:
    """sum_ijkl gamma_ij gamma_kl (A_ik - C_ik)(C_ik - B_jl); identically zero."""
    g = gamma.matrix if isinstance(gamma, Coupling) else np.asarray(gamma)
    C = (g @ B @ g.T) / np.outer(a, a)
    inner = np.outer(g.sum(axis=1), g.sum(axis=1)) * C - g @ B @ g.T
    return float(((A - C) * inner).sum())
