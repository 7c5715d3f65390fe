"""Free-support barycenters for W2 and fused-GW, and Frechet variance.

The W2 fitter alternates exact couplings from the current barycenter to every
dataset element with the location update X <- (1/N) sum_l diag(a)^-1 g_l Y_l,
which is the exact minimizer of the transport functional in X at fixed
couplings, so the variance trace never increases. The fused variant has no
such guarantee (its edge update is a pragmatic coupling-weighted average), so
an explicit descent check rejects any update that increases the fused
variance.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, NonUniformWeights
from .exact_ot import _emd_raw, solve_w2
from .gw_fgw import FgwParams, _pairwise_sq, solve_fgw, solve_gw
from .measures import (
    Coupling,
    EmpiricalMeasure,
    MeasureNetwork,
    _as_locked,
    validate_network,
)


class BarycenterInit(enum.Enum):
    RANDOM_SUBSAMPLE = "random_subsample"
    SEEDED_GAUSSIAN = "seeded_gaussian"
    PROVIDED = "provided"


@dataclass(frozen=True)
class BarycenterConfig:
    n_support: int
    max_outer_iters: int = 100
    tol: float = 1e-7
    init: BarycenterInit = BarycenterInit.RANDOM_SUBSAMPLE
    seed: int = 0
    alpha: Optional[float] = None
    initial: Optional[Union[EmpiricalMeasure, MeasureNetwork]] = None

    def __post_init__(self):
        if self.n_support < 1:
            raise ValueError("n_support must be >= 1")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.init is BarycenterInit.PROVIDED and self.initial is None:
            raise ValueError("init=PROVIDED requires an initial measure")


@dataclass(frozen=True)
class BarycenterResult:
    barycenter: Union[EmpiricalMeasure, MeasureNetwork]
    variance_trace: np.ndarray
    couplings: List[Coupling]


def frechet_variance(
    reference,
    dataset: Sequence,
    mode: str = "w",
    alpha: Optional[float] = None,
    params: Optional[FgwParams] = None,
) -> float:
    """Mean squared distance from ``reference`` to the dataset elements."""
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset must be non-empty")
    if mode == "w":
        return sum(solve_w2(reference, el).cost for el in dataset) / n
    if mode == "gw":
        p = params or FgwParams(alpha=0.0)
        return sum(solve_gw(reference, el, p).cost for el in dataset) / n
    if mode == "fgw":
        if alpha is None:
            raise ValueError("fgw mode requires alpha")
        p = params or FgwParams(alpha=alpha)
        if p.alpha != alpha:
            p = FgwParams(alpha, p.max_iters, p.fw_tol, p.restarts, p.seed)
        return sum(solve_fgw(reference, el, p).cost for el in dataset) / n
    raise ValueError(f"unknown mode {mode!r}")


def _init_points(points_list, cfg: BarycenterConfig, dim: int) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    if cfg.init is BarycenterInit.RANDOM_SUBSAMPLE:
        pool = np.concatenate(points_list, axis=0)
        idx = rng.choice(pool.shape[0], size=cfg.n_support, replace=pool.shape[0] < cfg.n_support)
        return pool[np.sort(idx)].copy()
    if cfg.init is BarycenterInit.SEEDED_GAUSSIAN:
        return rng.standard_normal((cfg.n_support, dim))
    base = cfg.initial.base if isinstance(cfg.initial, MeasureNetwork) else cfg.initial
    if base.n != cfg.n_support:
        raise DimensionMismatch(
            f"provided initial has {base.n} atoms, n_support is {cfg.n_support}"
        )
    if not np.allclose(base.weights, 1.0 / base.n, atol=1e-12):
        raise NonUniformWeights("provided initial barycenter must have uniform weights")
    return base.points.copy()


def _fit_w_support(points_list, weights_list, X0, tol, max_iters):
    """Raw alternating fitter; returns (X, couplings, trace)."""
    N = len(points_list)
    n = X0.shape[0]
    a = np.full(n, 1.0 / n)
    X = X0
    trace = []
    prev = np.inf
    while True:
        gammas = []
        var = 0.0
        for Y, b in zip(points_list, weights_list):
            g, c, _, _ = _emd_raw(a, b, _pairwise_sq(X, Y))
            gammas.append(g)
            var += c
        var /= N
        trace.append(var)
        converged = len(trace) > 1 and prev - var <= tol * max(prev, 1e-30)
        if converged or len(trace) > max_iters:
            break
        prev = var
        upd = np.zeros_like(X)
        for g, Y in zip(gammas, points_list):
            upd += g @ Y
        X = upd / (N * a[:, None])
    return X, gammas, np.array(trace)


def free_support_barycenter(
    dataset: Sequence[EmpiricalMeasure], cfg: BarycenterConfig
) -> BarycenterResult:
    """Fixed-point barycenter with a user-chosen support size.

    Alternates exact OT couplings against every element with the coupling-
    weighted location update, until the relative variance decrease drops
    below ``cfg.tol`` or the iteration budget runs out. Weights stay uniform.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    dim = dataset[0].dim
    for el in dataset:
        if el.dim != dim:
            raise DimensionMismatch("dataset elements must share the ambient dimension")
    X0 = _init_points([el.points for el in dataset], cfg, dim)
    X, gammas, trace = _fit_w_support(
        [el.points for el in dataset],
        [el.weights for el in dataset],
        X0,
        cfg.tol,
        cfg.max_outer_iters,
    )
    n = X.shape[0]
    a = np.full(n, 1.0 / n)
    bary = EmpiricalMeasure(_as_locked(a), _as_locked(X))
    couplings = [
        Coupling(_as_locked(g), bary.weights, el.weights)
        for g, el in zip(gammas, dataset)
    ]
    return BarycenterResult(bary, trace, couplings)


def free_support_fgw_barycenter(
    dataset: Sequence[MeasureNetwork], cfg: BarycenterConfig
) -> BarycenterResult:
    """Free-support barycenter of measure networks under the fused cost.

    Node update as in the W2 case using fused couplings; edge update
    C <- (1/N) sum_l (g_l B_l g_l^T) / (a a^T). If an update increases the
    fused Frechet variance it is rejected and iteration stops; at alpha = 1
    the node trajectory coincides with :func:`free_support_barycenter` on the
    node measures.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if cfg.alpha is None:
        raise ValueError("fused barycenter requires cfg.alpha")
    alpha = cfg.alpha
    dim = dataset[0].base.dim
    for el in dataset:
        if el.base.dim != dim:
            raise DimensionMismatch("dataset elements must share the node dimension")
    X = _init_points([el.base.points for el in dataset], cfg, dim)
    if cfg.init is BarycenterInit.PROVIDED:
        if not isinstance(cfg.initial, MeasureNetwork):
            raise DimensionMismatch("fused barycenter needs a MeasureNetwork initial")
        C = cfg.initial.edges.copy()
    else:
        C = np.sqrt(np.maximum(_pairwise_sq(X, X), 0.0))
    n = X.shape[0]
    a = np.full(n, 1.0 / n)
    params = FgwParams(
        alpha=alpha, max_iters=100, fw_tol=1e-7, restarts=3, seed=cfg.seed
    )

    def solve_all(Xc, Cc):
        net = validate_network(a, Xc, Cc)
        gs = []
        var = 0.0
        for el in dataset:
            res = solve_fgw(net, el, params)
            gs.append(res.coupling.matrix)
            var += res.cost
        return gs, var / len(dataset)

    gammas, var = solve_all(X, C)
    trace = [var]
    for _ in range(cfg.max_outer_iters):
        upd = np.zeros_like(X)
        Cnew = np.zeros_like(C)
        for g, el in zip(gammas, dataset):
            upd += g @ el.base.points
            Cnew += g @ el.edges @ g.T
        Xnew = upd / (len(dataset) * a[:, None])
        Cnew /= len(dataset) * np.outer(a, a)
        gnew, vnew = solve_all(Xnew, Cnew)
        if vnew > var + 1e-12 * (1.0 + abs(var)):
            break  # no monotonicity proof for the edge update; reject
        X, C, gammas = Xnew, Cnew, gnew
        trace.append(vnew)
        if var - vnew <= cfg.tol * max(var, 1e-30):
            var = vnew
            break
        var = vnew
    bary = validate_network(a, X, C)
    couplings = [
        Coupling(_as_locked(g), bary.base.weights, el.base.weights)
        for g, el in zip(gammas, dataset)
    ]
    return BarycenterResult(bary, np.array(trace), couplings)
