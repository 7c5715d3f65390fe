"""Dataset-level variance decompositions, the F statistic, permutation tests.

The F statistic generalizes one-way ANOVA to datasets of weighted point
clouds: the numerator is the spread of the per-group barycentric projections
around the pooled barycenter (between-group), the denominator the mass left
to pure redistribution (within-group). The permutation null reshuffles
individual support points across groups, preserving group sizes.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .barycenter import (
    BarycenterConfig,
    BarycenterInit,
    free_support_barycenter,
    free_support_fgw_barycenter,
    _fit_w_support,
    _init_points,
)
from .errors import DegenerateDenominator, DimensionMismatch
from .exact_ot import _emd_raw, solve_w2
from .gw_fgw import FgwParams, _pairwise_sq, solve_fgw, solve_gw
from .lot import DecompositionReport, decompose_fgw, decompose_gw, decompose_w2
from .measures import EmpiricalMeasure, MeasureNetwork

DEGENERATE_DENOMINATOR_TOL = 1e-15


@dataclass(frozen=True)
class VarianceDecomposition:
    n_support: int
    total: float
    deterministic: float
    probabilistic: float
    percent: float
    per_element: List[DecompositionReport]


@dataclass(frozen=True)
class FTestResult:
    statistic: float
    prefactor: float
    p_value: float
    n_support: int
    permutations: int
    permuted_stats: np.ndarray


def _base(el):
    return el.base if isinstance(el, MeasureNetwork) else el


def variance_decomposition(
    dataset: Sequence,
    barycenter,
    mode: str = "w",
    alpha: Optional[float] = None,
    params: Optional[FgwParams] = None,
) -> VarianceDecomposition:
    """Average the per-element decompositions against a fixed template."""
    if not dataset:
        raise ValueError("dataset must be non-empty")
    reports = []
    for el in dataset:
        if mode == "w":
            ref = _base(barycenter)
            gamma = solve_w2(ref, _base(el)).coupling
            reports.append(decompose_w2(ref, _base(el), gamma, certified=True))
        elif mode == "gw":
            p = params or FgwParams(alpha=0.0)
            gamma = solve_gw(barycenter, el, p).coupling
            reports.append(decompose_gw(barycenter, el, gamma))
        elif mode == "fgw":
            if alpha is None:
                raise ValueError("fgw mode requires alpha")
            p = params or FgwParams(alpha=alpha)
            if p.alpha != alpha:
                p = FgwParams(alpha, p.max_iters, p.fw_tol, p.restarts, p.seed)
            gamma = solve_fgw(barycenter, el, p).coupling
            reports.append(decompose_fgw(barycenter, el, alpha, gamma))
        else:
            raise ValueError(f"unknown mode {mode!r}")
    N = len(reports)
    total = sum(r.total for r in reports) / N
    det = sum(r.deterministic for r in reports) / N
    prob = sum(r.probabilistic for r in reports) / N
    percent = min(1.0, max(0.0, det / total)) if total > 0.0 else 1.0
    n_support = _base(barycenter).n
    return VarianceDecomposition(n_support, total, det, prob, percent, reports)


def variance_curve(
    dataset: Sequence,
    n_values: Sequence[int],
    mode: str = "w",
    cfg: Optional[BarycenterConfig] = None,
    alpha: Optional[float] = None,
    params: Optional[FgwParams] = None,
) -> List[VarianceDecomposition]:
    """Fit a barycenter and decompose, for each requested support size.

    The same seed policy is used across sizes so the curves are comparable.
    """
    if not n_values or any(n < 1 for n in n_values):
        raise ValueError("n_values must be non-empty with entries >= 1")
    cfg = cfg or BarycenterConfig(n_support=n_values[0])
    out = []
    for n in n_values:
        cfg_n = replace(cfg, n_support=int(n))
        if mode == "w":
            bary = free_support_barycenter([_base(el) for el in dataset], cfg_n).barycenter
        else:
            a = alpha if mode == "fgw" else 0.0
            if a is None:
                raise ValueError("fgw mode requires alpha")
            bary = free_support_fgw_barycenter(dataset, replace(cfg_n, alpha=a)).barycenter
        out.append(variance_decomposition(dataset, bary, mode, alpha=alpha, params=params))
    return out


def _group_arrays(dataset: Sequence[EmpiricalMeasure]):
    pts = [el.points for el in dataset]
    wts = [el.weights for el in dataset]
    dims = {p.shape[1] for p in pts}
    if len(dims) != 1:
        raise DimensionMismatch("all groups must share the ambient dimension")
    return pts, wts


def _f_stat_raw(points_list, weights_list, n_support, cfg: BarycenterConfig, seed, weighted):
    """F value on raw group arrays; barycenter refit with the given seed."""
    cfg_run = replace(cfg, n_support=n_support, seed=seed)
    X0 = _init_points(points_list, cfg_run, points_list[0].shape[1])
    X, gammas, _ = _fit_w_support(
        points_list, weights_list, X0, cfg_run.tol, cfg_run.max_outer_iters
    )
    n = X.shape[0]
    a = np.full(n, 1.0 / n)
    num = 0.0
    den = 0.0
    for g, Y in zip(gammas, points_list):
        T = (g @ Y) / a[:, None]
        det = float(a @ ((X - T) ** 2).sum(axis=1))
        num += det * (Y.shape[0] if weighted else 1.0)
        den += float((g * _pairwise_sq(T, Y)).sum())
    if den < DEGENERATE_DENOMINATOR_TOL:
        raise DegenerateDenominator(
            "probabilistic component is zero: all couplings are deterministic"
        )
    N = len(points_list)
    total_m = sum(Y.shape[0] for Y in points_list)
    prefactor = (total_m - N) / (N - 1)
    return prefactor * num / den, prefactor


def f_statistic(
    dataset: Sequence[EmpiricalMeasure],
    n_support: int,
    cfg: Optional[BarycenterConfig] = None,
    weighted: bool = False,
) -> float:
    """Generalized ANOVA F for equality of n-support barycentric projections.

    ``weighted=True`` multiplies the numerator terms by the group sizes (the
    weighted-ANOVA variant); the default is the unweighted form. Undefined
    (raises) when every coupling is deterministic.
    """
    if len(dataset) < 2:
        raise ValueError("need at least two groups")
    cfg = cfg or BarycenterConfig(n_support=n_support)
    pts, wts = _group_arrays(dataset)
    f, _ = _f_stat_raw(pts, wts, n_support, cfg, cfg.seed, weighted)
    return f


def permutation_test(
    dataset: Sequence[EmpiricalMeasure],
    n_support: int,
    permutations: int,
    seed: int = 0,
    cfg: Optional[BarycenterConfig] = None,
    weighted: bool = False,
    reuse_barycenter: bool = False,
    threads: int = 1,
) -> FTestResult:
    """Permutation test of the F statistic.

    Pools all support points across groups, reshuffles them into groups of
    the original sizes, and recomputes the whole pipeline (barycenter + F)
    per replicate. P-values use the add-one estimator, so they are bounded
    below by 1/(permutations + 1). ``reuse_barycenter=True`` is an
    approximate fast mode that keeps the observed barycenter fixed across
    replicates instead of refitting.

    Replicates draw their randomness from seeds spawned off ``seed`` by
    replicate index, so results are reproducible regardless of ``threads``.
    """
    if permutations < 1:
        raise ValueError("need at least one permutation")
    if len(dataset) < 2:
        raise ValueError("need at least two groups")
    cfg = cfg or BarycenterConfig(n_support=n_support)
    pts, wts = _group_arrays(dataset)
    sizes = [p.shape[0] for p in pts]
    offsets = np.cumsum([0] + sizes)

    observed, prefactor = _f_stat_raw(pts, wts, n_support, cfg, cfg.seed, weighted)

    pool_pts = np.concatenate(pts, axis=0)
    pool_wts = np.concatenate(wts)
    children = np.random.SeedSequence(seed).spawn(permutations)

    if reuse_barycenter:
        X0 = _init_points(pts, replace(cfg, n_support=n_support), pts[0].shape[1])
        Xobs, _, _ = _fit_w_support(pts, wts, X0, cfg.tol, cfg.max_outer_iters)

    def _f_from_fixed_support(X, gp, gw):
        n = X.shape[0]
        a = np.full(n, 1.0 / n)
        num = 0.0
        den = 0.0
        for Y, b in zip(gp, gw):
            g, _, _, _ = _emd_raw(a, b, _pairwise_sq(X, Y))
            T = (g @ Y) / a[:, None]
            num += float(a @ ((X - T) ** 2).sum(axis=1)) * (
                Y.shape[0] if weighted else 1.0
            )
            den += float((g * _pairwise_sq(T, Y)).sum())
        if den < DEGENERATE_DENOMINATOR_TOL:
            raise DegenerateDenominator("probabilistic component is zero")
        return prefactor * num / den

    def one_replicate(k: int) -> float:
        rng = np.random.default_rng(children[k])
        perm = rng.permutation(pool_pts.shape[0])
        gp = []
        gw = []
        for g in range(len(sizes)):
            sel = perm[offsets[g] : offsets[g + 1]]
            gp.append(pool_pts[sel])
            w = pool_wts[sel]
            gw.append(w / w.sum())
        if reuse_barycenter:
            return _f_from_fixed_support(Xobs, gp, gw)
        f, _ = _f_stat_raw(
            gp, gw, n_support, cfg, int(rng.integers(0, 2**31 - 1)), weighted
        )
        return f

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            permuted = np.array(list(ex.map(one_replicate, range(permutations))))
    else:
        permuted = np.array([one_replicate(k) for k in range(permutations)])

    p_value = (1.0 + int((permuted >= observed).sum())) / (1.0 + permutations)
    return FTestResult(
        statistic=observed,
        prefactor=prefactor,
        p_value=p_value,
        n_support=n_support,
        permutations=permutations,
        permuted_stats=permuted,
    )
