"""Exact squared-2-Wasserstein distances via a transportation network simplex.

The solver is a classical network simplex on the transportation polytope
U(a, b). Degeneracy is handled by pivoting on lexicographically perturbed
marginals (deterministic, reproducible); once the optimal basis tree is
found, flows are recomputed exactly for the unperturbed marginals on that
tree. A Bland-rule fallback guards against any residual stalling, and
optimality is only declared after a full re-pricing pass with freshly
recomputed dual potentials.

``solve_w2_oracle`` is an independent brute-force check: it enumerates
vertices of U(a, b) through north-west-corner solutions over row/column
permutation pairs (every basic feasible solution of the transportation
problem arises this way), so it shares no code path with the simplex.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DimensionMismatch, InstanceTooLarge, SolverFailure
from .measures import Coupling, EmpiricalMeasure, _as_locked

DEFAULT_ORACLE_CELL_CAP = 64
DEFAULT_ORACLE_TREE_BUDGET = 5_000_000


@dataclass(frozen=True)
class TransportResult:
    """Optimal transport plan and its cost (squared-distance units)."""

    cost: float
    coupling: Coupling
    iterations: int
    dual_gap: float


@njit(cache=True, nogil=True)
def _netsimplex(a, b, D, tol):  # pragma: no cover - exercised via wrappers
    """Exact transportation simplex.

    Returns (gamma, u, v, pivots, status); status 0 = optimal, 1 = pivot cap
    exhausted, 2 = internal inconsistency. u, v are optimal dual potentials.
    """
    n = a.shape[0]
    m = b.shape[0]
    nb = n + m - 1
    N = n + m

    # lexicographically perturbed marginals used for pivoting only
    amin = a[0]
    for i in range(n):
        if a[i] < amin:
            amin = a[i]
    bmin = b[0]
    for j in range(m):
        if b[j] < bmin:
            bmin = b[j]
    eps = (amin if amin < bmin else bmin) * 1e-9 / (n + 1)
    ap = np.empty(n, np.float64)
    total = 0.0
    for i in range(n):
        ap[i] = a[i] + (i + 1) * eps
        total += (i + 1) * eps
    bp = b.copy()
    bp[m - 1] += total

    bi = np.empty(nb, np.int64)
    bj = np.empty(nb, np.int64)
    f = np.zeros(nb, np.float64)

    # greedy row-minimum initial spanning tree. Count-driven: exactly one
    # column event per column and one row event per row but the last, so the
    # basis has n+m-1 arcs regardless of float ties.
    ra = ap.copy()
    rb = bp.copy()
    colopen = np.ones(m, np.bool_)
    k = 0
    for i in range(n - 1):
        while True:
            j = -1
            best = np.inf
            for jj in range(m):
                if colopen[jj] and D[i, jj] < best:
                    best = D[i, jj]
                    j = jj
            if ra[i] <= rb[j]:
                bi[k] = i
                bj[k] = j
                f[k] = ra[i]
                k += 1
                rb[j] -= ra[i]
                ra[i] = 0.0
                break
            bi[k] = i
            bj[k] = j
            f[k] = rb[j]
            k += 1
            ra[i] -= rb[j]
            rb[j] = 0.0
            colopen[j] = False
    for j in range(m):
        if colopen[j]:
            bi[k] = n - 1
            bj[k] = j
            f[k] = rb[j]
            k += 1

    # doubly linked adjacency lists; two directed edges per basic arc
    head = np.full(N, -1, np.int64)
    nxt = np.empty(2 * nb, np.int64)
    prv = np.empty(2 * nb, np.int64)
    to = np.empty(2 * nb, np.int64)
    for t in range(nb):
        rnode = bi[t]
        cnode = n + bj[t]
        e = 2 * t
        to[e] = cnode
        nxt[e] = head[rnode]
        prv[e] = -1
        if head[rnode] != -1:
            prv[head[rnode]] = e
        head[rnode] = e
        e = 2 * t + 1
        to[e] = rnode
        nxt[e] = head[cnode]
        prv[e] = -1
        if head[cnode] != -1:
            prv[head[cnode]] = e
        head[cnode] = e

    # initial parents and potentials via BFS from node 0
    pot = np.zeros(N, np.float64)
    parent = np.full(N, -2, np.int64)
    parent_arc = np.empty(N, np.int64)
    order = np.empty(N, np.int64)
    parent[0] = -1
    parent_arc[0] = -1
    order[0] = 0
    qn = 1
    qi = 0
    while qi < qn:
        p = order[qi]
        qi += 1
        e = head[p]
        while e != -1:
            q = to[e]
            if parent[q] == -2:
                parent[q] = p
                parent_arc[q] = e >> 1
                t = e >> 1
                if q >= n:
                    pot[q] = D[bi[t], bj[t]] - pot[bi[t]]
                else:
                    pot[q] = D[bi[t], bj[t]] - pot[n + bj[t]]
                order[qn] = q
                qn += 1
            e = nxt[e]
    if qn != N:
        return np.zeros((n, m), np.float64), pot[:n].copy(), pot[n:].copy(), 0, 2

    onpath = np.zeros(N, np.bool_)
    in_sub = np.zeros(N, np.bool_)
    cyc_arcs = np.empty(N + 1, np.int64)
    cyc_sign = np.empty(N + 1, np.int64)
    stack = np.empty(N, np.int64)
    chain = np.empty(N, np.int64)

    nm = n * m
    block = int(np.sqrt(nm)) + 10
    scan_from = 0

    max_pivots = 300 * N + 2000
    pivots = 0
    degen_streak = 0
    bland = False
    verified = False
    status = 0

    while True:
        # entering arc
        ep = -1
        eq = -1
        rbest = -tol
        if bland:
            done = False
            for p in range(n):
                up = pot[p]
                for q in range(m):
                    r = D[p, q] - up - pot[n + q]
                    if r < -tol:
                        ep = p
                        eq = q
                        rbest = r
                        done = True
                        break
                if done:
                    break
        else:
            scanned = 0
            pos = scan_from
            while scanned < nm:
                stop = scanned + block
                if stop > nm:
                    stop = nm
                while scanned < stop:
                    p = pos // m
                    q = pos - p * m
                    r = D[p, q] - pot[p] - pot[n + q]
                    if r < rbest:
                        rbest = r
                        ep = p
                        eq = q
                    scanned += 1
                    pos += 1
                    if pos == nm:
                        pos = 0
                if ep >= 0:
                    break
            if ep >= 0:
                scan_from = ep * m + eq + 1
                if scan_from == nm:
                    scan_from = 0
        if ep < 0:
            if verified:
                break  # optimal, certified with fresh potentials
            # guard against incremental potential drift: recompute exactly
            # from the tree and run one more full pricing pass
            for p in range(N):
                parent[p] = -2
            parent[0] = -1
            parent_arc[0] = -1
            order[0] = 0
            qn = 1
            qi = 0
            pot[0] = 0.0
            while qi < qn:
                p = order[qi]
                qi += 1
                e = head[p]
                while e != -1:
                    q = to[e]
                    if parent[q] == -2:
                        parent[q] = p
                        parent_arc[q] = e >> 1
                        t = e >> 1
                        if q >= n:
                            pot[q] = D[bi[t], bj[t]] - pot[bi[t]]
                        else:
                            pot[q] = D[bi[t], bj[t]] - pot[n + bj[t]]
                        order[qn] = q
                        qn += 1
                    e = nxt[e]
            if qn != N:
                status = 2
                break
            verified = True
            continue
        verified = False

        if pivots >= max_pivots:
            status = 1
            break
        pivots += 1

        # cycle between ep and n+eq through the tree
        p = ep
        while p != -1:
            onpath[p] = True
            p = parent[p]
        q = n + eq
        while not onpath[q]:
            q = parent[q]
        lca = q
        p = ep
        while p != -1:
            onpath[p] = False
            p = parent[p]

        # arcs alternate sign around the cycle (bipartite); both tree arcs
        # adjacent to the entering arc carry -theta
        nc = 0
        p = ep
        sgn = -1
        while p != lca:
            cyc_arcs[nc] = parent_arc[p]
            cyc_sign[nc] = sgn
            sgn = -sgn
            nc += 1
            p = parent[p]
        q = n + eq
        sgn = -1
        while q != lca:
            cyc_arcs[nc] = parent_arc[q]
            cyc_sign[nc] = sgn
            sgn = -sgn
            nc += 1
            q = parent[q]

        theta = np.inf
        leave = -1
        for t in range(nc):
            if cyc_sign[t] == -1:
                kk = cyc_arcs[t]
                if f[kk] < theta:
                    theta = f[kk]
                    leave = kk
                elif f[kk] == theta and kk < leave:
                    leave = kk
        if leave < 0:
            status = 2
            break

        for t in range(nc):
            kk = cyc_arcs[t]
            if cyc_sign[t] == -1:
                f[kk] -= theta
            else:
                f[kk] += theta

        # child end of the leaving arc, then its subtree S (minus the arc)
        lr = bi[leave]
        lc = n + bj[leave]
        croot = lr if parent_arc[lr] == leave else lc
        subs = stack
        ns = 1
        subs[0] = croot
        in_sub[croot] = True
        read = 0
        while read < ns:
            p = subs[read]
            read += 1
            e = head[p]
            while e != -1:
                if (e >> 1) != leave:
                    q = to[e]
                    if not in_sub[q]:
                        in_sub[q] = True
                        subs[ns] = q
                        ns += 1
                e = nxt[e]

        # the entering arc reconnects S; shift potentials on S by the entering
        # reduced cost so u + v = D holds on it, signs per bipartition side
        s_node = ep if in_sub[ep] else (n + eq)
        t_node = (n + eq) if s_node == ep else ep
        s_is_row = s_node < n
        for t in range(ns):
            p = subs[t]
            if (p < n) == s_is_row:
                pot[p] += rbest
            else:
                pot[p] -= rbest

        # re-root S at s_node (reverse the parent chain up to croot)
        cl = 0
        p = s_node
        while True:
            chain[cl] = p
            cl += 1
            if p == croot:
                break
            p = parent[p]
        for t in range(cl - 1, 0, -1):
            child = chain[t]
            par = chain[t - 1]
            parent[child] = par
            parent_arc[child] = parent_arc[par]
        parent[s_node] = t_node
        parent_arc[s_node] = leave

        for t in range(ns):
            in_sub[subs[t]] = False

        # adjacency: drop the leaving arc's edges, insert the entering arc's
        for e in (2 * leave, 2 * leave + 1):
            pn = prv[e]
            nx = nxt[e]
            if pn == -1:
                src = lr if e == 2 * leave else lc
                head[src] = nx
            else:
                nxt[pn] = nx
            if nx != -1:
                prv[nx] = pn

        bi[leave] = ep
        bj[leave] = eq
        f[leave] = theta

        e = 2 * leave
        to[e] = n + eq
        nxt[e] = head[ep]
        prv[e] = -1
        if head[ep] != -1:
            prv[head[ep]] = e
        head[ep] = e
        e = 2 * leave + 1
        to[e] = ep
        nxt[e] = head[n + eq]
        prv[e] = -1
        if head[n + eq] != -1:
            prv[head[n + eq]] = e
        head[n + eq] = e

        if theta <= 0.0:
            degen_streak += 1
            if degen_streak > N:
                bland = True
        else:
            degen_streak = 0
            bland = False

    gamma = np.zeros((n, m), np.float64)
    if status == 0:
        # recompute flows for the unperturbed marginals on the optimal tree
        # (leaf stripping); on a fixed tree flows are linear in (a, b), so
        # nonnegativity and optimality carry over from the perturbed solve
        deg = np.zeros(N, np.int64)
        bal = np.empty(N, np.float64)
        for i in range(n):
            bal[i] = a[i]
        for j in range(m):
            bal[n + j] = -b[j]
        for t in range(nb):
            deg[bi[t]] += 1
            deg[n + bj[t]] += 1
        alive = np.ones(nb, np.bool_)
        ns = 0
        for p in range(N):
            if deg[p] == 1:
                stack[ns] = p
                ns += 1
        while ns > 0:
            ns -= 1
            p = stack[ns]
            if deg[p] != 1:
                continue
            e = head[p]
            t = -1
            while e != -1:
                if alive[e >> 1]:
                    t = e >> 1
                    break
                e = nxt[e]
            if t < 0:
                break
            f[t] = bal[p] if p < n else -bal[p]
            other = n + bj[t] if p < n else bi[t]
            bal[other] += bal[p]
            bal[p] = 0.0
            alive[t] = False
            deg[p] -= 1
            deg[other] -= 1
            if deg[other] == 1:
                stack[ns] = other
                ns += 1
        for t in range(nb):
            if f[t] > 0.0:
                gamma[bi[t], bj[t]] += f[t]
    return gamma, pot[:n].copy(), pot[n:].copy(), pivots, status


def _emd_raw(a, b, D):
    """Lean internal path: optimal plan for arbitrary cost matrix D.

    Returns (gamma, cost, dual_gap, pivots). No validation; inputs must be
    float64 arrays with positive marginals summing to the same total.
    """
    tol = 1e-12 * (1.0 + float(np.abs(D).max()))
    gamma, u, v, pivots, status = _netsimplex(a, b, np.ascontiguousarray(D), tol)
    if status != 0:
        raise SolverFailure(f"network simplex failed with status {status}")
    cost = float((gamma * D).sum())
    dual = float(a @ u + b @ v)
    return gamma, cost, abs(cost - dual), pivots


def cost_matrix(nu: EmpiricalMeasure, mu: EmpiricalMeasure) -> np.ndarray:
    """Squared Euclidean distances D_ij = ||x_i - y_j||^2.

    Computed from explicit differences (not the Gram-matrix shortcut) so the
    diagonal is exactly zero when both measures coincide.
    """
    if nu.dim != mu.dim:
        raise DimensionMismatch(f"dimensions {nu.dim} and {mu.dim} differ")
    diff = nu.points[:, None, :] - mu.points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def solve_w2(nu: EmpiricalMeasure, mu: EmpiricalMeasure) -> TransportResult:
    """Exact squared 2-Wasserstein distance between empirical measures.

    Returns an optimal basic solution of the transportation LP; the coupling
    support has at most n + m - 1 entries and ``dual_gap`` certifies
    optimality (<= 1e-9 * (1 + cost)).
    """
    D = cost_matrix(nu, mu)
    gamma, cost, gap, pivots = _emd_raw(nu.weights, mu.weights, D)
    coupling = Coupling(_as_locked(gamma), nu.weights, mu.weights)
    return TransportResult(cost, coupling, pivots, gap)


def _nw_corner(a, b) -> np.ndarray:
    """North-west-corner coupling, closed form via cumulative sums."""
    ca = np.cumsum(a)
    cb = np.cumsum(b)
    lo = np.maximum.outer(ca - a, cb - b)
    hi = np.minimum.outer(ca, cb)
    return np.maximum(hi - lo, 0.0)


@njit(cache=True, nogil=True)
def _tree_enumeration_scan(a, b, D, collect):  # pragma: no cover - via wrapper
    """Scan every spanning tree of K_{n,m} (basis of the transportation LP).

    Trees are enumerated through a bipartite Prufer code: a spanning tree
    corresponds to one sequence over columns of length n-1 (consumed when a
    row leaf is removed) and one over rows of length m-1 (consumed when a
    column leaf is removed), giving the classical n^(m-1) * m^(n-1) count.
    For each decoded tree the unique basic solution is computed by leaf
    stripping; feasible ones are candidate vertices.

    Returns (best_cost, best_bi, best_bj, best_f, n_feasible, n_trees,
    edges_out) where edges_out, filled only when ``collect``, stores each
    tree's sorted arc ids for bijection checks by the test suite.
    """
    n = a.shape[0]
    m = b.shape[0]
    N = n + m
    nb = N - 1
    n_rows_seq = m - 1  # entries over rows, consumed when cols are removed
    n_cols_seq = n - 1  # entries over cols, consumed when rows are removed
    total = 1
    for _ in range(n_rows_seq):
        total *= n
    for _ in range(n_cols_seq):
        total *= m

    srows = np.zeros(max(n_rows_seq, 1), np.int64)  # values in [0, n)
    scols = np.zeros(max(n_cols_seq, 1), np.int64)  # values in [0, m)
    deg = np.empty(N, np.int64)
    alive = np.empty(N, np.bool_)
    ei = np.empty(nb, np.int64)
    ej = np.empty(nb, np.int64)
    f = np.empty(nb, np.float64)
    bal = np.empty(N, np.float64)
    adj_head = np.empty(N, np.int64)
    adj_nxt = np.empty(2 * nb, np.int64)
    adj_to = np.empty(2 * nb, np.int64)
    adj_arc = np.empty(2 * nb, np.int64)
    leafq = np.empty(N, np.int64)

    best_cost = np.inf
    best_bi = np.zeros(nb, np.int64)
    best_bj = np.zeros(nb, np.int64)
    best_f = np.zeros(nb, np.float64)
    n_feasible = 0
    ftol = -1e-12

    if collect:
        edges_out = np.empty((total, nb), np.int64)
    else:
        edges_out = np.empty((1, nb), np.int64)

    for code in range(total):
        # unpack the mixed-radix code
        c = code
        for t in range(n_rows_seq):
            srows[t] = c % n
            c //= n
        for t in range(n_cols_seq):
            scols[t] = c % m
            c //= m

        # degrees: 1 + remaining occurrences as a recorded neighbor
        for p in range(N):
            deg[p] = 1
            alive[p] = True
        for t in range(n_rows_seq):
            deg[srows[t]] += 1
        for t in range(n_cols_seq):
            deg[n + scols[t]] += 1

        pr = 0  # next unread entry of scols (neighbor of a removed row)
        pc = 0  # next unread entry of srows (neighbor of a removed col)
        ne = 0
        ok = True
        for _ in range(N - 2):
            leaf = -1
            for p in range(N):
                if alive[p] and deg[p] == 1:
                    leaf = p
                    break
            if leaf < 0:
                ok = False
                break
            if leaf < n:
                nbr = n + scols[pr]
                pr += 1
                ei[ne] = leaf
                ej[ne] = nbr - n
            else:
                nbr = srows[pc]
                pc += 1
                ei[ne] = nbr
                ej[ne] = leaf - n
            ne += 1
            alive[leaf] = False
            deg[leaf] = 0
            deg[nbr] -= 1
        if not ok:
            continue
        rlast = -1
        clast = -1
        for p in range(n):
            if alive[p]:
                rlast = p
        for p in range(n, N):
            if alive[p]:
                clast = p - n
        ei[ne] = rlast
        ej[ne] = clast
        ne += 1

        if collect:
            # arc ids sorted, for the exhaustiveness check
            row = edges_out[code]
            for t in range(nb):
                row[t] = ei[t] * m + ej[t]
            row.sort()

        # basic solution on this tree by leaf stripping
        for p in range(N):
            adj_head[p] = -1
            deg[p] = 0
        for t in range(nb):
            rnode = ei[t]
            cnode = n + ej[t]
            e = 2 * t
            adj_to[e] = cnode
            adj_arc[e] = t
            adj_nxt[e] = adj_head[rnode]
            adj_head[rnode] = e
            e = 2 * t + 1
            adj_to[e] = rnode
            adj_arc[e] = t
            adj_nxt[e] = adj_head[cnode]
            adj_head[cnode] = e
            deg[rnode] += 1
            deg[cnode] += 1
        for p in range(n):
            bal[p] = a[p]
        for p in range(m):
            bal[n + p] = -b[p]
        for t in range(nb):
            f[t] = 0.0
        nq = 0
        for p in range(N):
            if deg[p] == 1:
                leafq[nq] = p
                nq += 1
        feasible = True
        processed = 0
        while nq > 0:
            nq -= 1
            p = leafq[nq]
            if deg[p] != 1:
                continue
            # the single incident arc whose other end is still active
            e = adj_head[p]
            t = -1
            oo = -1
            while e != -1:
                other = adj_to[e]
                if deg[other] > 0:
                    t = adj_arc[e]
                    oo = other
                e = adj_nxt[e]
            if t < 0:
                break
            val = bal[p] if p < n else -bal[p]
            f[t] = val
            if val < ftol:
                feasible = False
                break
            bal[oo] += bal[p]
            bal[p] = 0.0
            deg[p] = 0
            deg[oo] -= 1
            processed += 1
            if deg[oo] == 1:
                leafq[nq] = oo
                nq += 1
        if not feasible or processed < nb - 1:
            continue
        n_feasible += 1
        cost = 0.0
        for t in range(nb):
            if f[t] > 0.0:
                cost += f[t] * D[ei[t], ej[t]]
        if cost < best_cost:
            best_cost = cost
            for t in range(nb):
                best_bi[t] = ei[t]
                best_bj[t] = ej[t]
                best_f[t] = f[t]

    return best_cost, best_bi, best_bj, best_f, n_feasible, total, edges_out


def _tree_count(n: int, m: int) -> int:
    return n ** (m - 1) * m ** (n - 1)


def solve_w2_oracle(
    nu: EmpiricalMeasure,
    mu: EmpiricalMeasure,
    cell_cap: int = DEFAULT_ORACLE_CELL_CAP,
    tree_budget: int = DEFAULT_ORACLE_TREE_BUDGET,
) -> TransportResult:
    """Brute-force optimum by enumerating all bases of U(a, b).

    Every vertex of the transportation polytope is the basic solution of a
    spanning tree of K_{n,m}, so scanning all trees (and keeping the feasible
    basic solutions) finds the LP optimum independently of the simplex path.
    Uniform square instances short-circuit to permutation couplings, the
    vertices of the scaled Birkhoff polytope. ``iterations`` reports the
    number of enumerated candidates.
    """
    if nu.dim != mu.dim:
        raise DimensionMismatch(f"dimensions {nu.dim} and {mu.dim} differ")
    n, m = nu.n, mu.n
    if n * m > cell_cap:
        raise InstanceTooLarge(f"{n}x{m} exceeds the {cell_cap}-cell oracle cap")
    a = nu.weights
    b = mu.weights
    D = cost_matrix(nu, mu)

    if n == 1 or m == 1:
        gamma = np.outer(a, b)  # the unique coupling
        cost = float((gamma * D).sum())
        coupling = Coupling(_as_locked(gamma), a, b)
        return TransportResult(cost, coupling, 1, 0.0)

    uniform_square = (
        n == m
        and np.allclose(a, 1.0 / n, atol=1e-12)
        and np.allclose(b, 1.0 / n, atol=1e-12)
    )
    if uniform_square:
        if math.factorial(n) > tree_budget:
            raise InstanceTooLarge(f"{n}! permutations exceed the oracle budget")
        best_cost = np.inf
        best_perm = None
        count = 0
        for perm in itertools.permutations(range(n)):
            c = float(D[np.arange(n), perm].sum()) / n
            count += 1
            if c < best_cost:
                best_cost = c
                best_perm = perm
        gamma = np.zeros((n, n))
        gamma[np.arange(n), best_perm] = 1.0 / n
        coupling = Coupling(_as_locked(gamma), a, b)
        return TransportResult(best_cost, coupling, count, 0.0)

    if _tree_count(n, m) > tree_budget:
        raise InstanceTooLarge(
            f"{_tree_count(n, m)} spanning trees exceed the oracle budget"
        )
    best_cost, bi, bj, f, n_feasible, total, _ = _tree_enumeration_scan(
        a, b, np.ascontiguousarray(D), False
    )
    if not np.isfinite(best_cost) or n_feasible == 0:
        raise SolverFailure("oracle found no feasible basis; inconsistent marginals?")
    gamma = np.zeros((n, m))
    for t in range(f.size):
        if f[t] > 0.0:
            gamma[bi[t], bj[t]] += f[t]
    coupling = Coupling(_as_locked(gamma), a, b)
    return TransportResult(float(best_cost), coupling, total, 0.0)
