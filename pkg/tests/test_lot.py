import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lotvar import (
    Coupling,
    CouplingKind,
    FgwParams,
    barycentric_map,
    classify_coupling,
    decompose_fgw,
    decompose_gw,
    decompose_w2,
    project_fgw,
    project_gw,
    project_w,
    pushforward_coupling,
    solve_fgw,
    solve_gw_oracle,
    solve_w2,
    transport_cost_w,
    uniform_measure,
    validate_coupling,
    validate_measure,
    validate_network,
    vectorize_embedding,
)
from lotvar.errors import MarginalMismatch, MissingEdges
from lotvar.gw_fgw import _ipf_coupling
from lotvar.lot import gw_cross_term, w_cross_term

from conftest import random_measure


def random_coupling(rng, a, b):
    return _ipf_coupling(a, b, rng)


class TestBarycentricMap:
    def test_identity_coupling_returns_targets(self, rng):
        m = random_measure(rng, 5, 2)
        tgt = random_measure(rng, 5, 2)
        g = Coupling(np.diag(m.weights), m.weights, m.weights)
        with pytest.raises(MarginalMismatch):
            barycentric_map(g, m, tgt)  # weights of tgt differ in general
        tgt_same = validate_measure(m.weights, tgt.points)
        T = barycentric_map(Coupling(np.diag(m.weights), m.weights, m.weights), m, tgt_same)
        np.testing.assert_allclose(T, tgt_same.points, atol=1e-15)

    def test_single_source_gets_target_mean(self, rng):
        src = validate_measure([1.0], [[0.0, 0.0]])
        tgt = random_measure(rng, 7, 2)
        g = Coupling(tgt.weights[None, :], src.weights, tgt.weights)
        T = barycentric_map(g, src, tgt)
        np.testing.assert_allclose(T[0], tgt.weights @ tgt.points, rtol=1e-14)

    def test_product_coupling_rows_all_target_mean(self, rng):
        src = random_measure(rng, 4, 3)
        tgt = random_measure(rng, 6, 3)
        g = Coupling(np.outer(src.weights, tgt.weights), src.weights, tgt.weights)
        T = barycentric_map(g, src, tgt)
        mean = tgt.weights @ tgt.points
        for row in T:
            np.testing.assert_allclose(row, mean, rtol=1e-13)


class TestProjections:
    def test_project_w_identity_zero_field(self, rng):
        m = random_measure(rng, 5, 2)
        g = Coupling(np.diag(m.weights), m.weights, m.weights)
        proj = project_w(g, m, m)
        np.testing.assert_allclose(proj.vector_field, 0.0, atol=1e-15)

    def test_project_w_symmetric_split(self):
        src = validate_measure([1.0], [[0.0]])
        tgt = validate_measure([0.5, 0.5], [[-1.0], [1.0]])
        proj = project_w(Coupling(np.array([[0.5, 0.5]]), src.weights, tgt.weights), src, tgt)
        np.testing.assert_allclose(proj.mapped_points, [[0.0]], atol=1e-15)
        np.testing.assert_allclose(proj.vector_field, [[0.0]], atol=1e-15)

    def test_project_w_monotone_pair(self):
        nu = uniform_measure([0.0, 1.0])
        mu = uniform_measure([0.5, 1.5])
        proj = project_w(solve_w2(nu, mu).coupling, nu, mu)
        np.testing.assert_allclose(proj.mapped_points, [[0.5], [1.5]], atol=1e-14)
        np.testing.assert_allclose(proj.vector_field, [[0.5], [0.5]], atol=1e-14)

    def test_project_gw_identity_coupling_recovers_edges(self, rng):
        m = random_measure(rng, 4, 2)
        E = rng.normal(size=(4, 4))
        net = validate_network(m.weights, m.points, E + E.T)
        g = Coupling(np.diag(m.weights), m.weights, m.weights)
        proj = project_gw(g, net, net)
        np.testing.assert_allclose(proj.projected_edges, net.edges, atol=1e-12)
        np.testing.assert_array_equal(proj.mapped_points, net.base.points)

    def test_project_gw_single_node_scalar_average(self, rng):
        src = validate_network([1.0], [[0.0]], [[0.0]])
        m = random_measure(rng, 5, 1)
        B = rng.normal(size=(5, 5))
        tgt = validate_network(m.weights, m.points, B)
        g = Coupling(m.weights[None, :], src.base.weights, m.weights)
        proj = project_gw(g, src, tgt)
        want = float(m.weights @ B @ m.weights)
        assert proj.projected_edges[0, 0] == pytest.approx(want, rel=1e-13)

    def test_project_gw_two_node(self):
        # gamma = I/2 averages nothing: C equals B
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        B = np.array([[0.0, 2.0], [2.0, 0.0]])
        Xn = validate_network([0.5, 0.5], [[0.0], [1.0]], A)
        Yn = validate_network([0.5, 0.5], [[0.0], [2.0]], B)
        g = Coupling(0.5 * np.eye(2), Xn.base.weights, Yn.base.weights)
        proj = project_gw(g, Xn, Yn)
        np.testing.assert_allclose(proj.projected_edges, B, atol=1e-15)

    def test_project_fgw_fixed_point(self, rng):
        m = random_measure(rng, 4, 2)
        E = rng.normal(size=(4, 4))
        net = validate_network(m.weights, m.points, E + E.T)
        g = Coupling(np.diag(m.weights), m.weights, m.weights)
        proj = project_fgw(g, net, net)
        np.testing.assert_allclose(proj.mapped_points, net.base.points, atol=1e-14)
        np.testing.assert_allclose(proj.projected_edges, net.edges, atol=1e-12)


class TestDecomposeW2:
    def test_symmetric_split_all_probabilistic(self):
        nu = validate_measure([1.0], [[0.0]])
        mu = validate_measure([0.5, 0.5], [[-1.0], [1.0]])
        rep = decompose_w2(nu, mu)
        assert rep.total == pytest.approx(1.0, rel=1e-14)
        assert rep.deterministic == pytest.approx(0.0, abs=1e-15)
        assert rep.probabilistic == pytest.approx(1.0, rel=1e-14)
        assert rep.percent_explained == pytest.approx(0.0, abs=1e-15)
        assert rep.coupling_certified_optimal

    def test_matched_supports_all_deterministic(self, rng):
        m = random_measure(rng, 5, 2)
        tgt = validate_measure(m.weights, m.points + 1.0)
        g = Coupling(np.diag(m.weights), m.weights, m.weights)
        rep = decompose_w2(m, tgt, gamma=g)
        assert rep.probabilistic == pytest.approx(0.0, abs=1e-15)
        assert rep.percent_explained == 1.0

    def test_identity_and_certified_resolve_random(self, rng):
        # 5x7 instance: identity at 1e-9 and deterministic = W2^2(nu, T#nu)
        nu = random_measure(rng, 5, 3)
        mu = random_measure(rng, 7, 3)
        rep = decompose_w2(nu, mu)
        assert abs(rep.total - (rep.deterministic + rep.probabilistic)) <= 1e-9 * (
            1.0 + rep.total
        )
        proj = project_w(solve_w2(nu, mu).coupling, nu, mu)
        resolved = solve_w2(nu, proj.projected_measure).cost
        assert abs(rep.deterministic - resolved) <= 1e-9 * (1.0 + rep.total)

    def test_identity_for_arbitrary_couplings(self, rng):
        # separability never needed optimality
        nu = random_measure(rng, 6, 2)
        mu = random_measure(rng, 9, 2)
        g = validate_coupling(random_coupling(rng, nu.weights, mu.weights), nu.weights, mu.weights)
        rep = decompose_w2(nu, mu, gamma=g)
        assert not rep.coupling_certified_optimal
        assert abs(rep.total - (rep.deterministic + rep.probabilistic)) <= 1e-9 * (
            1.0 + rep.total
        )
        assert rep.total == pytest.approx(
            transport_cost_w(g, nu.points, mu.points), rel=1e-12
        )


class TestDecomposeGw:
    def test_identical_networks_zero(self, rng):
        m = validate_measure(np.full(3, 1 / 3), rng.normal(size=(3, 2)))
        E = rng.normal(size=(3, 3))
        net = validate_network(m.weights, m.points, E + E.T)
        rep = decompose_gw(net, net)
        assert rep.total <= 1e-12
        assert rep.percent_explained == 1.0

    def test_two_node_instance(self):
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        B = np.array([[0.0, 2.0], [2.0, 0.0]])
        Xn = validate_network([0.5, 0.5], [[0.0], [1.0]], A)
        Yn = validate_network([0.5, 0.5], [[0.0], [2.0]], B)
        g = Coupling(0.5 * np.eye(2), Xn.base.weights, Yn.base.weights)
        rep = decompose_gw(Xn, Yn, gamma=g)
        assert rep.total == pytest.approx(0.5, rel=1e-13)
        assert rep.deterministic == pytest.approx(0.5, rel=1e-13)
        assert rep.probabilistic == pytest.approx(0.0, abs=1e-13)
        # diam2(Y)^2 - diam2(T)^2 = 2 - 2 = 0
        assert rep.diam2_target**2 - rep.diam2_projection**2 == pytest.approx(
            0.0, abs=1e-13
        )

    def test_single_node_forced(self, rng):
        Xn = validate_network([1.0], [[0.0]], [[0.7]])
        m = random_measure(rng, 4, 1)
        B = rng.normal(size=(4, 4))
        Yn = validate_network(m.weights, m.points, B)
        rep = decompose_gw(Xn, Yn, gamma=Coupling(m.weights[None, :], Xn.base.weights, m.weights))
        meanB = float(m.weights @ B @ m.weights)
        assert rep.deterministic == pytest.approx((0.7 - meanB) ** 2, rel=1e-12)
        spread = float(
            sum(
                m.weights[j] * m.weights[l] * (meanB - B[j, l]) ** 2
                for j in range(4)
                for l in range(4)
            )
        )
        assert rep.probabilistic == pytest.approx(spread, rel=1e-10)

    def test_diam_identity_any_coupling(self, rng):
        m1 = validate_measure(np.full(4, 0.25), rng.normal(size=(4, 2)))
        m2 = random_measure(rng, 6, 2)
        E1 = rng.normal(size=(4, 4))
        E2 = rng.normal(size=(6, 6))
        Xn = validate_network(m1.weights, m1.points, E1 + E1.T)
        Yn = validate_network(m2.weights, m2.points, E2 + E2.T)
        g = validate_coupling(
            random_coupling(rng, m1.weights, m2.weights), m1.weights, m2.weights
        )
        rep = decompose_gw(Xn, Yn, gamma=g)
        assert abs(
            rep.probabilistic - (rep.diam2_target**2 - rep.diam2_projection**2)
        ) <= 1e-9 * (1.0 + rep.total)
        assert abs(rep.total - (rep.deterministic + rep.probabilistic)) <= 1e-9 * (
            1.0 + rep.total
        )


class TestDecomposeFgw:
    def test_identical_structured_objects_zero(self, rng):
        m = validate_measure(np.full(3, 1 / 3), rng.normal(size=(3, 2)))
        E = rng.normal(size=(3, 3))
        net = validate_network(m.weights, m.points, E + E.T)
        rep = decompose_fgw(net, net, alpha=0.5)
        assert rep.total <= 1e-12

    def test_alpha_one_equals_w2_report(self, rng):
        Xm = random_measure(rng, 4, 2)
        Ym = random_measure(rng, 5, 2)
        Xn = validate_network(Xm.weights, Xm.points, np.zeros((4, 4)))
        Yn = validate_network(Ym.weights, Ym.points, np.ones((5, 5)))
        rep = decompose_fgw(Xn, Yn, alpha=1.0)
        ref = decompose_w2(Xm, Ym)
        assert rep.total == ref.total
        assert rep.deterministic == ref.deterministic

    def test_separability_with_product_coupling(self, rng):
        # the fused split holds for a non-optimal coupling, at every alpha
        Xm = random_measure(rng, 4, 2)
        Ym = random_measure(rng, 5, 2)
        E1 = rng.normal(size=(4, 4))
        E2 = rng.normal(size=(5, 5))
        Xn = validate_network(Xm.weights, Xm.points, E1 + E1.T)
        Yn = validate_network(Ym.weights, Ym.points, E2 + E2.T)
        g = Coupling(np.outer(Xm.weights, Ym.weights), Xm.weights, Ym.weights)
        for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
            rep = decompose_fgw(Xn, Yn, alpha=alpha, gamma=g)
            assert abs(rep.total - (rep.deterministic + rep.probabilistic)) <= 1e-9 * (
                1.0 + rep.total
            )

    def test_fused_projection_closes_cor1(self):
        # run the solver on the 2-node instance and check the identity
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        B = np.array([[0.0, 2.0], [2.0, 0.0]])
        Xn = validate_network([0.5, 0.5], [[0.0], [1.0]], A)
        Yn = validate_network([0.5, 0.5], [[0.0], [2.0]], B)
        res = solve_fgw(Xn, Yn, FgwParams(alpha=0.5))
        rep = decompose_fgw(Xn, Yn, alpha=0.5, gamma=res.coupling)
        assert abs(rep.total - (rep.deterministic + rep.probabilistic)) <= 1e-9 * (
            1.0 + rep.total
        )
        assert rep.total == pytest.approx(res.cost, rel=1e-12)


class TestCrossTerms:
    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_w_cross_term_vanishes_for_any_coupling(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 8))
        d = int(rng.integers(1, 4))
        nu = random_measure(rng, n, d)
        mu = random_measure(rng, m, d)
        g = random_coupling(rng, nu.weights, mu.weights)
        scale = 1.0 + abs(transport_cost_w(g, nu.points, mu.points))
        assert abs(w_cross_term(g, nu.points, mu.points, nu.weights)) <= 1e-9 * scale

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_gw_cross_term_vanishes_for_any_coupling(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 7))
        nu = random_measure(rng, n, 2)
        mu = random_measure(rng, m, 2)
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(m, m))
        g = random_coupling(rng, nu.weights, mu.weights)
        from lotvar import transport_cost_gw

        scale = 1.0 + abs(transport_cost_gw(g, A, B))
        assert abs(gw_cross_term(g, A, B, nu.weights)) <= 1e-9 * scale

    def test_pushforward_is_purely_probabilistic(self, rng):
        nu = random_measure(rng, 5, 3)
        mu = random_measure(rng, 8, 3)
        gamma = solve_w2(nu, mu).coupling
        proj = project_w(gamma, nu, mu)
        pi = pushforward_coupling(gamma, proj, mu)
        cls = classify_coupling(pi, proj.projected_measure, mu, tol=1e-9)
        assert cls.kind in (CouplingKind.PURELY_PROBABILISTIC, CouplingKind.DETERMINISTIC)
        assert cls.max_residual <= 1e-9


class TestCouplingComposition:
    def test_composition_marginals_and_cost_shift(self, rng):
        # gamma_ij = sum_p ghat_ip gstar_pj / a_p lies in U(a, b) and its
        # W-cost differs from ghat's by the constant second-moment gap
        nu = random_measure(rng, 5, 2)
        mu = random_measure(rng, 7, 2)
        gstar = solve_w2(nu, mu).coupling
        proj = project_w(gstar, nu, mu)
        T = proj.mapped_points
        for _ in range(5):
            ghat = random_coupling(rng, nu.weights, nu.weights)
            comp = np.einsum("ip,pj->ij", ghat / nu.weights[None, :], gstar.matrix)
            validate_coupling(comp, nu.weights, mu.weights)
            lhs = transport_cost_w(comp, nu.points, mu.points)
            rhs = transport_cost_w(ghat, nu.points, T) + (
                float(mu.weights @ (mu.points**2).sum(axis=1))
                - float(nu.weights @ (T**2).sum(axis=1))
            )
            assert abs(lhs - rhs) <= 1e-9 * (1.0 + abs(lhs))


class TestVectorize:
    def test_length_formula(self, rng):
        m = validate_measure(np.full(3, 1 / 3), rng.normal(size=(3, 2)))
        E = rng.normal(size=(3, 3))
        net = validate_network(m.weights, m.points, E + E.T)
        g = Coupling(np.diag(m.weights), m.weights, m.weights)
        proj = project_fgw(g, net, net)
        assert vectorize_embedding(proj, 0.5).size == 3 * 2 + (3 + 3)
        assert vectorize_embedding(proj, 0.0).size == 3 * 2
        assert vectorize_embedding(proj, 1.0).size == 3 + 3

    def test_edge_block_values(self):
        # C = [[0, 1], [1, 0]] -> triu(2C - diag C) = [0, 2, 0]
        m = uniform_measure([[0.0], [1.0]])
        proj_edges = np.array([[0.0, 1.0], [1.0, 0.0]])
        from lotvar.lot import ProjectionResult

        proj = ProjectionResult(
            mapped_points=m.points,
            projected_measure=m,
            vector_field=np.zeros((2, 1)),
            projected_edges=proj_edges,
        )
        np.testing.assert_array_equal(vectorize_embedding(proj, 1.0), [0.0, 2.0, 0.0])
        np.testing.assert_array_equal(
            vectorize_embedding(proj, 1.0, plain_triu=True), [0.0, 1.0, 0.0]
        )

    def test_missing_edges(self, rng):
        nu = random_measure(rng, 3, 2)
        mu = random_measure(rng, 4, 2)
        proj = project_w(solve_w2(nu, mu).coupling, nu, mu)
        with pytest.raises(MissingEdges):
            vectorize_embedding(proj, 0.5)
        assert vectorize_embedding(proj, 0.0).size == 6

    def test_certified_gw_deterministic_part_is_a_distance(self, rng):
        # oracle-certified PSD instance: det = GW^2(X, T), attained by identity
        n = 4
        R1 = rng.normal(size=(n, n))
        R2 = rng.normal(size=(n, n))
        Xn = validate_network(np.full(n, 1 / n), rng.normal(size=(n, 2)), R1 @ R1.T)
        Yn = validate_network(np.full(n, 1 / n), rng.normal(size=(n, 2)), R2 @ R2.T)
        res = solve_gw_oracle(Xn, Yn)
        assert res.globally_certified
        rep = decompose_gw(Xn, Yn, gamma=res.coupling, certified=True)
        proj = project_gw(res.coupling, Xn, Yn)
        Tnet = validate_network(
            Xn.base.weights, Xn.base.points, proj.projected_edges
        )
        resolve = solve_gw_oracle(Xn, Tnet)
        assert resolve.globally_certified
        assert abs(rep.deterministic - resolve.cost) <= 1e-9 * (1.0 + rep.total)
