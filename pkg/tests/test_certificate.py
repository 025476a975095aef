import math

import numpy as np
import pytest

from w2route import (CertificateInputs, ConfigError, DiscretizationSpec,
                     GridAlignmentError, InfeasibleError, MomentBudget,
                     RadialGeometry, ScheduleSpec, ScoreErrorEnvelope,
                     SwitchGeometry, WeakLogParams, build_switch, compare,
                     direct_bound, early_budget, gamma, grid_switch_index,
                     late_budget, margin_load, optimize_switch, proxy_inputs,
                     routed_bound, smoothed_params, theta_p,
                     vp_admissible_threshold, vp_certificates, vp_closed_forms,
                     window_margin)


def make_geom(schedule, alpha, M, ell=0.0, eps=0.0):
    return RadialGeometry(schedule=schedule, weak=WeakLogParams(alpha, M),
                          score=ScoreErrorEnvelope.constants(ell, eps))


def vp_reference_inputs(init_w2=0.0, eps=0.01, n=400, M_bar=6.0):
    """The worked VP configuration: beta=1, alpha=0.5, M=1, T=4, h=0.01."""
    geom = make_geom(ScheduleSpec.vp(1.0, 4.0), 0.5, 1.0, eps=eps)
    disc = DiscretizationSpec.uniform(4.0, n, C_sch=1.0, q=1.5)
    return CertificateInputs(geom=geom, disc=disc,
                             budget=MomentBudget(4.0, M_bar), init_w2=init_w2)


def simpson_dense(fn, a, b, n=8001):
    xs = np.linspace(a, b, n)
    ys = np.array([fn(x) for x in xs])
    h = (b - a) / (n - 1)
    return h / 3 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-1:2].sum())


class TestGridAlignment:
    def test_aligned_index(self):
        disc = DiscretizationSpec.uniform(4.0, 400, 0.0, 1.0)
        assert grid_switch_index(disc, 2.0) == 200
        assert grid_switch_index(disc, 4.0) == 0
        assert grid_switch_index(disc, 0.0) == 400

    def test_misaligned_lists_neighbors(self):
        disc = DiscretizationSpec.uniform(4.0, 400, 0.0, 1.0)
        with pytest.raises(GridAlignmentError) as err:
            grid_switch_index(disc, 2.0051)
        assert "nearest" in str(err.value)


class TestEarlyBudget:
    def test_huge_damping_kills_initialization(self):
        inputs = vp_reference_inputs(init_w2=5.0, eps=0.0)
        inputs = CertificateInputs(geom=inputs.geom,
                                   disc=DiscretizationSpec.uniform(4.0, 400, 0.0, 1.0),
                                   budget=inputs.budget, init_w2=5.0)
        sw = build_switch(inputs.geom, 2.0)
        fast = SwitchGeometry(**{**sw.__dict__, "c_rate": 500.0})
        assert early_budget(inputs, fast) <= 5.0 * math.exp(-500.0 * 2.0) + 1e-12

    def test_uniform_defect_geometric_sum(self):
        inputs = vp_reference_inputs(eps=0.0)
        sw = build_switch(inputs.geom, 2.0)
        c, L, h = sw.c_rate, sw.t_s, 0.01
        d = 1.0 * h ** 1.5
        expected = d * (1 - math.exp(-c * L)) / (1 - math.exp(-c * h))
        assert early_budget(inputs, sw) == pytest.approx(expected, rel=1e-12)

    def test_constant_forcing_closed_form(self):
        eps = 0.01
        geom = make_geom(ScheduleSpec.vp(1.0, 4.0), 0.5, 1.0, eps=eps)
        disc = DiscretizationSpec.uniform(4.0, 400, 0.0, 1.0)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0))
        sw = build_switch(geom, 2.0)
        c, L = sw.c_rate, sw.t_s
        expected = (1.0 * eps / c) * (1 - math.exp(-c * L))  # beta = 1, g^2 = beta
        assert early_budget(inputs, sw) == pytest.approx(expected, rel=1e-9)

    def test_misaligned_switch_rejected(self):
        inputs = vp_reference_inputs()
        sw = build_switch(inputs.geom, 2.0)
        shifted = SwitchGeometry(**{**sw.__dict__, "s0": 2.0051, "t_s": 1.9949})
        with pytest.raises(GridAlignmentError):
            early_budget(inputs, shifted)


class TestLateBudget:
    def test_zero_at_boundary_switch(self):
        inputs = vp_reference_inputs(eps=0.0)
        assert late_budget(inputs, 0.0) == 0.0

    def test_constant_load_geometric_series(self):
        # VP alpha=1, M=0, ell=0.8 gives constant load b0 = beta (ell - 1/2)
        beta, ell, T, n = 1.0, 0.8, 2.0, 100
        geom = make_geom(ScheduleSpec.vp(beta, T), 1.0, 0.0, ell=ell)
        disc = DiscretizationSpec.uniform(T, n, C_sch=1.0, q=1.5)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0))
        b0 = beta * (ell - 0.5)
        h = T / n
        s0 = 1.0
        K = grid_switch_index(disc, s0)
        d = h ** 1.5
        geo = sum(math.exp(b0 * j * h) for j in range(n - K))
        assert late_budget(inputs, s0) == pytest.approx(d * geo, rel=1e-9)

    def test_constant_load_forcing_antiderivative(self):
        beta, ell, eps, T = 1.0, 0.8, 0.02, 2.0
        geom = make_geom(ScheduleSpec.vp(beta, T), 1.0, 0.0, ell=ell, eps=eps)
        disc = DiscretizationSpec.uniform(T, 100, C_sch=0.0, q=1.0)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0))
        b0 = beta * (ell - 0.5)
        s0 = 1.0
        expected = eps * beta * (math.exp(b0 * s0) - 1.0) / b0
        assert late_budget(inputs, s0) == pytest.approx(expected, rel=1e-8)


class TestRoutedBound:
    def test_all_sources_zero(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 4.0), 0.5, 1.0)
        disc = DiscretizationSpec.uniform(4.0, 400, 0.0, 1.0)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0))
        rep = routed_bound(inputs, 2.0)
        assert rep.routed == 0.0

    def test_power_law_scaling_of_early_term(self):
        inputs = vp_reference_inputs(init_w2=0.1)
        rep1 = routed_bound(inputs, 2.0)
        lam = 3.7
        geom2 = make_geom(ScheduleSpec.vp(1.0, 4.0), 0.5, 1.0, eps=0.01 * lam)
        disc2 = DiscretizationSpec.uniform(4.0, 400, C_sch=lam, q=1.5)
        inputs2 = CertificateInputs(geom=geom2, disc=disc2,
                                    budget=inputs.budget, init_w2=0.1 * lam)
        rep2 = routed_bound(inputs2, 2.0)
        assert rep2.early_budget == pytest.approx(lam * rep1.early_budget, rel=1e-9)
        th = theta_p(4.0)
        assert rep2.early_routed == pytest.approx(lam ** th * rep1.early_routed,
                                                  rel=1e-9)

    def test_reference_config_spreadsheet_recomputation(self):
        # recompute every term of the routed bound with dense-grid oracles
        inputs = vp_reference_inputs(init_w2=0.1)
        s0, p = 2.0, 4.0
        rep = compare(inputs, s0)
        geom = inputs.geom
        sw = rep.sw
        h, T = 0.01, 4.0
        d = h ** 1.5
        K = 200

        def load(u):
            return margin_load(geom, u)[1]

        gam = simpson_dense(load, 0.0, s0)
        assert rep.gamma_s0 == pytest.approx(gam, abs=1e-7)

        early = (math.exp(-sw.c_rate * sw.t_s) * 0.1
                 + d * sum(math.exp(-sw.c_rate * (sw.t_s - (k + 1) * h))
                           for k in range(K))
                 + simpson_dense(lambda u: math.exp(-sw.c_rate * (u - s0)) * 0.01,
                                 s0, T))
        assert rep.early_budget == pytest.approx(early, rel=1e-7)

        late = (d * sum(math.exp(simpson_dense(load, 0.0, T - (k + 1) * h))
                        for k in range(K, 250))
                + d * sum(math.exp(simpson_dense(load, 0.0, T - (k + 1) * h, n=2001))
                          for k in range(250, 400))
                + simpson_dense(lambda u: math.exp(simpson_dense(load, 0.0, u, n=801))
                                * 0.01, 0.0, s0, n=801))
        assert rep.shared_late == pytest.approx(late, rel=1e-4)

        C = (math.sqrt(2 * (p - 1)) * (p - 2) ** (-theta_p(p))
             * sw.a_slope ** (-theta_p(p)) * 6.0 ** (1 / (2 * (p - 1))))
        routed = rep.shared_late + math.exp(gam) * C * early ** theta_p(p)
        assert rep.routed == pytest.approx(routed, rel=1e-4)
        assert math.isfinite(rep.routed)


class TestDirectBound:
    def test_all_sources_zero(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 4.0), 0.5, 1.0)
        disc = DiscretizationSpec.uniform(4.0, 100, 0.0, 1.0)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0))
        assert direct_bound(inputs) == 0.0

    def test_zero_load_plain_sums(self):
        # VP alpha=1, M=0, ell=1/2: load identically 0, Gamma identically 0
        geom = make_geom(ScheduleSpec.vp(1.0, 2.0), 1.0, 0.0, ell=0.5, eps=0.03)
        disc = DiscretizationSpec.uniform(2.0, 50, C_sch=1.0, q=1.5)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0), init_w2=0.2)
        h = 2.0 / 50
        expected = 0.2 + 50 * h ** 1.5 + 0.03 * 1.0 * 2.0
        assert direct_bound(inputs) == pytest.approx(expected, rel=1e-10)

    def test_decomposition_identity_every_switch(self):
        inputs = vp_reference_inputs(init_w2=0.1, n=100)
        db = direct_bound(inputs)
        for s0 in (0.04, 1.0, 2.0, 3.96):
            rep = compare(inputs, s0)
            recomposed = rep.shared_late + math.exp(rep.gamma_s0) * rep.early_direct
            assert db == pytest.approx(recomposed, rel=1e-9)
            assert rep.direct == pytest.approx(db, rel=1e-9)


class TestCompare:
    def test_direct_wins_without_mismatch(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.9, 0.5, ell=-2.0, eps=0.01)
        disc = DiscretizationSpec.uniform(3.0, 300, C_sch=1.0, q=1.5)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0), init_w2=0.1)
        rep = compare(inputs, 1.0)
        assert rep.winner == "direct"

    def test_routed_wins_on_large_initialization_error(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.9, 0.05)
        disc = DiscretizationSpec.uniform(3.0, 300, C_sch=1.0, q=1.5)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0), init_w2=50.0)
        rep = compare(inputs, 1.0)
        assert rep.winner == "routed"
        assert rep.routed < rep.direct

    def test_tie_at_zero(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.9, 0.05)
        disc = DiscretizationSpec.uniform(3.0, 300, C_sch=0.0, q=1.5)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0))
        rep = compare(inputs, 1.0)
        assert rep.winner == "tie"
        assert rep.routed == rep.direct == 0.0

    def test_shared_late_term_bit_for_bit(self):
        # both bounds are assembled from the one shared_late float
        inputs = vp_reference_inputs(init_w2=0.1, n=100)
        rep = compare(inputs, 2.0)
        e0 = math.exp(rep.gamma_s0)
        assert rep.routed == rep.shared_late + e0 * rep.early_routed
        assert rep.direct == rep.shared_late + e0 * rep.early_direct

    def test_homogeneity_and_conservatism(self):
        inputs = vp_reference_inputs(init_w2=0.1, n=100)
        rep = compare(inputs, 2.0)
        # pointwise-larger error inputs never decrease any reported bound
        geom_up = make_geom(ScheduleSpec.vp(1.0, 4.0), 0.5, 1.0, ell=0.05, eps=0.02)
        disc_up = DiscretizationSpec.uniform(4.0, 100, C_sch=1.5, q=1.5)
        inputs_up = CertificateInputs(geom=geom_up, disc=disc_up,
                                      budget=inputs.budget, init_w2=0.2)
        rep_up = compare(inputs_up, 2.0)
        assert rep_up.routed >= rep.routed
        assert rep_up.direct >= rep.direct
        assert rep_up.shared_late >= rep.shared_late

    def test_winner_stable_under_dimensional_scaling(self):
        # scale inputs by lam and the p-moment budget by lam^p: both bounds
        # scale by lam exactly, so the winner is unchanged
        lam, p = 7.0, 4.0
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.9, 0.05, eps=0.01)
        disc = DiscretizationSpec.uniform(3.0, 300, C_sch=1.0, q=1.5)
        base = CertificateInputs(geom=geom, disc=disc,
                                 budget=MomentBudget(p, 6.0), init_w2=50.0)
        geom2 = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.9, 0.05, eps=0.01 * lam)
        disc2 = DiscretizationSpec.uniform(3.0, 300, C_sch=lam, q=1.5)
        scaled = CertificateInputs(geom=geom2, disc=disc2,
                                   budget=MomentBudget(p, 6.0 * lam ** p),
                                   init_w2=50.0 * lam)
        r1, r2 = compare(base, 1.0), compare(scaled, 1.0)
        assert r1.winner == r2.winner
        assert r2.routed == pytest.approx(lam * r1.routed, rel=1e-9)
        assert r2.direct == pytest.approx(lam * r1.direct, rel=1e-9)


class TestOptimizeSwitch:
    def test_single_admissible_point(self):
        inputs = vp_reference_inputs(init_w2=0.1, n=100)
        s0, rep = optimize_switch(inputs, [2.0])
        assert s0 == 2.0

    def test_returns_argmin_of_routed(self):
        inputs = vp_reference_inputs(init_w2=0.1, n=100)
        grid = [1.0, 2.0, 3.0]
        values = {s: compare(inputs, s).routed for s in grid}
        s_star, rep = optimize_switch(inputs, grid)
        assert values[s_star] == min(values.values())
        assert rep.routed == values[s_star]

    def test_inadmissible_point_is_ignored(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.25, 1.0)  # threshold ln 3
        disc = DiscretizationSpec.uniform(3.0, 300, C_sch=1.0, q=1.5)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0), init_w2=0.1)
        with_bad = optimize_switch(inputs, [0.5, 1.5, 2.0])
        without = optimize_switch(inputs, [1.5, 2.0])
        assert with_bad == without

    def test_empty_admissible_grid_reports_margins(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.25, 1.0, ell=2.0)
        disc = DiscretizationSpec.uniform(3.0, 300, C_sch=1.0, q=1.5)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0), init_w2=0.1)
        with pytest.raises(InfeasibleError) as err:
            optimize_switch(inputs, [1.0, 2.0])
        assert "margin" in str(err.value)


class TestVpClosedForms:
    def test_zero_at_origin(self):
        for alpha in (0.3, 1.0):
            g, _, _ = vp_closed_forms(1.0, alpha, 2.0, 0.1, 0.0)
            assert g == 0.0

    def test_alpha_one_branch(self):
        beta, M, s = 1.3, 2.0, 0.7
        g, _, _ = vp_closed_forms(beta, 1.0, M, 0.0, s)
        expected = beta * 0.5 * s - beta * s + M * (1 - math.exp(-beta * s))
        assert g == pytest.approx(expected, rel=1e-12)

    def test_matches_quadrature_never_trust_constants(self):
        beta, alpha, M, ell, s = 1.0, 0.5, 1.0, 0.0, 1.0
        geom = make_geom(ScheduleSpec.vp(beta, 2.0), alpha, M, ell=ell)
        g_cl, m_cl, b_cl = vp_closed_forms(beta, alpha, M, ell, s)
        assert g_cl == pytest.approx(gamma(geom, s), abs=1e-8)
        m, b = margin_load(geom, s)
        assert m_cl == pytest.approx(m, abs=1e-12)
        assert b_cl == pytest.approx(b, abs=1e-12)


class TestVpThreshold:
    def test_quarter_alpha(self):
        s_star = vp_admissible_threshold(1.0, 0.25, 0.0)
        assert s_star == pytest.approx(math.log(3.0), abs=1e-12)
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.25, 0.0)
        assert smoothed_params(geom, s_star).alpha_s == pytest.approx(0.5, abs=1e-12)

    def test_clamped_to_zero(self):
        assert vp_admissible_threshold(1.0, 0.9, 0.0) == 0.0
        assert vp_admissible_threshold(2.0, 1.0, 0.49) == 0.0

    def test_unreachable_reserve(self):
        assert vp_admissible_threshold(1.0, 0.5, 0.6) == math.inf
        assert vp_admissible_threshold(1.0, 0.5, 0.5) == math.inf


class TestVpCertificates:
    def test_init_only_closed_forms(self):
        # eps = 0, C_sch = 0: both early budgets reduce to the damped and
        # amplified initialization terms
        beta, alpha, M, T, s0 = 1.0, 0.5, 3.0, 1.2, 1.0
        grid = np.linspace(0.0, T, 121)
        rep = vp_certificates(beta, alpha, M, 0.0, 0.0, grid, 0.0, 1.5, 4.0,
                              6.0, (0.2, 0.15), s0)
        assert rep.load_floor > 0.0
        L = T - s0
        assert rep.xi_sw == pytest.approx(math.exp(-rep.sw.c_rate * L) * 0.15,
                                          rel=1e-12)
        assert rep.xi_dir == pytest.approx(math.exp(rep.load_floor * L) * 0.2,
                                           rel=1e-12)

    def test_geometric_sums_match_explicit(self):
        beta, alpha, M, T, s0 = 1.0, 0.5, 3.0, 1.2, 1.0
        n = 120
        grid = np.linspace(0.0, T, n + 1)
        h = T / n
        C_sch, q, eps = 0.7, 1.5, 1e-3
        rep = vp_certificates(beta, alpha, M, 0.0, eps, grid, C_sch, q, 4.0,
                              6.0, (0.0, 0.0), s0)
        K = int(round((T - s0) / h))
        d = C_sch * h ** q
        c = rep.sw.c_rate
        explicit_sw = d * sum(math.exp(-c * (rep.L - (k + 1) * h)) for k in range(K))
        closed_sw = rep.xi_sw - beta * eps / c * (-math.expm1(-c * rep.L))
        assert closed_sw == pytest.approx(explicit_sw, abs=1e-10, rel=1e-10)
        bl = rep.load_floor
        explicit_dir = d * sum(math.exp(bl * j * h) for j in range(K))
        closed_dir = rep.xi_dir - beta * eps / bl * math.expm1(bl * rep.L)
        assert closed_dir == pytest.approx(explicit_dir, abs=1e-10, rel=1e-10)

    def test_negative_floor_reports_absent_envelope(self):
        grid = np.linspace(0.0, 8.0, 801)
        rep = vp_certificates(1.0, 0.6, 2.0, 0.0, 1e-3, grid, 1.0, 1.5, 4.0,
                              6.0, (0.0, 0.0), 6.0)
        assert rep.load_floor < 0.0
        assert rep.xi_dir is None
        assert rep.strict_improvement is False

    def test_generic_pipeline_cross_check(self):
        # closed forms against the quadrature pipeline on the same config
        beta, alpha, M, ell, eps = 1.0, 0.5, 1.0, 0.0, 0.01
        T, n, s0 = 4.0, 400, 2.0
        grid = np.linspace(0.0, T, n + 1)
        rep_vp = vp_certificates(beta, alpha, M, ell, eps, grid, 1.0, 1.5,
                                 4.0, 6.0, (0.1, 0.1), s0)
        geom = make_geom(ScheduleSpec.vp(beta, T), alpha, M, ell=ell, eps=eps)
        disc = DiscretizationSpec.uniform(T, n, C_sch=1.0, q=1.5)
        inputs = CertificateInputs(geom=geom, disc=disc,
                                   budget=MomentBudget(4.0, 6.0), init_w2=0.1)
        rep = compare(inputs, s0)
        assert rep_vp.routed == pytest.approx(rep.routed, rel=1e-6)
        assert rep_vp.direct == pytest.approx(rep.direct, rel=1e-6)

    def test_below_threshold_rejected(self):
        grid = np.linspace(0.0, 3.0, 301)
        with pytest.raises(InfeasibleError):
            vp_certificates(1.0, 0.25, 1.0, 0.0, 0.0, grid, 0.0, 1.5, 4.0,
                            6.0, (0.0, 0.0), 0.5)


class TestProxyInputs:
    def test_identity_when_unchanged(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.5, 1.0, ell=0.1, eps=0.02)
        prox = proxy_inputs(geom, 0.1, 0.02)
        for s in (0.5, 2.0):
            assert margin_load(prox, s) == margin_load(geom, s)

    def test_raising_ell_moves_margin_and_load(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.5, 1.0, ell=0.0)
        prox = proxy_inputs(geom, 0.2, 0.0)
        for s in (0.5, 1.5, 2.5):
            m0, b0 = margin_load(geom, s)
            m1, b1 = margin_load(prox, s)
            assert m1 < m0
            assert b1 > b0

    def test_proxy_admissible_implies_admissible(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 3.0), 0.4, 1.0, ell=0.05)
        prox = proxy_inputs(geom, 0.15, 0.1)
        for s0 in (1.0, 2.0, 2.8):
            assert window_margin(prox, s0) <= window_margin(geom, s0) + 1e-12
            if window_margin(prox, s0) > 0:
                assert window_margin(geom, s0) > 0


class TestDiscretizationValidation:
    def test_power_law_needs_uniform_grid(self):
        with pytest.raises(ConfigError):
            DiscretizationSpec.power_law((0.0, 0.1, 0.3), 1.0, 1.5)

    def test_per_step_length_checked(self):
        with pytest.raises(ConfigError):
            DiscretizationSpec.per_step((0.0, 1.0, 2.0), (0.1,))

    def test_init_wphi_dominated_by_init_w2(self):
        geom = make_geom(ScheduleSpec.vp(1.0, 2.0), 0.5, 1.0)
        disc = DiscretizationSpec.uniform(2.0, 20, 0.0, 1.0)
        with pytest.raises(ConfigError):
            CertificateInputs(geom=geom, disc=disc,
                              budget=MomentBudget(4.0, 6.0),
                              init_w2=0.1, init_wphi=0.2)
