import itertools
import math

import numpy as np
import pytest

from w2route import (ConfigError, DiscreteMeasure, MomentBudget,
                     RadialGeometry, ScheduleSpec, ScoreErrorEnvelope,
                     SwitchGeometry, WeakLogParams, build_switch,
                     conversion_constant, convert_to_w2, moment_recursion,
                     onesided_slope_check, phi_many, sharpness_pair, theta_p,
                     w_cost_discrete)


def make_switch():
    geom = RadialGeometry(schedule=ScheduleSpec.vp(1.0, 3.0),
                          weak=WeakLogParams(0.5, 1.0),
                          score=ScoreErrorEnvelope.constants(0.0, 0.0))
    return build_switch(geom, 2.0)


def identity_switch():
    return SwitchGeometry(s0=1.0, t_s=1.0, g_lo=1.0, b_hi=-0.1, G_hi=0.0,
                          m_lo=0.5, R_sw=0.0, m_sw=0.25, lam=0.0,
                          a_slope=1.0, c_rate=0.25)


def equal_weight(points):
    n = len(points)
    return DiscreteMeasure(points=tuple(points), weights=(1.0 / n,) * n)


def random_measure(rng, n, d):
    return equal_weight([tuple(rng.normal(size=d)) for _ in range(n)])


class TestWCost:
    def test_identical_measures_cost_zero(self):
        mu = equal_weight([(0.0, 1.0), (2.0, -1.0)])
        assert w_cost_discrete(mu, mu, "squared_euclidean") == 0.0

    def test_dirac_pair_unique_coupling(self):
        mu = DiscreteMeasure(points=((0.0, 0.0),), weights=(1.0,))
        nu = DiscreteMeasure(points=((3.0, 4.0),), weights=(1.0,))
        assert w_cost_discrete(mu, nu, "squared_euclidean") == pytest.approx(25.0)
        assert w_cost_discrete(mu, nu, "euclidean") == pytest.approx(5.0)

    def test_two_point_crossing_weights_hand_oracle(self):
        # both couplings enumerated by hand: moving 0.4 mass across is optimal
        mu = DiscreteMeasure(points=((0.0,), (1.0,)), weights=(0.3, 0.7))
        nu = DiscreteMeasure(points=((0.0,), (1.0,)), weights=(0.7, 0.3))
        assert w_cost_discrete(mu, nu, "squared_euclidean") == pytest.approx(0.4)

    def test_quantile_matches_permutation_on_equal_weights(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            mu = random_measure(rng, n, 1)
            nu = random_measure(rng, n, 1)
            via_perm = w_cost_discrete(mu, nu, "squared_euclidean")
            # strip the equal-weight fast path by perturbing one weight pair
            w = np.full(n, 1.0 / n)
            w[0] += 1e-9
            w[-1] -= 1e-9
            mu2 = DiscreteMeasure(points=mu.points, weights=tuple(w))
            via_quant = w_cost_discrete(mu2, nu, "squared_euclidean")
            assert via_quant == pytest.approx(via_perm, abs=1e-7)

    def test_phi_cost_needs_permutation_regime(self):
        sw = make_switch()
        mu = DiscreteMeasure(points=((0.0,), (1.0,)), weights=(0.3, 0.7))
        nu = DiscreteMeasure(points=((0.5,), (1.5,)), weights=(0.5, 0.5))
        with pytest.raises(ConfigError, match="regime"):
            w_cost_discrete(mu, nu, sw)

    def test_oversized_support_rejected(self):
        mu = random_measure(np.random.default_rng(0), 8, 2)
        nu = random_measure(np.random.default_rng(1), 8, 2)
        with pytest.raises(ConfigError):
            w_cost_discrete(mu, nu, "squared_euclidean")

    def test_symmetry_exact(self):
        rng = np.random.default_rng(2)
        sw = make_switch()
        for cost in ("squared_euclidean", "euclidean", sw):
            for _ in range(20):
                n = int(rng.integers(2, 6))
                mu = random_measure(rng, n, 2)
                nu = random_measure(rng, n, 2)
                assert abs(w_cost_discrete(mu, nu, cost)
                           - w_cost_discrete(nu, mu, cost)) <= 1e-12

    def test_triangle_inequality_by_gluing(self):
        rng = np.random.default_rng(3)
        sw = make_switch()
        for _ in range(60):
            n = int(rng.integers(2, 6))
            mu, nu, rho = (random_measure(rng, n, 2) for _ in range(3))
            d_mr = w_cost_discrete(mu, rho, sw)
            d_mn = w_cost_discrete(mu, nu, sw)
            d_nr = w_cost_discrete(nu, rho, sw)
            assert d_mr <= d_mn + d_nr + 1e-9

    def test_cost_dominance_chain(self):
        # W_phi <= W_1 <= W_2 at the computed-value level
        rng = np.random.default_rng(4)
        sw = make_switch()
        for _ in range(40):
            n = int(rng.integers(2, 7))
            mu = random_measure(rng, n, 2)
            nu = random_measure(rng, n, 2)
            w_phi = w_cost_discrete(mu, nu, sw)
            w1 = w_cost_discrete(mu, nu, "euclidean")
            w2 = math.sqrt(w_cost_discrete(mu, nu, "squared_euclidean"))
            assert w_phi <= w1 + 1e-12
            assert w1 <= w2 + 1e-12


class TestThetaAndConversion:
    def test_theta_values(self):
        assert theta_p(4.0) == pytest.approx(1.0 / 3.0, abs=1e-15)
        assert theta_p(10.0) == pytest.approx(4.0 / 9.0, abs=1e-15)
        assert theta_p(2.0 + 1e-9) < 1e-9

    def test_theta_rejects_low_p(self):
        with pytest.raises(ValueError):
            theta_p(2.0)

    def test_constant_scalar_value(self):
        sw = identity_switch()
        c = conversion_constant(sw, MomentBudget(p=4.0, M_bar=1.0))
        assert c == pytest.approx(math.sqrt(6.0) * 2 ** (-1 / 3), rel=1e-14)
        assert c == pytest.approx(1.9442, abs=1e-4)

    def test_budget_scaling_exponent(self):
        sw = identity_switch()
        p = 4.0
        c1 = conversion_constant(sw, MomentBudget(p=p, M_bar=1.0))
        c2 = conversion_constant(sw, MomentBudget(p=p, M_bar=2.0 ** (2 * (p - 1))))
        assert c2 == pytest.approx(2.0 * c1, rel=1e-12)

    def test_slope_scaling_exponent(self):
        sw = identity_switch()
        halved = SwitchGeometry(**{**sw.__dict__, "a_slope": 0.5})
        p = 4.0
        c1 = conversion_constant(sw, MomentBudget(p=p, M_bar=1.0))
        c2 = conversion_constant(halved, MomentBudget(p=p, M_bar=1.0))
        assert c2 == pytest.approx(2.0 ** theta_p(p) * c1, rel=1e-12)

    def test_convert_zero_maps_to_zero(self):
        sw = make_switch()
        assert convert_to_w2(sw, MomentBudget(4.0, 5.0), 0.0) == 0.0

    def test_convert_unit_budget(self):
        sw = identity_switch()
        assert convert_to_w2(sw, MomentBudget(4.0, 1.0), 1.0) == pytest.approx(
            1.9442, abs=1e-4)

    def test_conversion_dominates_brute_force_w2(self):
        # on random pairs with their own empirical p-moments feeding M_bar,
        # W2 <= C * W_phi^theta within 1e-9
        rng = np.random.default_rng(5)
        sw = make_switch()
        p = 4.0
        for _ in range(60):
            n = int(rng.integers(2, 6))
            mu = random_measure(rng, n, 2)
            nu = random_measure(rng, n, 2)
            m_bar = mu.abs_moment(p) + nu.abs_moment(p)
            if m_bar <= 0:
                continue
            w2 = math.sqrt(w_cost_discrete(mu, nu, "squared_euclidean"))
            w_phi = w_cost_discrete(mu, nu, sw)
            bound = convert_to_w2(sw, MomentBudget(p=p, M_bar=m_bar), w_phi)
            assert w2 <= bound + 1e-9

    def test_interpolation_inequality(self):
        # W2^2 <= (rho / a_slope) W_phi + 2^{p-1} M_bar rho^{-(p-2)}
        rng = np.random.default_rng(6)
        sw = make_switch()
        p = 4.0
        for _ in range(40):
            n = int(rng.integers(2, 6))
            mu = random_measure(rng, n, 2)
            nu = random_measure(rng, n, 2)
            m_bar = mu.abs_moment(p) + nu.abs_moment(p)
            w2sq = w_cost_discrete(mu, nu, "squared_euclidean")
            w_phi = w_cost_discrete(mu, nu, sw)
            for rho in rng.uniform(0.05, 20.0, size=20):
                rhs = (rho / sw.a_slope) * w_phi + 2 ** (p - 1) * m_bar * rho ** (-(p - 2))
                assert w2sq <= rhs + 1e-9


class TestMomentRecursion:
    def test_no_growth(self):
        assert moment_recursion(3.5, [(0.0, 0.0)] * 5) == 3.5

    def test_single_step_hand_value(self):
        assert moment_recursion(2.0, [(1.0, 3.0)]) == 7.0

    def test_geometric_closed_form(self):
        A, B, K, m0 = 0.07, 0.4, 23, 1.3
        closed = (1 + A) ** K * (m0 + B / A) - B / A
        assert moment_recursion(m0, [(A, B)] * K) == pytest.approx(closed, rel=1e-12)

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            moment_recursion(1.0, [(-0.1, 0.0)])


class TestSharpness:
    def test_identity_metric_exact_values(self):
        sw = identity_switch()
        w2, wphi, mp = sharpness_pair(10.0, 4.0, sw)
        assert w2 == pytest.approx(0.1, abs=0.0)
        assert wphi == pytest.approx(1e-3, rel=1e-14)
        assert mp == 1.0

    def test_unit_scale(self):
        sw = make_switch()
        w2, wphi, mp = sharpness_pair(1.0, 4.0, sw)
        assert w2 == 1.0
        assert wphi == pytest.approx(float(phi_many(sw, np.array([1.0]))[0]), rel=1e-14)

    def test_w2_slope_exact(self):
        sw = make_switch()
        for p in (3.0, 4.0, 6.0):
            values = [sharpness_pair(R, p, sw)[0] for R in (10.0, 100.0, 1e3, 1e4)]
            slopes = [(math.log(b) - math.log(a)) / math.log(10.0)
                      for a, b in zip(values, values[1:])]
            for s in slopes:
                assert s == pytest.approx(1 - p / 2, abs=1e-9)

    def test_wphi_slope_exact_for_identity_tail(self):
        sw = identity_switch()
        for p in (3.0, 4.0, 6.0):
            values = [sharpness_pair(R, p, sw)[1] for R in (10.0, 100.0, 1e3, 1e4)]
            slopes = [(math.log(b) - math.log(a)) / math.log(10.0)
                      for a, b in zip(values, values[1:])]
            for s in slopes:
                assert s == pytest.approx(1 - p, abs=1e-9)

    def test_wphi_slope_asymptotic_for_gaussian_core(self):
        sw = make_switch()
        p = 4.0
        v3 = sharpness_pair(1e3, p, sw)[1]
        v4 = sharpness_pair(1e4, p, sw)[1]
        slope = (math.log(v4) - math.log(v3)) / math.log(10.0)
        assert slope == pytest.approx(1 - p, abs=2e-2)

    def test_ratio_bracket_no_decay(self):
        for sw in (identity_switch(), make_switch()):
            for p in (3.0, 4.0, 6.0):
                th = theta_p(p)
                ratios = []
                for R in (10.0, 100.0, 1e3, 1e4):
                    w2, wphi, mp = sharpness_pair(R, p, sw)
                    ratios.append(w2 / (sw.a_slope ** (-th)
                                        * mp ** (1 / (2 * (p - 1))) * wphi ** th))
                assert all(0.2 <= r <= 1.0 + 1e-12 for r in ratios)


class TestOneSidedSlope:
    def test_linear_field_exact(self):
        rng = np.random.default_rng(8)
        pairs = [(rng.normal(size=2), rng.normal(size=2)) for _ in range(50)]
        assert onesided_slope_check(lambda x: 0.37 * x, pairs) == pytest.approx(
            0.37, abs=1e-12)

    def test_skew_rotation_is_zero(self):
        # dyadic sample coordinates keep every float product exact, so the
        # skew cancellation survives in floating point at any magnitude
        omega = 1e6
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        vals = np.arange(-8, 9) * 0.5
        pts = [np.array(p) for p in itertools.product(vals[::4], vals[::4])]
        pairs = list(itertools.combinations(pts, 2))
        assert abs(onesided_slope_check(lambda x: omega * J @ x, pairs)) <= 1e-12

    def test_zero_field(self):
        pairs = [(np.array([0.0]), np.array([1.0]))]
        assert onesided_slope_check(lambda x: 0.0 * x, pairs) == 0.0

    def test_coincident_pairs_skipped(self):
        x = np.array([1.0, 2.0])
        pairs = [(x, x), (x, x + 1.0)]
        assert onesided_slope_check(lambda v: 2.0 * v, pairs) == pytest.approx(2.0)
