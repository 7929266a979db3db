#!/usr/bin/env python3
"""
Tests for sweeps, decay fits and the critical-parameter brackets.
"""
import math

import pytest

from pcabp.analysis import (
    CriticalEstimate,
    DualityReport,
    _proxy_kind,
    bend,
    bend_horizons,
    duality_check,
    estimate_pc,
    estimate_qc,
    fit_decay,
    sweep,
)
from pcabp.bp_engine import UpdateFamily, east_update_family
from pcabp.errors import DegenerateFitError, DomainError
from pcabp.pca_engine import CurvePoint, theta_curve
from pcabp.rates import LinearCurve, dirac, identity_ca, oriented_site_percolation, path_family
from pcabp.upset_algebra import Neighborhood, full_family


@pytest.fixture
def line():
    return Neighborhood(1, 1, memoryless=True)


@pytest.fixture
def osp_curve(line):
    return LinearCurve(dirac(path_family(line, [(-1, -1), (1, -1)])))


def _estimate(lower, upper):
    return CriticalEstimate(lower, upper, 0.0, 0.0, "proxy", 4, 0.05, 100, 0)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

class TestSweep:
    def test_exhaustive_theta(self, osp_curve):
        """
        Test theta_1 = p and theta_2 = p^2 (2 - p) at p = 1/2.

        :return: None
        :rtype: None
        """
        result = sweep(osp_curve, ["1/2"], [2, 1], replicas=0, seed=0, exhaustive=True)
        assert result.kind == "theta"
        assert [row.horizon for row in result.rows] == [1, 2]
        assert [row.estimate for row in result.rows] == [0.5, 0.375]
        assert all(row.stderr == 0.0 for row in result.rows)

    def test_bp_sweep(self):
        """
        Test that a bootstrap family sweeps P(origin healthy at t).

        :return: None
        :rtype: None
        """
        result = sweep(east_update_family(), [0.0, 1.0], [0, 2], replicas=50, seed=1)
        assert result.kind == "healthy"
        assert [row.estimate for row in result.curve(0.0)] == [1.0, 1.0]
        assert [row.estimate for row in result.curve(1.0)] == [0.0, 0.0]

    def test_bp_sweep_is_never_exhaustive(self):
        """
        Test that exhaustive mode is refused for update families.

        :return: None
        :rtype: None
        """
        with pytest.raises(DomainError):
            sweep(east_update_family(), [0.1], [1], replicas=10, seed=0, exhaustive=True)

    def test_bad_grid(self, osp_curve):
        """
        Test empty grids and parameters off the curve.

        :return: None
        :rtype: None
        """
        with pytest.raises(DomainError):
            sweep(osp_curve, [], [1], replicas=10, seed=0)
        with pytest.raises(DomainError):
            sweep(osp_curve, ["3/2"], [1], replicas=10, seed=0)
        with pytest.raises(DomainError):
            sweep(east_update_family(), [1.5], [1], replicas=10, seed=0)

    def test_independent_of_worker_count(self, osp_curve):
        """
        Test that the rows do not depend on the pool size.

        :return: None
        :rtype: None
        """
        a = sweep(osp_curve, [0.6, 0.8], [2, 4], replicas=500, seed=3, workers=1)
        b = sweep(osp_curve, [0.6, 0.8], [2, 4], replicas=500, seed=3, workers=2)
        assert [row.estimate for row in a.rows] == [row.estimate for row in b.rows]
        assert [row.seed for row in a.rows] == [row.seed for row in b.rows]


# ---------------------------------------------------------------------------
# Decay fits
# ---------------------------------------------------------------------------

class TestFitDecay:
    def test_recovers_rate_and_constant(self):
        """
        Test that exact exponential rows give back c and C.

        :return: None
        :rtype: None
        """
        points = [CurvePoint(t, math.exp(-0.2 * t), 0.0, 0) for t in range(10)]
        fit = fit_decay(points, t_min=0)
        assert fit.c == pytest.approx(0.2)
        assert fit.C == pytest.approx(1.0)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.decaying
        assert (fit.t_min, fit.t_max, fit.rows_used) == (0, 9, 10)

    def test_default_fit_starts_at_one(self):
        """
        Test that the default fit leaves out t = 0.

        :return: None
        :rtype: None
        """
        points = [CurvePoint(t, math.exp(-0.2 * t), 0.0, 0) for t in range(10)]
        fit = fit_decay(points)
        assert fit.c == pytest.approx(0.2)
        assert (fit.t_min, fit.t_max, fit.rows_used) == (1, 9, 9)

    def test_transient_at_zero_is_left_out(self):
        """
        Test that theta_0 = 1 off the exponential does not spoil the fit.

        :return: None
        :rtype: None
        """
        points = [CurvePoint(0, 1.0, 0.0, 0)]
        points += [CurvePoint(t, 0.5 * math.exp(-0.2 * t), 0.0, 0) for t in range(1, 12)]
        fit = fit_decay(points)
        assert fit.c == pytest.approx(0.2)
        assert fit.C == pytest.approx(0.5)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit_decay(points, t_min=0).r_squared < 0.999


    def test_flat_rows_do_not_decay(self):
        """
        Test that a constant curve is reported as not decaying.

        :return: None
        :rtype: None
        """
        fit = fit_decay([CurvePoint(t, 0.5, 0.0, 0) for t in range(6)])
        assert not fit.decaying

    def test_sparse_rows_are_skipped(self):
        """
        Test that rows with too few positive replicas are left out.

        :return: None
        :rtype: None
        """
        points = [CurvePoint(t, math.exp(-0.1 * t), 0.0, 0) for t in range(6)]
        points.append(CurvePoint(6, 0.001, 0.0, 1000))
        assert fit_decay(points, t_min=0).rows_used == 6

    def test_all_zero_past_start(self):
        """
        Test that a curve dropping straight to zero cannot be fitted.

        :return: None
        :rtype: None
        """
        points = [CurvePoint(0, 1.0, 0.0, 100)] + [CurvePoint(t, 0.0, 0.0, 100) for t in range(1, 8)]
        with pytest.raises(DegenerateFitError):
            fit_decay(points)

    @pytest.mark.slow
    def test_oriented_percolation_decays_below_threshold(self):
        """
        Test an exponential fit of theta_t for oriented site percolation at p = 0.6.

        :return: None
        :rtype: None
        """
        curve = theta_curve(oriented_site_percolation("3/5"), 40, 100000, seed=0)
        fit = fit_decay(curve.points)
        assert fit.c > 0
        assert fit.r_squared >= 0.98
        for before, after in zip(curve.points, curve.points[1:]):
            assert after.estimate <= before.estimate + 4 * math.hypot(before.stderr, after.stderr)



# ---------------------------------------------------------------------------
# Finite-size proxies
# ---------------------------------------------------------------------------

def _exact(values):
    return [CurvePoint(t, v, 0.0, 0) for t, v in zip((2, 4, 8), values)]


class TestBend:
    def test_horizons(self):
        """
        Test the three horizons read at T and the lower limit on T.

        :return: None
        :rtype: None
        """
        assert bend_horizons(256) == (64, 128, 256)
        assert bend_horizons(3) == (1, 2, 3)
        with pytest.raises(DomainError):
            bend_horizons(2)

    def test_exponential_decay_bends_down(self):
        """
        Test that exp(-c t) reads -c t1 / log 2 on doubling horizons.

        :return: None
        :rtype: None
        """
        value, stderr = bend(_exact([math.exp(-0.1 * t) for t in (2, 4, 8)]))
        assert value == pytest.approx(-0.2 / math.log(2))
        assert stderr == 0.0

    def test_power_law_is_straight(self):
        """
        Test that t^(-1/2) has no log-log curvature.

        :return: None
        :rtype: None
        """
        value, _ = bend(_exact([t ** -0.5 for t in (2, 4, 8)]))
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_plateau_bends_up(self):
        """
        Test that a curve levelling off reads positive.

        :return: None
        :rtype: None
        """
        value, _ = bend(_exact([0.9, 0.8, 0.79]))
        assert value > 0

    def test_dead_and_frozen_curves(self):
        """
        Test the infinite readings of a dying curve and a constant one.

        :return: None
        :rtype: None
        """
        assert bend(_exact([0.5, 0.1, 0.0]))[0] == -math.inf
        sparse = [CurvePoint(2, 0.5, 0.01, 1000), CurvePoint(4, 0.1, 0.01, 1000),
                  CurvePoint(8, 0.005, 0.002, 1000)]
        assert bend(sparse)[0] == -math.inf
        assert bend(_exact([0.3, 0.3, 0.3]))[0] == math.inf

    def test_sampled_points_carry_an_error(self):
        """
        Test that Monte Carlo points give a positive standard error.

        :return: None
        :rtype: None
        """
        points = [CurvePoint(t, v, 0.01, 1000) for t, v in zip((2, 4, 8), (0.6, 0.4, 0.2))]
        value, stderr = bend(points)
        assert value == pytest.approx((math.log(0.5) - math.log(2 / 3)) / math.log(2))
        assert stderr > 0

    def test_bad_points(self):
        """
        Test the point count and horizon order checks.

        :return: None
        :rtype: None
        """
        with pytest.raises(DomainError):
            bend(_exact([0.5, 0.4]))
        with pytest.raises(DomainError):
            bend([CurvePoint(t, 0.5, 0.0, 0) for t in (4, 2, 8)])

    def test_proxy_names(self):
        """
        Test that only the known proxies are accepted.

        :return: None
        :rtype: None
        """
        assert _proxy_kind("threshold") == "threshold"
        assert _proxy_kind(None) == "bend"
        with pytest.raises(DomainError):
            _proxy_kind("median")


# ---------------------------------------------------------------------------
# Critical parameters
# ---------------------------------------------------------------------------

class TestEstimateQc:
    def test_empty_update_set_collapses_at_zero(self):
        """
        Test that a family holding the empty set infects everything at once.

        :return: None
        :rtype: None
        """
        result = estimate_qc(UpdateFamily.of(1, [[]]), T=3, replicas=200, seed=0)
        assert result.collapsed
        assert result.lower == 0.0
        assert "lower endpoint" in result.note

    def test_no_update_sets_push_qc_to_one(self):
        """
        Test that a family that never spreads keeps the origin healthy for any q < 1.

        :return: None
        :rtype: None
        """
        result = estimate_qc(UpdateFamily(1, ()), T=3, replicas=2000, tolerance=0.05, seed=0)
        assert result.upper == 1.0
        assert result.lower > 0.9
        assert result.evaluations

    def test_threshold_proxy(self):
        """
        Test the threshold proxy on a family that never spreads.

        :return: None
        :rtype: None
        """
        result = estimate_qc(UpdateFamily(1, ()), T=3, replicas=2000, tolerance=0.05, seed=0,
                             proxy="threshold")
        assert result.upper == 1.0
        assert result.lower > 0.9
        assert result.proxy.startswith("P(healthy at T")


class TestEstimatePc:
    def test_non_absorbing_curve(self, line):
        """
        Test that a curve without an absorbing all-zero state sits at its upper endpoint.

        :return: None
        :rtype: None
        """
        result = estimate_pc(LinearCurve(dirac(full_family(line))), T=4, width=9, replicas=10)
        assert result.collapsed
        assert result.upper == 1.0
        assert "non-absorbing" in result.note

    def test_identity_bend_sits_at_one(self):
        """
        Test that theta_t(p) = p^t bends down for every p < 1.

        :return: None
        :rtype: None
        """
        result = estimate_pc(LinearCurve(dirac(identity_ca(1))), T=8, replicas=2000,
                             tolerance=0.05, seed=2, proxy="bend")
        assert result.upper == 1.0
        assert result.lower >= 0.9
        assert result.proxy.startswith("bend")
        assert all(value < 0 for p, value, _ in result.evaluations if p < 1)

    @pytest.mark.slow
    def test_identity_with_death(self):
        """
        Test that theta_T(p) = p^T puts the threshold bracket near 0.05^(1/T).

        :return: None
        :rtype: None
        """
        result = estimate_pc(LinearCurve(dirac(identity_ca(1))), T=4, width=9, replicas=20000,
                             tolerance=0.01, seed=2, proxy="threshold")
        assert result.lower <= result.upper
        assert abs(result.upper - 0.05 ** 0.25) < 0.03

    @pytest.mark.slow
    def test_oriented_percolation_bracket(self, line):
        """
        Test the bend bracket of oriented site percolation with death at T=256
        against p_c = 0.7055, and the dual bootstrap bracket against 1 - p_c.

        :return: None
        :rtype: None
        """
        U = path_family(line, [(-1, -1), (1, -1)])
        report = duality_check(line, U, T=256, width=512, replicas=10000, tolerance=0.005,
                               seed=0, proxy="bend")
        assert 0.68 <= report.pc.lower <= report.pc.upper <= 0.73, str(report.pc)
        assert report.passed, report.summary()


class TestDuality:
    def test_mapped_bracket(self):
        """
        Test that p -> 1 - p swaps the ends of the bracket.

        :return: None
        :rtype: None
        """
        report = DualityReport(_estimate(0.4, 0.5), _estimate(0.45, 0.55), east_update_family(), 0.0)
        assert report.mapped == pytest.approx((0.5, 0.6))
        assert report.passed
        assert "overlap" in report.summary()

    def test_disjoint_brackets(self):
        """
        Test that brackets further apart than the slack fail.

        :return: None
        :rtype: None
        """
        report = DualityReport(_estimate(0.1, 0.2), _estimate(0.3, 0.4), east_update_family(), 0.02)
        assert not report.passed
        assert "NO overlap" in report.summary()

    @pytest.mark.slow
    def test_identity_rule(self):
        """
        Test q_c of the dual family against 1 - p_c for the identity rule.

        :return: None
        :rtype: None
        """
        U = identity_ca(1)
        report = duality_check(U.neighborhood, U, T=4, width=9, replicas=20000, tolerance=0.01, seed=1,
                               proxy="threshold")
        assert report.passed, report.summary()
