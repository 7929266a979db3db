#!/usr/bin/env python3
"""
Tests for pivotality, the pivotal-sum formula, forward exploration and the
variance inequality on oriented site percolation at height 2.
"""
import itertools
from fractions import Fraction

import pytest

from pcabp.errors import DomainError
from pcabp.pca_engine import AtomTable, ConeBox, FieldSample, cone_event
from pcabp.rates import dirac, oriented_site_percolation, path_family
from pcabp.sharpness_audit import (
    osss_explore,
    osss_inequality_check,
    pivotal_difference_check,
    pivotal_sites,
    revealment_estimate,
    russo_check,
)
from pcabp.upset_algebra import Neighborhood


@pytest.fixture
def line():
    return Neighborhood(1, 1, memoryless=True)


@pytest.fixture
def osp_base(line):
    """Dirac mass on "meets {-1, 1}", the base of the death curve."""
    return dirac(path_family(line, [(-1, -1), (1, -1)]))


@pytest.fixture
def half():
    return oriented_site_percolation("1/2")


def _pinned(measure, open_sites, n=2):
    """Field with the given cone sites alive and every other cone site dead."""
    table = AtomTable.of(measure)
    alive = 1 - table.empty_index
    cone = ConeBox(measure.neighborhood, n)
    overrides = {site: alive if site in open_sites else table.empty_index for site in cone.sites}
    return FieldSample(measure, 0, overrides=overrides)


# ---------------------------------------------------------------------------
# Pivotality
# ---------------------------------------------------------------------------

class TestPivotalSites:
    def test_single_open_path(self, half):
        """
        Test that both sites of the only open path are pivotal.

        :return: None
        :rtype: None
        """
        report = pivotal_sites(half, _pinned(half, {(0, 2), (-1, 1)}), 2)
        assert report.event
        assert report.pivotal_sites == frozenset({(0, 2), (-1, 1)})

    def test_two_paths_leave_only_the_top(self, half):
        """
        Test that a second open path removes pivotality below the origin.

        :return: None
        :rtype: None
        """
        report = pivotal_sites(half, _pinned(half, {(0, 2), (-1, 1), (1, 1)}), 2)
        assert report.pivotal_sites == frozenset({(0, 2)})

    def test_event_off_has_no_pivotal_site(self, half):
        """
        Test that nothing is pivotal when A_n fails.

        :return: None
        :rtype: None
        """
        report = pivotal_sites(half, _pinned(half, {(-1, 1), (1, 1)}), 2)
        assert not report.event
        assert report.pivotal_sites == frozenset()

    def test_foreign_field(self, half):
        """
        Test that the field must come from the audited measure.

        :return: None
        :rtype: None
        """
        with pytest.raises(DomainError):
            pivotal_sites(half, FieldSample(oriented_site_percolation("1/3"), 0), 2)


# ---------------------------------------------------------------------------
# Pivotal-sum formula
# ---------------------------------------------------------------------------

class TestRusso:
    @pytest.mark.parametrize("p", ["3/10", "1/2", "7/10"])
    def test_exhaustive_identity(self, osp_base, p):
        """
        Test that the derivative of theta_2 equals the pivotal sum over p.

        :return: None
        :rtype: None
        """
        report = russo_check(osp_base, 2, p)
        assert report.passed
        assert report.lhs == report.rhs

    def test_values_at_one_half(self, osp_base):
        """
        Test theta_2 = 2p^2 - p^3, whose derivative at 1/2 is 5/4.

        :return: None
        :rtype: None
        """
        report = russo_check(osp_base, 2, "1/2")
        assert report.lhs == Fraction(5, 4)
        assert report.pivotal_sum == Fraction(5, 8)
        assert report.gap == 0

    def test_bad_arguments(self, osp_base):
        """
        Test that p = 0, n = 0 and unknown modes are refused.

        :return: None
        :rtype: None
        """
        with pytest.raises(DomainError):
            russo_check(osp_base, 2, 0)
        with pytest.raises(DomainError):
            russo_check(osp_base, 0, "1/2")
        with pytest.raises(DomainError):
            russo_check(osp_base, 2, "1/2", mode="sampling")

    @pytest.mark.slow
    def test_monte_carlo(self, osp_base):
        """
        Test the coupled central difference against the sampled pivotal sum.

        :return: None
        :rtype: None
        """
        report = russo_check(osp_base, 2, "1/2", mode="mc", replicas=40000, seed=4)
        assert report.mode == "mc"
        assert report.stderr > 0
        assert report.passed, f"gap {report.gap} with stderr {report.stderr}"


# ---------------------------------------------------------------------------
# Forward exploration
# ---------------------------------------------------------------------------

class TestExplore:
    @pytest.mark.parametrize("k", [1, 2])
    def test_decision_matches_the_event(self, line, half, k):
        """
        Test the decision against A_2 on all 512 cone assignments.

        :return: None
        :rtype: None
        """
        table = AtomTable.of(half)
        cone = ConeBox(line, 2)
        for digits in itertools.product(range(2), repeat=cone.size):
            sample = FieldSample(half, 0, overrides=dict(zip(cone.sites, digits)))
            decision, revealed = osss_explore(half, sample, 2, k)
            assert decision == bool(cone_event(table, line, 2, [list(digits)])[0])
            assert len(set(revealed)) == len(revealed)

    def test_dead_origin_stops_early(self, half):
        """
        Test that starting at k = 1 a dead origin reveals only itself.

        :return: None
        :rtype: None
        """
        decision, revealed = osss_explore(half, _pinned(half, {(-1, 1)}), 2, 1)
        assert not decision
        assert revealed == [(0, 2)]

    def test_k_out_of_range(self, half):
        """
        Test that k must lie in 1..n.

        :return: None
        :rtype: None
        """
        sample = FieldSample(half, 0)
        with pytest.raises(DomainError):
            osss_explore(half, sample, 2, 0)
        with pytest.raises(DomainError):
            osss_explore(half, sample, 2, 3)


# ---------------------------------------------------------------------------
# Variance inequality
# ---------------------------------------------------------------------------

class TestOSSS:
    def test_exhaustive_values(self, half):
        """
        Test the exact variance, revealments and pivotal probabilities at height 2.

        :return: None
        :rtype: None
        """
        report = osss_inequality_check(half, 2)
        assert report.theta == Fraction(3, 8)
        assert report.variance == Fraction(15, 64)
        assert report.delta[(0, 2)] == 1
        assert report.delta[(-1, 1)] == Fraction(3, 4)
        assert report.delta[(0, 0)] == 0
        assert report.pivotal[(0, 2)] == Fraction(3, 8)
        assert report.pivotal[(1, 1)] == Fraction(1, 8)
        assert report.pivotal[(0, 1)] == 0
        assert report.bound == Fraction(9, 8)
        assert report.passed

    def test_revealment_bound(self, half):
        """
        Test that every revealment stays below 2/n times the sum of theta_i.

        :return: None
        :rtype: None
        """
        report = osss_inequality_check(half, 2)
        assert report.revealment_bound == Fraction(3, 2)
        assert report.revealment_passed

    def test_monte_carlo(self, half):
        """
        Test that the sampled inequality holds within its tolerance.

        :return: None
        :rtype: None
        """
        report = osss_inequality_check(half, 2, mode="mc", replicas=3000, seed=5)
        assert report.tolerance > 0
        assert report.passed
        assert report.delta[(0, 2)] == 1.0


class TestRevealmentEstimate:
    def test_bound_and_top_site(self, half):
        """
        Test the sampled profile against 2/n times theta_0 + theta_1.

        :return: None
        :rtype: None
        """
        profile = revealment_estimate(half, 2, 2000, seed=1)
        assert profile.bound == 1.5
        assert profile.thetas == [1.0, 0.5]
        assert profile.delta[(0, 2)] == 1.0
        assert profile.passed
        assert profile.failing_sites() == []

    def test_replicas_must_be_positive(self, half):
        """
        Test that zero replicas are refused.

        :return: None
        :rtype: None
        """
        with pytest.raises(DomainError):
            revealment_estimate(half, 2, 0, seed=1)


class TestPivotalDifference:
    def test_oriented_percolation(self, half):
        """
        Test the one-site difference bound on every pair of height-2 assignments.

        :return: None
        :rtype: None
        """
        report = pivotal_difference_check(half, 2)
        assert report.passed
        assert report.pairs == 9 * 256
        assert report.examples
