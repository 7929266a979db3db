#!/usr/bin/env python3
"""
Tests for the PCA engine: boxes, fields, synchronous updates, cone events,
exact oracles and Monte Carlo estimators.
"""
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from pcabp import config
from pcabp.errors import CapacityError, DomainError, MarginError
from pcabp.pca_engine import (
    P,
    AtomTable,
    Boundary,
    Box,
    ConeBox,
    Configuration,
    FieldSample,
    cone_event,
    enumerate_assignments,
    exhaustive_theta,
    gosp_path_oracle,
    sample_atoms,
    simulate,
    step,
    survival_from,
    theta_curve,
    theta_estimate,
    upper_invariant_density,
    weighted_sum,
)
from pcabp.random_fields import LANE_ATOM, LANE_EMPTY, replica_seeds, uniforms
from pcabp.rates import LinearCurve, dirac, make_measure, oriented_site_percolation, path_family, toom_majority
from pcabp.upset_algebra import Neighborhood, empty_family

OSP_X = [(-1, -1), (1, -1)]


@pytest.fixture
def line():
    return Neighborhood(1, 1, memoryless=True)


@pytest.fixture
def osp_base(line):
    return dirac(path_family(line, OSP_X))


@pytest.fixture
def restore_settings():
    yield
    config.reload_settings(config.CONFIG_FILE)


# ---------------------------------------------------------------------------
# Box
# ---------------------------------------------------------------------------

class TestBox:
    def test_centered_shape_and_coords(self):
        """
        Test the shape and C-order coordinates of a centred box.

        :return: None
        :rtype: None
        """
        box = Box.centered(2, 1)
        assert box.shape == (3, 3)
        assert box.size == 9
        coords = box.coords()
        assert coords.shape == (9, 2)
        assert tuple(coords[0]) == (-1, -1)
        assert tuple(coords[1]) == (-1, 0)

    def test_zero_dimensional_box(self):
        """
        Test that Z^0 has exactly one point.

        :return: None
        :rtype: None
        """
        box = Box.centered(0, 3)
        assert box.size == 1
        assert box.coords().shape == (1, 0)

    def test_bounding_and_containment(self):
        """
        Test bounding boxes, expansion and box containment.

        :return: None
        :rtype: None
        """
        box = Box.bounding([(0, 2), (3, -1)], 2)
        assert box == Box((0, -1), (3, 2))
        assert box.expand(1).contains_box(box)
        assert not box.contains_box(box.expand(1))

    def test_position_outside_raises(self):
        """
        Test that positions are only defined inside the box.

        :return: None
        :rtype: None
        """
        box = Box.centered(1, 2)
        assert box.position((2,)) == (4,)
        with pytest.raises(DomainError):
            box.position((3,))

    def test_empty_box_raises(self):
        """
        Test that inverted corners are rejected.

        :return: None
        :rtype: None
        """
        with pytest.raises(DomainError):
            Box((1,), (0,))


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

class TestFieldSample:
    def test_atom_table_puts_death_in_lane_zero(self, osp_base):
        """
        Test the kernel view of a death mixture.

        :return: None
        :rtype: None
        """
        table = AtomTable.of(oriented_site_percolation("1/4"))
        assert table.families[table.empty_index].is_empty
        assert table.empty_weight == 0.75
        assert table.absorbing
        u = np.array([[0.5, 0.8]])
        assert list(table.draw(u, u)[0]) == [table.empty_index, 1 - table.empty_index]

    def test_dirac_measure_gets_an_empty_slot(self, osp_base):
        """
        Test that the empty family is appended when not charged.

        :return: None
        :rtype: None
        """
        table = AtomTable.of(osp_base)
        assert len(table.families) == 2
        assert table.empty_weight == 0.0

    @pytest.mark.parametrize("p", ["0", "3/5", "1"])
    def test_sampling_matches_the_two_lane_draw(self, line, p):
        """
        Test that sampled atoms equal the lane-0 / lane-1 quantile draw.

        :return: None
        :rtype: None
        """
        mixture = make_measure(line, [(path_family(line, [(-1, -1)]), "1/4"),
                                      (path_family(line, [(1, -1)]), "1/4"),
                                      (path_family(line, OSP_X), "1/4"),
                                      (empty_family(line), "1/4")])
        seeds = replica_seeds(3, 0, 50)
        coords = Box.centered(1, 6).coords()
        points = np.column_stack([coords, np.full(len(coords), 4)])
        for mu in (mixture, oriented_site_percolation(p)):
            table = AtomTable.of(mu)
            expected = table.draw(uniforms(seeds, points, LANE_EMPTY), uniforms(seeds, points, LANE_ATOM))
            assert np.array_equal(sample_atoms(table, seeds, coords, 4), expected)

    def test_field_is_reproducible(self):
        """
        Test that the same seed draws the same families.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("1/2")
        a, b = FieldSample(mu, 7), FieldSample(mu, 7)
        sites = [(x, t) for x in range(-3, 4) for t in range(1, 4)]
        assert [a.atom_index(s) for s in sites] == [b.atom_index(s) for s in sites]

    def test_field_does_not_depend_on_window(self):
        """
        Test that overlapping windows see the same atoms.

        :return: None
        :rtype: None
        """
        sample = FieldSample(oriented_site_percolation("1/2"), 11)
        small = sample.row_atoms(Box.centered(1, 2), 3)
        large = sample.row_atoms(Box.centered(1, 5), 3)
        assert np.array_equal(small, large[3:8])
        assert sample.atom_index((0, 3)) == small[2]

    def test_overrides_pin_sites(self):
        """
        Test that overrides replace the drawn atom.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("1/2")
        sample = FieldSample(mu, 3, overrides={(0, 1): 0, (1, 1): 1})
        assert sample.atom_index((0, 1)) == 0
        assert sample.row_atoms(Box.centered(1, 1), 1)[2] == 1


# ---------------------------------------------------------------------------
# Updates
# ---------------------------------------------------------------------------

class TestSimulate:
    def test_single_one_spreads_to_both_sides(self, line, osp_base):
        """
        Test that without death a single one becomes ones at -1 and 1.

        :return: None
        :rtype: None
        """
        window = Box.centered(1, 5)
        initial = Configuration.from_sites(line, window, [(0, -1)])
        trajectory = simulate(osp_base, initial, 2, seed=0)
        assert trajectory.T == 2
        assert list(np.flatnonzero(trajectory.at(0))) == [5]
        assert list(np.flatnonzero(trajectory.at(1))) == [4, 6]
        assert list(np.flatnonzero(trajectory.at(2))) == [3, 5, 7]

    def test_all_zero_is_absorbing(self, line):
        """
        Test that an absorbing measure keeps the all-zero state.

        :return: None
        :rtype: None
        """
        window = Box.centered(1, 4)
        initial = Configuration.filled(line, window, False)
        trajectory = simulate(oriented_site_percolation("9/10"), initial, 5, seed=1)
        assert not trajectory.states.any()

    def test_boundaries(self, line, osp_base):
        """
        Test that all-one and periodic boundaries feed the edge sites.

        :return: None
        :rtype: None
        """
        window = Box((0,), (3,))
        ones = simulate(osp_base, Configuration.filled(line, window, False, Boundary.ALL_ONE), 1, 0)
        assert list(ones.at(1)) == [True, False, False, True]
        periodic = Configuration.from_sites(line, window, [(0, -1)], Boundary.PERIODIC)
        wrapped = simulate(osp_base, periodic, 1, 0)
        assert list(wrapped.at(1)) == [False, True, False, True]

    def test_monotone_in_p(self, line):
        """
        Test that shared uniforms order trajectories by the survival parameter.

        :return: None
        :rtype: None
        """
        window = Box.centered(1, 10)
        initial = Configuration.filled(line, window, True)
        for seed in range(100):
            low, mid, high = (simulate(oriented_site_percolation(p), initial, 10, seed).states
                              for p in ("3/10", "1/2", "7/10"))
            assert not (low & ~mid).any()
            assert not (mid & ~high).any()

    def test_memory_slab(self):
        """
        Test a rule reading two rows back.

        :return: None
        :rtype: None
        """
        nbhd = Neighborhood(1, 2)
        rule = dirac(path_family(nbhd, [(0, -2)]))
        window = Box.centered(1, 2)
        initial = Configuration.from_sites(nbhd, window, [(0, -2)])
        trajectory = simulate(rule, initial, 4, seed=0)
        centre = [bool(trajectory.at(t)[2]) for t in range(5)]
        assert centre == [False, True, False, True, False]

    def test_invalid_arguments(self, line, osp_base):
        """
        Test the argument checks of simulate and Configuration.

        :return: None
        :rtype: None
        """
        window = Box.centered(1, 2)
        initial = Configuration.filled(line, window, True)
        with pytest.raises(DomainError):
            simulate(osp_base, initial, 0, seed=0)
        with pytest.raises(DomainError):
            Configuration(window, np.ones((1, 4), dtype=bool))
        with pytest.raises(DomainError):
            Configuration.from_sites(line, window, [(0, -2)])

    def test_step_with_explicit_families(self, line):
        """
        Test one update against a hand-written field row.

        :return: None
        :rtype: None
        """
        window = Box.centered(1, 1)
        osp = path_family(line, OSP_X)
        prev = Configuration.from_sites(line, window, [(-1, -1)])
        row = step(prev, {(-1,): osp, (0,): osp, (1,): empty_family(line)})
        assert list(row) == [False, True, False]
        with pytest.raises(DomainError):
            step(prev, {(0,): osp})


# ---------------------------------------------------------------------------
# Cone events and exact oracles
# ---------------------------------------------------------------------------

class TestCone:
    def test_cone_box_layout(self, line):
        """
        Test the cone of height 2: 5 + 3 + 1 sites.

        :return: None
        :rtype: None
        """
        cone = ConeBox(line, 2)
        assert cone.size == 9
        assert cone.row_offsets == [0, 5, 8, 9]
        assert cone.sites[-1] == (0, 2)
        assert cone.index_of((1, 1)) == 7
        with pytest.raises(DomainError):
            cone.index_of((2, 1))

    def test_cone_event_on_explicit_fields(self, line, osp_base):
        """
        Test A_2 on the all-open field and on a field closed at the apex.

        :return: None
        :rtype: None
        """
        table = AtomTable.of(osp_base)
        alive = 1 - table.empty_index
        open_field = np.full((1, 9), alive)
        closed_apex = open_field.copy()
        closed_apex[0, 8] = table.empty_index
        events = cone_event(table, line, 2, np.vstack([open_field, closed_apex]))
        assert list(events) == [True, False]

    def test_enumeration_cap(self):
        """
        Test that oversized enumerations raise CapacityError.

        :return: None
        :rtype: None
        """
        with pytest.raises(CapacityError):
            next(enumerate_assignments(2, 30))

    def test_enumeration_covers_everything(self):
        """
        Test that the blocks hold every assignment once.

        :return: None
        :rtype: None
        """
        rows = np.vstack(list(enumerate_assignments(3, 4)))
        assert rows.shape == (81, 4)
        assert len({tuple(r) for r in rows}) == 81

    def test_weighted_sum(self):
        """
        Test the grouped weighted sum on a tiny table.

        :return: None
        :rtype: None
        """
        assignments = np.array([[0, 0], [0, 1], [1, 1]])
        half = Fraction(1, 2)
        assert weighted_sum(assignments, np.array([1, 1, 1]), [half, half]) == Fraction(3, 4)
        assert weighted_sum(assignments, np.array([0, 2, 0]), [Fraction(1, 3), Fraction(2, 3)]) == Fraction(4, 9)
        assert weighted_sum(assignments, np.zeros(3), [half, half]) == 0


class TestExhaustiveTheta:
    def test_oriented_percolation_height_two(self):
        """
        Test theta_2 = p^2 (2 - p) at p = 1/2.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("1/2")
        assert exhaustive_theta(mu, 0) == 1
        assert exhaustive_theta(mu, 1) == Fraction(1, 2)
        assert exhaustive_theta(mu, 2) == Fraction(3, 8)

    def test_polynomial_along_the_curve(self, osp_base):
        """
        Test the exact polynomial theta_2(p).

        :return: None
        :rtype: None
        """
        poly = exhaustive_theta(LinearCurve(osp_base), 2)
        assert sp.expand(poly - P ** 2 * (2 - P)) == 0

    def test_toom_without_death_survives(self):
        """
        Test that the majority rule keeps all-ones when nothing dies.

        :return: None
        :rtype: None
        """
        assert exhaustive_theta(toom_majority(1), 1) == 1


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

class TestMonteCarlo:
    def test_theta_estimate_matches_exact_value(self):
        """
        Test theta_2 of oriented percolation at p = 1/2 within five standard errors.

        :return: None
        :rtype: None
        """
        estimate, stderr = theta_estimate(oriented_site_percolation("1/2"), 2, 20000, seed=5)
        assert abs(estimate - 0.375) < 5 * stderr

    def test_theta_estimate_is_reproducible(self):
        """
        Test that a seed fixes the estimate regardless of the pool size.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("3/5")
        assert theta_estimate(mu, 4, 5000, seed=9, workers=1) == \
            theta_estimate(mu, 4, 5000, seed=9, workers=4)

    def test_narrow_window_is_an_upper_bound(self):
        """
        Test that a window narrower than the cone never lowers theta for shared seeds.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("1/2")
        exact, _ = theta_estimate(mu, 6, 3000, seed=2)
        narrow, _ = theta_estimate(mu, 6, 3000, seed=2, width=3)
        assert narrow >= exact

    def test_theta_curve(self):
        """
        Test that a single run per replica gives every theta_t.

        :return: None
        :rtype: None
        """
        curve = theta_curve(oriented_site_percolation("1/2"), 3, 20000, seed=4)
        assert len(curve.points) == 4
        assert curve.points[0].estimate == 1.0
        point = curve.points[2]
        assert abs(point.estimate - 0.375) < 5 * point.stderr

    def test_theta_curve_agrees_with_theta_estimate(self):
        """
        Test that every point of one cone run equals the estimate at that horizon.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("3/5")
        curve = theta_curve(mu, 6, 2000, seed=11)
        for n in range(1, 7):
            assert curve.points[n].estimate == theta_estimate(mu, n, 2000, seed=11)[0]

    def test_theta_curve_narrow_window_is_an_upper_bound(self):
        """
        Test that a window narrower than the cone bounds every theta_t from above.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("1/2")
        exact = theta_curve(mu, 6, 3000, seed=2)
        narrow = theta_curve(mu, 6, 3000, seed=2, width=4)
        assert all(a.estimate <= b.estimate for a, b in zip(exact.points, narrow.points))
        assert narrow.points[6].estimate > exact.points[6].estimate

    def test_width_covering_the_cone_is_exact(self):
        """
        Test that width 2*r*n already runs on the cone.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("3/5")
        assert theta_estimate(mu, 5, 2000, seed=3, width=10) == theta_estimate(mu, 5, 2000, seed=3)

    def test_cell_budget_does_not_change_results(self, tmp_path, restore_settings):
        """
        Test that smaller batches give the same curve for the same seed.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("3/5")
        before = theta_curve(mu, 8, 500, seed=6).estimates
        user = tmp_path / "tight.yaml"
        user.write_text("settings:\n  cell_budget: 40\n")
        config.reload_settings(str(user))
        assert config.batch_size(17) == 2
        assert np.array_equal(theta_curve(mu, 8, 500, seed=6).estimates, before)

    @pytest.mark.slow
    def test_theta_two_with_many_replicas(self):
        """
        Test theta_2 of oriented percolation at p = 1/2 with 10^5 replicas within four standard errors.

        :return: None
        :rtype: None
        """
        estimate, stderr = theta_estimate(oriented_site_percolation("1/2"), 2, 100000, seed=13)
        assert abs(estimate - 0.375) < 4 * stderr

    def test_argument_checks(self):
        """
        Test the replica and horizon checks.

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("1/2")
        with pytest.raises(DomainError):
            theta_estimate(mu, 2, 0, seed=0)
        with pytest.raises(DomainError):
            theta_estimate(mu, 0, 10, seed=0)
        with pytest.raises(DomainError):
            theta_curve(mu, 0, 10, seed=0)

    def test_survival_without_death(self, osp_base):
        """
        Test that a single one never dies out when nothing dies.

        :return: None
        :rtype: None
        """
        curve = survival_from(osp_base, [(0, -1)], 4, 50, seed=0)
        assert all(pt.estimate == 1.0 for pt in curve.points)

    def test_survival_with_certain_death(self):
        """
        Test that everything dies in one step at p = 0.

        :return: None
        :rtype: None
        """
        curve = survival_from(oriented_site_percolation(0), [(0, -1)], 3, 20, seed=0)
        assert [pt.estimate for pt in curve.points] == [1.0, 0.0, 0.0, 0.0]

    def test_survival_margin(self, osp_base):
        """
        Test that a window without the r*T margin is refused.

        :return: None
        :rtype: None
        """
        with pytest.raises(MarginError):
            survival_from(osp_base, [(0, -1)], 4, 10, seed=0, window=Box.centered(1, 2))

    def test_upper_invariant_density_without_death(self, osp_base):
        """
        Test that all-ones is invariant when nothing dies.

        :return: None
        :rtype: None
        """
        density, stderr = upper_invariant_density(osp_base, 16, 5, 4, seed=0)
        assert density == 1.0
        assert stderr == 0.0


# ---------------------------------------------------------------------------
# Path oracle
# ---------------------------------------------------------------------------

class TestPathOracle:
    def test_open_path(self):
        """
        Test that (2, 2) reaches the origin through (1, 1).

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("1/2")
        table = AtomTable.of(mu)
        alive = 1 - table.empty_index
        sample = FieldSample(mu, 0, overrides={(2, 2): alive, (1, 1): alive})
        assert gosp_path_oracle(OSP_X, sample, (2, 2))

    def test_blocked_path(self):
        """
        Test that closing (1, 1) cuts the only path from (2, 2).

        :return: None
        :rtype: None
        """
        mu = oriented_site_percolation("1/2")
        table = AtomTable.of(mu)
        sample = FieldSample(mu, 0, overrides={(2, 2): 1 - table.empty_index,
                                               (1, 1): table.empty_index})
        assert not gosp_path_oracle(OSP_X, sample, (2, 2))

    def test_parity(self):
        """
        Test that (1, 2) can never reach the origin.

        :return: None
        :rtype: None
        """
        assert not gosp_path_oracle(OSP_X, FieldSample(oriented_site_percolation(1), 0), (1, 2))

    def test_requires_gosp_measure(self):
        """
        Test that other measures are refused.

        :return: None
        :rtype: None
        """
        sample = FieldSample(oriented_site_percolation("1/2"), 0)
        with pytest.raises(DomainError):
            gosp_path_oracle([(-1, -1)], sample, (0, 1))
