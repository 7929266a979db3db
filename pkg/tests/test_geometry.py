#!/usr/bin/env python3
"""
Tests for stable and unstable directions, classification, half-space
certificates and eroders.
"""
from fractions import Fraction

import numpy as np
import pytest

from pcabp.bp_engine import UpdateFamily, east_update_family
from pcabp.correspondence import ca_to_bp
from pcabp.errors import DomainError, MarginError, UnknownClassificationError
from pcabp.geometry import (
    Verdict,
    classify,
    classify_2d,
    half_space_normal,
    is_eroder_geometric_1d,
    is_eroder_simulation,
    seed_growth,
    _zero_pattern,
    stable_interior_check,
    stable_set_2d,
    unstable_set_2d,
)
from pcabp.pca_engine import Box
from pcabp.rates import identity_ca, path_family, toom_majority_family
from pcabp.upset_algebra import Neighborhood, make_upfamily

OSP_DUAL = UpdateFamily.of(2, [[(-1, -1), (1, -1)]])
DOWN = UpdateFamily.of(2, [[(0, -1)]])
TWO_NEIGHBOUR = UpdateFamily.of(2, [[a, b] for i, a in enumerate([(1, 0), (-1, 0), (0, 1), (0, -1)])
                                    for b in [(1, 0), (-1, 0), (0, 1), (0, -1)][i + 1:]])


@pytest.fixture
def line():
    return Neighborhood(1, 1, memoryless=True)


# ---------------------------------------------------------------------------
# Unstable set
# ---------------------------------------------------------------------------

class TestUnstableSet:
    def test_oriented_percolation_dual(self):
        """
        Test that the unstable set is the open quarter around (0, 1).

        :return: None
        :rtype: None
        """
        arcs = unstable_set_2d(OSP_DUAL)
        assert arcs.contains((0, 1))
        assert arcs.contains((1, 3))
        assert not arcs.contains((1, 1))
        assert not arcs.contains((1, 0))
        assert not arcs.contains((0, -1))
        assert not arcs.contains_open_semicircle()

    def test_single_site_is_a_semicircle(self):
        """
        Test that {(0, -1)} makes the open upper half unstable.

        :return: None
        :rtype: None
        """
        arcs = unstable_set_2d(DOWN)
        assert arcs.contains((1, 1))
        assert arcs.contains((-5, 1))
        assert not arcs.contains((1, 0))
        assert arcs.contains_open_semicircle()

    def test_empty_family_is_stable(self):
        """
        Test that no update sets means no unstable direction.

        :return: None
        :rtype: None
        """
        assert unstable_set_2d(UpdateFamily(2, ())).is_empty

    def test_empty_set_is_unstable_everywhere(self):
        """
        Test that the empty update set makes every direction unstable.

        :return: None
        :rtype: None
        """
        arcs = unstable_set_2d(UpdateFamily.of(2, [[]]))
        assert arcs.full
        assert str(arcs) == "full circle"

    def test_wrong_dimension(self):
        """
        Test that planar geometry needs D = 2.

        :return: None
        :rtype: None
        """
        with pytest.raises(DomainError):
            unstable_set_2d(east_update_family())


class TestStableSet:
    def test_oriented_percolation_dual(self):
        """
        Test that the stable set is the closed three-quarter arc below (0, 1).

        :return: None
        :rtype: None
        """
        arcs = stable_set_2d(OSP_DUAL)
        assert arcs.closed
        for u in [(1, 1), (-1, 1), (1, 0), (0, -1), (-3, 1)]:
            assert arcs.contains(u)
        assert not arcs.contains((0, 1))
        assert not arcs.contains((1, 3))
        assert str(arcs) == "[(-1, 1) -> (1, 1)]"

    def test_complements_the_unstable_set(self):
        """
        Test that every direction with small entries is in exactly one of the two sets.

        :return: None
        :rtype: None
        """
        for X in (OSP_DUAL, DOWN, TWO_NEIGHBOUR):
            unstable, stable = unstable_set_2d(X), stable_set_2d(X)
            for a in range(-3, 4):
                for b in range(-3, 4):
                    if (a, b) != (0, 0):
                        assert unstable.contains((a, b)) != stable.contains((a, b)), (X, (a, b))

    def test_isolated_stable_directions(self):
        """
        Test that opposite single sites leave only the two horizontal directions stable.

        :return: None
        :rtype: None
        """
        arcs = stable_set_2d(UpdateFamily.of(2, [[(0, -1)], [(0, 1)]]))
        assert arcs.contains((1, 0))
        assert arcs.contains((-1, 0))
        assert not arcs.contains((1, 1))
        assert not arcs.contains((-2, -1))
        assert not arcs.contains_open_semicircle()
        assert "{(1, 0)}" in str(arcs)

    def test_extremes(self):
        """
        Test the empty family (all stable) and the empty update set (nothing stable).

        :return: None
        :rtype: None
        """
        assert stable_set_2d(UpdateFamily(2, ())).full
        assert stable_set_2d(UpdateFamily.of(2, [[]])).is_empty
        assert stable_set_2d(DOWN).contains_open_semicircle()


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

class TestClassify:
    def test_oriented_percolation_dual_is_subcritical(self):
        """
        Test that the dual of oriented percolation is subcritical.

        :return: None
        :rtype: None
        """
        result = classify_2d(OSP_DUAL)
        assert result.verdict is Verdict.SUBCRITICAL
        assert str(result) == "Subcritical"

    def test_down_is_supercritical(self):
        """
        Test that a single site below the origin is supercritical.

        :return: None
        :rtype: None
        """
        assert classify_2d(DOWN).verdict is Verdict.SUPERCRITICAL

    def test_north_east_is_subcritical(self):
        """
        Test that the north-east model, unstable only on an open quarter, is subcritical.

        :return: None
        :rtype: None
        """
        assert classify(UpdateFamily.of(2, [[(0, 1), (1, 0)]])).verdict is Verdict.SUBCRITICAL

    def test_two_neighbour_is_unknown(self):
        """
        Test that the critical two-neighbour model is neither class.

        :return: None
        :rtype: None
        """
        with pytest.raises(UnknownClassificationError):
            classify_2d(TWO_NEIGHBOUR)

    def test_one_dimensional(self):
        """
        Test the exact one-dimensional rule.

        :return: None
        :rtype: None
        """
        assert classify(east_update_family()).verdict is Verdict.SUPERCRITICAL
        both = UpdateFamily.of(1, [[(-1,), (1,)]])
        assert classify(both).verdict is Verdict.SUBCRITICAL

    def test_higher_dimensions_are_heuristic(self):
        """
        Test that D = 3 is labelled heuristic.

        :return: None
        :rtype: None
        """
        family = toom_majority_family()
        result = classify(ca_to_bp(family.neighborhood, family), steps=6)
        assert result.heuristic
        assert str(result).startswith("Heuristic(")

    def test_seed_growth(self):
        """
        Test the growth counts from a filled ball.

        :return: None
        :rtype: None
        """
        counts = seed_growth(east_update_family(), steps=3, seed_radius=1)
        assert counts == [3, 4, 5, 6]


# ---------------------------------------------------------------------------
# Half-space certificates
# ---------------------------------------------------------------------------

class TestHalfSpace:
    def test_normal_exists(self):
        """
        Test a normal with <x, u> <= -1 on both sites of the dual.

        :return: None
        :rtype: None
        """
        certificate = half_space_normal(OSP_DUAL)
        assert certificate.contained
        assert certificate.verify()

    def test_zero_combination(self):
        """
        Test that opposite sites give a convex combination equal to zero.

        :return: None
        :rtype: None
        """
        certificate = half_space_normal(TWO_NEIGHBOUR)
        assert not certificate.contained
        assert certificate.verify()
        assert sum(certificate.witness.values()) == 1

    def test_one_dimensional(self):
        """
        Test the half-line and the impossible case in one dimension.

        :return: None
        :rtype: None
        """
        assert half_space_normal(east_update_family()).normal == (Fraction(1),)
        assert not half_space_normal(UpdateFamily.of(1, [[(-1,), (2,)]])).contained

    def test_three_dimensional(self):
        """
        Test the Toom dual, which lies below the plane t = 0.

        :return: None
        :rtype: None
        """
        family = toom_majority_family()
        certificate = half_space_normal(ca_to_bp(family.neighborhood, family))
        assert certificate.contained
        assert certificate.verify()


class TestStableInterior:
    def test_oriented_percolation_dual(self):
        """
        Test that the stable set is regular and has opposite interior directions.

        :return: None
        :rtype: None
        """
        report = stable_interior_check(OSP_DUAL)
        assert report.closure_of_interior
        assert not report.unstable_semicircle
        u, v = report.opposite_pair
        assert v == (-u[0], -u[1])
        assert not unstable_set_2d(OSP_DUAL).contains(u)
        assert not unstable_set_2d(OSP_DUAL).contains(v)

    def test_supercritical_has_no_pair(self):
        """
        Test that an unstable semicircle leaves no opposite pair.

        :return: None
        :rtype: None
        """
        report = stable_interior_check(DOWN)
        assert report.unstable_semicircle
        assert report.opposite_pair is None


# ---------------------------------------------------------------------------
# Eroders
# ---------------------------------------------------------------------------

class TestEroders:
    def test_toom_erases_a_lone_zero(self):
        """
        Test that the majority rule removes a single zero in one step.

        :return: None
        :rtype: None
        """
        family = toom_majority_family()
        [verdict] = is_eroder_simulation(family.neighborhood, family, 5, [[(0, 0)]])
        assert verdict.erased
        assert verdict.erased_at == 1

    def test_oriented_percolation_erases_an_interval(self, line):
        """
        Test that six consecutive zeros vanish after three steps.

        :return: None
        :rtype: None
        """
        U = path_family(line, [(-1, -1), (1, -1)])
        [verdict] = is_eroder_simulation(line, U, 10, [[(x,) for x in range(6)]])
        assert verdict.status == "erased"
        assert verdict.erased_at == 3

    def test_identity_keeps_its_zero(self):
        """
        Test that the identity rule is a proven non-eroder.

        :return: None
        :rtype: None
        """
        U = identity_ca(1)
        [verdict] = is_eroder_simulation(U.neighborhood, U, 10, [[(0,)]])
        assert verdict.status == "persistent"
        assert verdict.period == 1
        assert verdict.shift == (0,)

    def test_shifting_zero_is_persistent(self, line):
        """
        Test that a translated repeat counts as persistence.

        :return: None
        :rtype: None
        """
        U = path_family(line, [(-1, -1)])
        [verdict] = is_eroder_simulation(line, U, 10, [[(0,)]])
        assert verdict.status == "persistent"
        assert verdict.shift == (1,)

    def test_zero_pattern_keeps_memory_rows_apart(self):
        """
        Test that zeros in different slab rows give different pattern keys.

        :return: None
        :rtype: None
        """
        older = np.ones((2, 5), dtype=bool)
        older[0, 2] = False
        newer = np.ones((2, 5), dtype=bool)
        newer[1, 2] = False
        origin_a, key_a = _zero_pattern(older)
        origin_b, key_b = _zero_pattern(newer)
        assert origin_a == origin_b == (2,)
        assert key_a != key_b

    def test_zero_pattern_is_translation_invariant(self):
        """
        Test that a shifted island keeps its key and moves its offset.

        :return: None
        :rtype: None
        """
        slab = np.ones((2, 8), dtype=bool)
        slab[0, 1] = slab[1, 2] = False
        shifted = np.roll(slab, 3, axis=1)
        origin_a, key_a = _zero_pattern(slab)
        origin_b, key_b = _zero_pattern(shifted)
        assert key_a == key_b
        assert (origin_a, origin_b) == ((1,), (4,))
        assert _zero_pattern(np.ones((2, 4), dtype=bool)) == (None, b"")

    def test_window_margin(self, line):
        """
        Test that an explicit window must hold the island with margin r*T.

        :return: None
        :rtype: None
        """
        U = identity_ca(1)
        with pytest.raises(MarginError):
            is_eroder_simulation(line, U, 10, [[(0,)]], window=Box.centered(1, 3))

    @pytest.mark.parametrize("r, generators, eroder", [
        (1, [[(-1, -1)]], False),
        (1, [[(0, -1)]], False),
        (1, [[(1, -1)]], False),
        (1, [[(-1, -1), (0, -1)], [(-1, -1), (1, -1)], [(0, -1), (1, -1)]], False),
        (1, [[(-1, -1)], [(1, -1)]], True),
        (1, [[(-1, -1)], [(0, -1)]], True),
        (1, [[(0, -1)], [(1, -1)]], True),
        (1, [[(-1, -1)], [(0, -1)], [(1, -1)]], True),
        (1, [[(-1, -1)], [(0, -1), (1, -1)]], True),
        (2, [[(-2, -1)], [(2, -1)]], True),
    ])
    def test_zoo_agrees_with_simulation(self, r, generators, eroder):
        """
        Test that the planar criterion matches simulated islands of width 1 to 6.

        :return: None
        :rtype: None
        """
        nbhd = Neighborhood(1, r, memoryless=True)
        U = make_upfamily(nbhd, generators)
        islands = [[(x,) for x in range(width)] for width in range(1, 7)]
        verdicts = is_eroder_simulation(nbhd, U, 50, islands)
        assert is_eroder_geometric_1d(nbhd, U) is eroder
        assert all(v.status != "undecided" for v in verdicts)
        assert all(v.erased for v in verdicts) is eroder

    def test_geometric_criterion(self, line):
        """
        Test the planar criterion against the simulations above.

        :return: None
        :rtype: None
        """
        assert is_eroder_geometric_1d(line, path_family(line, [(-1, -1), (1, -1)]))
        assert not is_eroder_geometric_1d(line, identity_ca(1))
        with pytest.raises(DomainError):
            family = toom_majority_family()
            is_eroder_geometric_1d(family.neighborhood, family)
