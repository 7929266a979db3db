"""
Pivotality, the pivotal-sum formula for theta_n'(p), the forward-exploration
decision algorithm with its revealments, and the variance inequality that ties
them together. Exhaustive modes enumerate every field assignment on the cone
and check the statements as exact identities and inequalities.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from . import config
from .errors import CapacityError, DomainError
from .pca_engine import (
    P,
    AtomTable,
    Box,
    ConeBox,
    FieldSample,
    as_symbolic,
    assignment_block,
    atom_weights,
    check_enumeration,
    chunk_bounds,
    cone_assignments,
    cone_event,
    curve_weights,
    exhaustive_theta,
    theta_estimate,
    weighted_sum,
)
from .random_fields import LANE_REVEAL, replica_seeds, uniforms
from .rates import LinearCurve, RatesMeasure, Weight
from .upset_algebra import Neighborhood, Site, UpFamily

logger = logging.getLogger(__name__)

Number = Union[Fraction, float]

EXHAUSTIVE = "exhaustive"
MONTE_CARLO = "mc"

# Gap below which the exhaustive pivotal-sum identity is considered exact
RUSSO_TOLERANCE = 1e-10


def _check_horizon(n: int) -> None:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")


def _check_mode(mode: str, allowed: Sequence[str]) -> str:
    if mode not in allowed:
        raise DomainError(f"mode must be one of {', '.join(allowed)}, got {mode!r}")
    return mode


def _as_number(value) -> Number:
    """Plain Python number from a sympy, Fraction or float value."""
    if isinstance(value, (Fraction, float)):
        return value
    value = sp.sympify(value)
    if value.is_Rational:
        return Fraction(int(value.p), int(value.q))
    return float(value)


def _pivotal_batch(table: AtomTable, nbhd: Neighborhood, n: int,
                   assignments: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """A_n and the (B, |cone|) pivotal matrix for explicit assignments."""
    B, S = assignments.shape
    batch = np.repeat(assignments[:, None, :], S + 1, axis=1)
    sites = np.arange(S)
    batch[:, sites + 1, sites] = table.empty_index
    events = cone_event(table, nbhd, n, batch.reshape(B * (S + 1), S)).reshape(B, S + 1)
    return events[:, 0], events[:, :1] & ~events[:, 1:]


class _ConeEnumeration:
    """
    A_n on every assignment of the cone, indexed in base ``len(families)``
    with site 0 least significant. Replacing one site's atom is index
    arithmetic, so pivotality needs no re-evaluation.
    """

    def __init__(self, table: AtomTable, nbhd: Neighborhood, n: int,
                 workers: Optional[int] = None):
        self.table = table
        self.nbhd = nbhd
        self.n = n
        self.cone = ConeBox(nbhd, n)
        self.choices = len(table.families)
        self.sites = self.cone.size
        self.total = check_enumeration(self.choices, self.sites)
        self.powers = self.choices ** np.arange(self.sites, dtype=np.int64)
        chunk = config.batch_size(self.sites)
        self.bounds = chunk_bounds(self.total, chunk)

        def evaluate(bounds: Tuple[int, int]) -> np.ndarray:
            _, digits = assignment_block(*bounds, self.choices, self.sites)
            return cone_event(table, nbhd, n, digits)

        parts = config.run_parallel(evaluate, self.bounds, workers)
        self.events = np.concatenate(parts) if parts else np.zeros(0, dtype=bool)
        logger.debug(f"enumerated {self.total} assignments on {self.sites} cone sites, "
                     f"A_{n} occurs on {int(self.events.sum())}")

    def blocks(self):
        for bounds in self.bounds:
            yield assignment_block(*bounds, self.choices, self.sites)

    def replaced(self, index: np.ndarray, digits: np.ndarray, site: int, atom) -> np.ndarray:
        return index + (atom - digits[:, site]) * self.powers[site]

    def pivotal(self, index: np.ndarray, digits: np.ndarray) -> np.ndarray:
        occurs = self.events[index]
        columns = [occurs & ~self.events[self.replaced(index, digits, s, self.table.empty_index)]
                   for s in range(self.sites)]
        return np.stack(columns, axis=1) if columns else np.zeros((len(index), 0), dtype=bool)


# === Pivotality ===

@dataclass
class PivotalReport:
    field: FieldSample
    n: int
    event: bool
    pivotal_sites: FrozenSet[Site]


def _field_atoms(measure: RatesMeasure, sample: FieldSample, cone: ConeBox) -> np.ndarray:
    if sample.measure != measure:
        raise DomainError("the field was drawn from a different measure")
    return np.array([sample.atom_index(site) for site in cone.sites], dtype=np.int64)


def pivotal_sites(measure: RatesMeasure, sample: FieldSample, n: int) -> PivotalReport:
    """Sites of the cone whose replacement by the empty family turns A_n off."""
    _check_horizon(n)
    nbhd = measure.neighborhood
    cone = ConeBox(nbhd, n)
    atoms = _field_atoms(measure, sample, cone)
    occurs, pivotal = _pivotal_batch(sample.table, nbhd, n, atoms[None])
    sites = cone.sites
    chosen = frozenset(sites[i] for i in np.flatnonzero(pivotal[0]))
    return PivotalReport(sample, n, bool(occurs[0]), chosen)


# === Pivotal-sum formula ===

@dataclass
class RussoReport:
    n: int
    p: Number
    mode: str
    lhs: Number
    rhs: Number
    pivotal_sum: Number
    stderr: float = 0.0

    @property
    def gap(self) -> float:
        return abs(float(self.lhs) - float(self.rhs))

    @property
    def passed(self) -> bool:
        if self.mode == EXHAUSTIVE or self.stderr == 0:
            return self.gap < RUSSO_TOLERANCE
        return self.gap < 4 * self.stderr


def _russo_exhaustive(curve: LinearCurve, n: int, p: Weight,
                      workers: Optional[int]) -> RussoReport:
    base = curve.base
    table = AtomTable.of(base)
    enum = _ConeEnumeration(table, base.neighborhood, n, workers)
    poly_weights = curve_weights(table, curve)
    weights = atom_weights(table, curve.at(p))

    poly = sp.Integer(0)
    pivotal_sum = Fraction(0) if base.exact else 0.0
    for index, digits in enum.blocks():
        poly = poly + weighted_sum(digits, enum.events[index], poly_weights)
        counts = enum.pivotal(index, digits).sum(axis=1)
        pivotal_sum = pivotal_sum + weighted_sum(digits, counts, weights)
    poly = sp.expand(poly)
    lhs = _as_number(sp.diff(poly, P).subs(P, as_symbolic(p)))
    rhs = pivotal_sum / p
    logger.debug(f"theta_{n}(p) = {poly}; derivative at {p}: {lhs}, pivotal sum {pivotal_sum}")
    return RussoReport(n, p, EXHAUSTIVE, lhs, rhs, pivotal_sum)


def _russo_monte_carlo(curve: LinearCurve, n: int, p: Weight, replicas: int, seed: int,
                       workers: Optional[int]) -> RussoReport:
    h = float(config.get_setting('russo_mc_step', 0.02))
    x = float(p)
    if x - h < float(curve.p_lo) or x + h > float(curve.p_hi):
        raise DomainError(f"p = {p} is within {h} of the curve interval endpoint")
    nbhd = curve.neighborhood
    tables = {name: AtomTable.of(curve.at(value))
              for name, value in (("lo", x - h), ("mid", x), ("hi", x + h))}

    def run_chunk(bounds: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
        seeds = replica_seeds(seed, *bounds)
        hits = {}
        for name in ("lo", "hi"):
            table = tables[name]
            hits[name] = cone_event(table, nbhd, n, cone_assignments(table, nbhd, n, seeds))
        mid = tables["mid"]
        _, pivotal = _pivotal_batch(mid, nbhd, n, cone_assignments(mid, nbhd, n, seeds))
        difference = hits["hi"].astype(np.int64) - hits["lo"].astype(np.int64)
        return difference, pivotal.sum(axis=1)

    chunk = config.batch_size(ConeBox(nbhd, n).size)
    parts = config.run_parallel(run_chunk, chunk_bounds(replicas, chunk), workers)
    difference = np.concatenate([d for d, _ in parts]).astype(np.float64)
    counts = np.concatenate([c for _, c in parts]).astype(np.float64)

    lhs = float(difference.mean() / (2 * h))
    pivotal_sum = float(counts.mean())
    rhs = pivotal_sum / x
    se_lhs = float(difference.std(ddof=1) / math.sqrt(replicas) / (2 * h)) if replicas > 1 else 0.0
    se_rhs = float(counts.std(ddof=1) / math.sqrt(replicas) / x) if replicas > 1 else 0.0
    return RussoReport(n, x, MONTE_CARLO, lhs, rhs, pivotal_sum, math.hypot(se_lhs, se_rhs))


def russo_check(base: RatesMeasure, n: int, p, mode: str = EXHAUSTIVE,
                replicas: Optional[int] = None, seed: int = 0,
                workers: Optional[int] = None) -> RussoReport:
    """
    Compare theta_n'(p) along p * base + (1 - p) * delta_empty with
    (1/p) * sum of pivotal probabilities.

    The exhaustive side differentiates the exact polynomial; the Monte Carlo
    side takes a coupled central difference at p +- ``russo_mc_step``.
    """
    _check_horizon(n)
    _check_mode(mode, (EXHAUSTIVE, MONTE_CARLO))
    curve = LinearCurve(base)
    w = curve.check(p)
    if w <= 0:
        raise DomainError("the pivotal-sum identity needs p > 0")
    if mode == EXHAUSTIVE:
        report = _russo_exhaustive(curve, n, w, workers)
    else:
        replicas = int(replicas or config.get_setting('default_replicas', 10000))
        report = _russo_monte_carlo(curve, n, w, replicas, seed, workers)
    logger.info(f"russo n={n} p={float(w):g} ({mode}): lhs={float(report.lhs):.12g} "
                f"rhs={float(report.rhs):.12g} gap={report.gap:.3g}")
    return report


# === Forward exploration ===

def _forward_exploration(table: AtomTable, nbhd: Neighborhood, cone: ConeBox, k: int,
                         atoms: np.ndarray, ceiling: UpFamily) -> Tuple[bool, List[int]]:
    """
    Run the process started from all-ones at time k on the cone, layer by
    layer in lexicographic order. A site's family is revealed only when the
    ceiling family (every family the measure can draw) would set it to 1;
    otherwise it is known to be 0. Returns the origin value at time n and the
    revealed cone indices.
    """
    d, r, n = nbhd.d, nbhd.r, cone.n
    horizon = n - k
    layers: Dict[int, Tuple[Box, np.ndarray]] = {}
    revealed: List[int] = []

    def state(x: Tuple[int, ...], tau: int) -> bool:
        if tau <= 0:
            return True
        window, values = layers[tau]
        return bool(values[window.position(x)])

    for t in range(1, horizon + 1):
        window = Box.centered(d, r * (horizon - t))
        values = np.zeros(window.shape, dtype=bool)
        for point in window.coords():
            x = tuple(int(v) for v in point)
            ones = 0
            for bit, (*y, s) in enumerate(nbhd.sites):
                if state(tuple(a + b for a, b in zip(x, y)), t + s):
                    ones |= 1 << bit
            if not ceiling.contains(ones):
                continue
            index = cone.index_of(x + (t + k,))
            revealed.append(index)
            values[window.position(x)] = table.families[atoms[index]].contains(ones)
        layers[t] = (window, values)
    return state((0,) * d, horizon), revealed


def _revealed_mask(cone: ConeBox, alive: bool, revealed: List[int]) -> np.ndarray:
    mask = np.zeros(cone.size, dtype=bool)
    mask[revealed] = True
    if alive:
        mask[cone.row_offsets[1]:] = True
    return mask


def osss_explore(measure: RatesMeasure, sample: FieldSample, n: int,
                 k: int) -> Tuple[bool, List[Site]]:
    """
    Decide A_n for one field. If the exploration from time k already
    concludes 0 at the origin, A_n fails; otherwise every used cone site is
    revealed and A_n is evaluated.
    """
    _check_horizon(n)
    if not 1 <= k <= n:
        raise DomainError(f"k must lie in 1..{n}, got {k}")
    nbhd = measure.neighborhood
    cone = ConeBox(nbhd, n)
    atoms = _field_atoms(measure, sample, cone)
    table = sample.table
    alive, revealed = _forward_exploration(table, nbhd, cone, k, atoms, measure.maximal_family())
    sites = cone.sites
    order = [sites[i] for i in revealed]
    if not alive:
        return False, order
    seen = set(revealed)
    order.extend(sites[i] for i in range(cone.row_offsets[1], cone.size) if i not in seen)
    return bool(cone_event(table, nbhd, n, atoms[None])[0]), order


# === Revealments ===

@dataclass
class RevealmentProfile:
    n: int
    delta: Dict[Site, float]
    stderr: Dict[Site, float]
    bound: float
    replicas: int
    seed: int
    thetas: List[float] = field(default_factory=list)
    k_distribution: str = "uniform"

    def failing_sites(self) -> List[Site]:
        return [site for site, d in self.delta.items() if d > self.bound + 4 * self.stderr[site]]

    @property
    def passed(self) -> bool:
        return not self.failing_sites()


def _theta_sequence(measure: RatesMeasure, n: int, replicas: int, seed: int,
                    workers: Optional[int]) -> List[float]:
    """theta_0..theta_{n-1}, exact when enumerable."""
    thetas = [1.0]
    for i in range(1, n):
        try:
            thetas.append(float(exhaustive_theta(measure, i)))
        except CapacityError:
            thetas.append(theta_estimate(measure, i, replicas, seed, workers=workers)[0])
    return thetas


def revealment_estimate(measure: RatesMeasure, n: int, replicas: int, seed: int,
                        workers: Optional[int] = None) -> RevealmentProfile:
    """Frequency with which the exploration (k uniform on 1..n) reveals each cone site."""
    _check_horizon(n)
    if replicas <= 0:
        raise DomainError("replicas must be positive")
    nbhd = measure.neighborhood
    table = AtomTable.of(measure)
    cone = ConeBox(nbhd, n)
    ceiling = measure.maximal_family()

    def run_chunk(bounds: Tuple[int, int]) -> np.ndarray:
        seeds = replica_seeds(seed, *bounds)
        assignments = cone_assignments(table, nbhd, n, seeds)
        draws = uniforms(seeds, np.zeros((1, 1), dtype=np.int64), LANE_REVEAL)[:, 0]
        ks = np.minimum(1 + np.floor(draws * n).astype(np.int64), n)
        counts = np.zeros(cone.size, dtype=np.int64)
        for atoms, k in zip(assignments, ks):
            alive, revealed = _forward_exploration(table, nbhd, cone, int(k), atoms, ceiling)
            counts += _revealed_mask(cone, alive, revealed)
        return counts

    chunk = config.batch_size(cone.size)
    counts = sum(config.run_parallel(run_chunk, chunk_bounds(replicas, chunk), workers))
    thetas = _theta_sequence(measure, n, replicas, seed, workers)
    bound = 2 * sum(thetas) / n
    delta, stderr = {}, {}
    for site, count in zip(cone.sites, counts):
        d = int(count) / replicas
        delta[site] = d
        stderr[site] = math.sqrt(d * (1 - d) / replicas)
    profile = RevealmentProfile(n, delta, stderr, bound, replicas, seed, thetas)
    logger.info(f"revealment n={n}: max delta {max(delta.values()):.4f}, bound {bound:.4f}")
    return profile


# === Variance inequality ===

@dataclass
class OSSSReport:
    n: int
    mode: str
    theta: Number
    variance: Number
    bound: Number
    delta: Dict[Site, Number]
    pivotal: Dict[Site, Number]
    revealment_bound: Number
    tolerance: float = 0.0

    def _within(self, value: Number, limit: Number) -> bool:
        return value <= limit + self.tolerance if self.tolerance else value <= limit

    @property
    def passed(self) -> bool:
        return self._within(self.variance, self.bound)

    @property
    def revealment_passed(self) -> bool:
        return all(self._within(d, self.revealment_bound) for d in self.delta.values())


def _osss_exhaustive(measure: RatesMeasure, n: int, workers: Optional[int]) -> OSSSReport:
    table = AtomTable.of(measure)
    nbhd = measure.neighborhood
    enum = _ConeEnumeration(table, nbhd, n, workers)
    cone = enum.cone
    weights = atom_weights(table, measure)
    ceiling = measure.maximal_family()
    zero = Fraction(0) if measure.exact else 0.0

    theta = zero
    pivotal = [zero] * cone.size
    revealed = [zero] * cone.size
    for index, digits in enum.blocks():
        theta = theta + weighted_sum(digits, enum.events[index], weights)
        piv = enum.pivotal(index, digits)
        reveal_counts = np.zeros((len(index), cone.size), dtype=np.int64)
        for row, atoms in enumerate(digits):
            for k in range(1, n + 1):
                alive, sites = _forward_exploration(table, nbhd, cone, k, atoms, ceiling)
                reveal_counts[row] += _revealed_mask(cone, alive, sites)
        for s in range(cone.size):
            pivotal[s] = pivotal[s] + weighted_sum(digits, piv[:, s], weights)
            revealed[s] = revealed[s] + weighted_sum(digits, reveal_counts[:, s], weights)

    delta = [value / n for value in revealed]
    bound = 2 * sum((d * q for d, q in zip(delta, pivotal)), zero)
    thetas = [exhaustive_theta(measure, i) for i in range(n)]
    sites = cone.sites
    return OSSSReport(
        n=n, mode=EXHAUSTIVE, theta=theta, variance=theta * (1 - theta), bound=bound,
        delta=dict(zip(sites, delta)), pivotal=dict(zip(sites, pivotal)),
        revealment_bound=2 * sum(thetas, zero) / n)


def _osss_monte_carlo(measure: RatesMeasure, n: int, replicas: int, seed: int,
                      workers: Optional[int]) -> OSSSReport:
    nbhd = measure.neighborhood
    table = AtomTable.of(measure)
    cone = ConeBox(nbhd, n)

    def run_chunk(bounds: Tuple[int, int]) -> Tuple[int, np.ndarray]:
        seeds = replica_seeds(seed, *bounds)
        occurs, piv = _pivotal_batch(table, nbhd, n, cone_assignments(table, nbhd, n, seeds))
        return int(occurs.sum()), piv.sum(axis=0)

    chunk = config.batch_size(cone.size)
    parts = config.run_parallel(run_chunk, chunk_bounds(replicas, chunk), workers)
    theta = sum(hits for hits, _ in parts) / replicas
    pivotal = sum(counts for _, counts in parts) / replicas
    profile = revealment_estimate(measure, n, replicas, seed, workers)
    delta = np.array([profile.delta[site] for site in cone.sites])
    bound = float(2 * (delta * pivotal).sum())
    # binomial errors on theta and on every product term, 4 sigma
    se_theta = math.sqrt(theta * (1 - theta) / replicas)
    se_terms = np.sqrt(delta * (1 - delta) + pivotal * (1 - pivotal)) / math.sqrt(replicas)
    tolerance = 4 * (se_theta + float(2 * se_terms.sum()))
    sites = cone.sites
    return OSSSReport(
        n=n, mode=MONTE_CARLO, theta=theta, variance=theta * (1 - theta), bound=bound,
        delta=dict(zip(sites, delta.tolist())), pivotal=dict(zip(sites, pivotal.tolist())),
        revealment_bound=profile.bound, tolerance=tolerance)


def osss_inequality_check(measure: RatesMeasure, n: int, mode: str = EXHAUSTIVE,
                          replicas: Optional[int] = None, seed: int = 0,
                          workers: Optional[int] = None) -> OSSSReport:
    """
    Var(1_{A_n}) against 2 * sum of revealment times pivotal probability.

    In exhaustive mode every quantity is summed exactly over the cone
    assignments, with the exploration start k averaged over 1..n.
    """
    _check_horizon(n)
    _check_mode(mode, (EXHAUSTIVE, MONTE_CARLO))
    if mode == EXHAUSTIVE:
        report = _osss_exhaustive(measure, n, workers)
    else:
        replicas = int(replicas or config.get_setting('default_replicas', 10000))
        report = _osss_monte_carlo(measure, n, replicas, seed, workers)
    logger.info(f"variance inequality n={n} ({mode}): Var={float(report.variance):.6g} "
                f"bound={float(report.bound):.6g} passed={report.passed}")
    return report


# === One-site differences ===

@dataclass
class PairExample:
    site: Site
    atoms: Tuple[int, int]
    events: Tuple[bool, bool]
    pivotal: Tuple[bool, bool]


@dataclass
class PivotalDifferenceReport:
    n: int
    pairs: int = 0
    violations: int = 0
    monotone_violations: int = 0
    examples: List[PairExample] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.monotone_violations == 0


def pivotal_difference_check(measure: RatesMeasure, n: int, mode: str = EXHAUSTIVE,
                             workers: Optional[int] = None,
                             max_examples: int = 3) -> PivotalDifferenceReport:
    """
    Over all pairs of assignments differing at one site, check
    |1_A(eta) - 1_A(omega)| <= piv(eta) + piv(omega) and that enlarging a
    site's family never turns A_n off.
    """
    _check_horizon(n)
    _check_mode(mode, (EXHAUSTIVE,))
    table = AtomTable.of(measure)
    enum = _ConeEnumeration(table, measure.neighborhood, n, workers)
    families = table.families
    subset = np.array([[a.issubset(b) for b in families] for a in families], dtype=bool)
    sites = enum.cone.sites
    report = PivotalDifferenceReport(n)
    have_gap = have_equal = False

    for index, digits in enum.blocks():
        for s in range(enum.sites):
            cleared = enum.events[enum.replaced(index, digits, s, table.empty_index)]
            for atom in range(enum.choices):
                rows = np.flatnonzero(digits[:, s] < atom)
                if not len(rows):
                    continue
                lower = digits[rows, s]
                a1 = enum.events[index[rows]]
                a2 = enum.events[enum.replaced(index[rows], digits[rows], s, atom)]
                p1, p2 = a1 & ~cleared[rows], a2 & ~cleared[rows]
                gap = a1 != a2
                report.pairs += len(rows)
                report.violations += int((gap & ~(p1 | p2)).sum())
                report.monotone_violations += int(
                    (subset[lower, atom] & a1 & ~a2).sum() + (subset[atom, lower] & a2 & ~a1).sum())
                if len(report.examples) >= max_examples:
                    continue
                for flag, wanted in ((gap, not have_gap), (~gap & ~p1 & ~p2, not have_equal)):
                    hits = np.flatnonzero(flag)
                    if wanted and len(hits) and len(report.examples) < max_examples:
                        i = hits[0]
                        report.examples.append(PairExample(
                            sites[s], (int(lower[i]), atom), (bool(a1[i]), bool(a2[i])),
                            (bool(p1[i]), bool(p2[i]))))
                        have_gap = have_gap or bool(gap[i])
                        have_equal = have_equal or not bool(gap[i])
    logger.info(f"pivotal differences n={n}: {report.pairs} pairs, {report.violations} violations, "
                f"{report.monotone_violations} monotonicity violations")
    return report
