"""
Maps between deterministic attractive CA and bootstrap percolation one
dimension up, their random extension (PCA <-> inhomogeneous BP), and a
cell-by-cell check that both engines agree on a shared field.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .bp_engine import (
    BPState,
    Face,
    FamilyAssignment,
    FamilyMeasure,
    UpdateFamily,
    closure,
    make_family_measure,
    run_bp,
)
from .errors import CapacityError, DomainError, NotHalfSpaceError
from .pca_engine import (
    AtomTable,
    Boundary,
    Box,
    ConeBox,
    Configuration,
    FieldSample,
    enumerate_assignments,
    simulate,
)
from .random_fields import mix_seed
from .rates import Probability, RatesMeasure, dirac, with_death
from .upset_algebra import Neighborhood, UpFamily, complement_dual, make_upfamily

logger = logging.getLogger(__name__)

Matrix = Tuple[Tuple[int, ...], ...]


def ca_to_bp(nbhd: Neighborhood, U: UpFamily) -> UpdateFamily:
    """Minimal sets R \\ D over the non-members D of U, read as vectors of Z^{d+1}."""
    if U.neighborhood != nbhd:
        raise DomainError(f"up-family over {U.neighborhood}, expected {nbhd}")
    sets = [nbhd.sites_of(m) for m in complement_dual(U)]
    return UpdateFamily.of(nbhd.d + 1, sets)


def _infer_neighborhood(X: UpdateFamily) -> Neighborhood:
    sites = X.sites
    for site in sites:
        if site[-1] >= 0:
            raise NotHalfSpaceError(
                f"site {site} is not in the lower half-space Z^d x {{-1, -2, ...}}", site=site)
    if not sites:
        return Neighborhood(X.dimension - 1, 1, memoryless=True)
    spatial = max((abs(v) for s in sites for v in s[:-1]), default=0)
    depth = max(-s[-1] for s in sites)
    return Neighborhood(X.dimension - 1, max(1, spatial, depth), memoryless=depth == 1)


def bp_to_ca(X: UpdateFamily, nbhd: Optional[Neighborhood] = None) -> Tuple[Neighborhood, UpFamily]:
    """
    Inverse of ``ca_to_bp``. The neighbourhood is the smallest one holding every
    site unless ``nbhd`` is given.
    """
    if nbhd is None:
        nbhd = _infer_neighborhood(X)
    elif nbhd.d + 1 != X.dimension:
        raise DomainError(f"{nbhd} does not match a {X.dimension}-dimensional family")
    for site in X.sites:
        if not nbhd.contains_site(site):
            raise NotHalfSpaceError(f"site {site} lies outside {nbhd}", site=site)
    generators = [nbhd.site_set(s) for s in X.sets]
    family = make_upfamily(nbhd, generators)
    return nbhd, UpFamily(nbhd, tuple(complement_dual(family)))


def bp_as_ca(X: UpdateFamily) -> Tuple[Neighborhood, UpFamily]:
    """BP with self-retention as a memoryless deterministic CA on Z^D."""
    nbhd = Neighborhood(X.dimension, max(1, X.range), memoryless=True)
    generators = [[x + (-1,) for x in s] for s in X.sets]
    generators.append([(0,) * X.dimension + (-1,)])
    return nbhd, make_upfamily(nbhd, generators)


@dataclass(frozen=True)
class CorrespondencePair:
    """A CA rule with death probability 1 - p and its dual BP family."""
    nbhd: Neighborhood
    U: UpFamily
    p: Probability
    X: UpdateFamily

    @property
    def measure(self) -> RatesMeasure:
        return with_death(dirac(self.U), self.p)


def make_pair(nbhd: Neighborhood, U: UpFamily, p: Probability = 1) -> CorrespondencePair:
    return CorrespondencePair(nbhd, U, p, ca_to_bp(nbhd, U))


@dataclass(frozen=True)
class InhomPair:
    pca_side: RatesMeasure
    bp_side: FamilyMeasure


def pca_to_inhom_bp(mu: RatesMeasure) -> FamilyMeasure:
    """Atom-by-atom image of mu under the dual map, weights preserved."""
    return make_family_measure((ca_to_bp(mu.neighborhood, f), w) for f, w in mu.atoms)


def inhom_pair(mu: RatesMeasure) -> InhomPair:
    return InhomPair(mu, pca_to_inhom_bp(mu))


# === Trajectory equivalence ===

@dataclass
class Mismatch:
    sample: int
    site: Tuple[int, ...]
    kind: str
    pca_value: bool
    bp_value: bool


@dataclass
class EquivalenceReport:
    samples: int = 0
    cells: int = 0
    bound_cells: int = 0
    mismatches: List[Mismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    @property
    def first_mismatch(self) -> Optional[Mismatch]:
        return self.mismatches[0] if self.mismatches else None

    def summary(self) -> str:
        if self.passed:
            return (f"equivalence holds: {self.samples} fields, {self.cells} closure cells, "
                    f"{self.bound_cells} one-sided bound cells")
        m = self.first_mismatch
        return (f"mismatch in field {m.sample} at {m.site} ({m.kind}): "
                f"PCA={int(m.pca_value)} BP={int(m.bp_value)}")


def _check_field(measure: RatesMeasure, window: Box, T: int, seed: int,
                 overrides: Dict[Tuple[int, ...], int], sample: int) -> EquivalenceReport:
    nbhd = measure.neighborhood
    memory, r = nbhd.memory, nbhd.r
    field_sample = FieldSample(measure, seed, overrides=overrides)
    table = field_sample.table
    duals = tuple(ca_to_bp(nbhd, f) for f in table.families)

    block = Box(window.lo + (1 - memory,), window.hi + (T,))
    index = np.stack([field_sample.row_atoms(window, t) for t in range(1 - memory, T + 1)], axis=-1)
    faces = tuple((Face.INFECTED, Face.INFECTED) for _ in range(nbhd.d)) + ((Face.HEALTHY, Face.HEALTHY),)
    deaths = BPState(block, index == table.empty_index, faces)
    assignment = FamilyAssignment(duals, index)
    closed = closure(deaths, assignment).infected

    # rows of the block are indexed by time + memory - 1
    slab = np.moveaxis(~closed[..., :memory], -1, 0)
    pca = simulate(measure, Configuration(window, slab, Boundary.ALL_ZERO), T, seed, overrides)
    report = EquivalenceReport(samples=1)
    for t in range(1, T + 1):
        expected = ~closed[..., t + memory - 1]
        got = pca.states[t]
        report.cells += expected.size
        diff = np.argwhere(got != expected)
        if len(diff):
            pos = tuple(int(v) for v in diff[0])
            x = tuple(p + l for p, l in zip(pos, window.lo))
            report.mismatches.append(Mismatch(sample, x + (t,), "closure", bool(got[pos]), bool(expected[pos])))
            return report

    ones = simulate(measure, Configuration.filled(nbhd, window, True, Boundary.ALL_ZERO), T, seed, overrides)
    steps = T // r + 1
    history = run_bp(deaths, assignment, steps)
    for t in range(steps + 1):
        for s in range(r * t + 1, T + 1):
            healthy = ~history[t][..., s + memory - 1]
            eta = ones.states[s]
            report.bound_cells += eta.size
            bad = np.argwhere(eta & ~healthy)
            if len(bad):
                pos = tuple(int(v) for v in bad[0])
                x = tuple(p + l for p, l in zip(pos, window.lo))
                report.mismatches.append(Mismatch(sample, x + (s,), f"bound after {t} BP steps",
                                                  True, bool(history[t][pos + (s + memory - 1,)])))
                return report
    return report


def _merge(reports: Sequence[EquivalenceReport]) -> EquivalenceReport:
    out = EquivalenceReport()
    for rep in reports:
        out.samples += rep.samples
        out.cells += rep.cells
        out.bound_cells += rep.bound_cells
        out.mismatches.extend(rep.mismatches)
    return out


def verify_equivalence(pair: CorrespondencePair, window: Optional[Box], T: int, seed: int,
                       samples: int = 1, exhaustive: bool = False,
                       workers: Optional[int] = None) -> EquivalenceReport:
    """
    Run the PCA (all-zero boundary) and the dual inhomogeneous BP (infected
    spatial faces, deaths as initial infection) on shared fields and compare
    the PCA block with the complement of the closure, plus the one-sided bound
    between BP states after t steps and the PCA from all-ones.

    Exhaustive mode enumerates every assignment on the cone of height T over
    the window ``Box.centered(d, r*T)``.
    """
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    measure = pair.measure
    nbhd = pair.nbhd
    if exhaustive:
        window = Box.centered(nbhd.d, nbhd.r * T)
    if window is None or window.d != nbhd.d:
        raise DomainError(f"window must be {nbhd.d}-dimensional")

    if exhaustive:
        cone = ConeBox(nbhd, T)
        sites = cone.sites
        table = AtomTable.of(measure)
        jobs = []
        for block in enumerate_assignments(len(table.families), len(sites)):
            for row in block:
                jobs.append({site: int(a) for site, a in zip(sites, row)})
        reports = config.run_parallel(
            lambda item: _check_field(measure, window, T, seed, item[1], item[0]),
            list(enumerate(jobs)), workers)
    else:
        reports = config.run_parallel(
            lambda i: _check_field(measure, window, T, mix_seed(seed, i), {}, i),
            list(range(samples)), workers)
    report = _merge(reports)
    logger.info(f"verify_equivalence: {report.summary()}")
    return report


# === Unimodular transforms ===

def _as_matrix(M: Sequence[Sequence[int]]) -> Matrix:
    return tuple(tuple(int(v) for v in row) for row in M)


def _determinant(M: Matrix) -> int:
    return int(round(np.linalg.det(np.array(M, dtype=np.float64))))


def transform_family(X: UpdateFamily, M: Sequence[Sequence[int]]) -> UpdateFamily:
    """Image of X under the unimodular integer matrix M acting on column vectors."""
    matrix = _as_matrix(M)
    if len(matrix) != X.dimension or any(len(row) != X.dimension for row in matrix):
        raise DomainError(f"matrix must be {X.dimension}x{X.dimension}")
    if abs(_determinant(matrix)) != 1:
        raise DomainError(f"matrix {matrix} is not unimodular")
    arr = np.array(matrix, dtype=np.int64)
    sets = [[tuple(int(v) for v in arr @ np.array(x, dtype=np.int64)) for x in s] for s in X.sets]
    return UpdateFamily.of(X.dimension, sets)


def find_unimodular(X: UpdateFamily, target: UpdateFamily,
                    bound: Optional[int] = None) -> Optional[Matrix]:
    """First unimodular matrix (entries in [-bound, bound]) mapping X onto target."""
    if X.dimension != target.dimension:
        return None
    bound = int(config.get_setting('unimodular_entry_bound', 3) if bound is None else bound)
    limit = int(config.get_setting('unimodular_search_limit', 1000000))
    D = X.dimension
    candidates = (2 * bound + 1) ** (D * D)
    if candidates > limit:
        raise CapacityError(f"{candidates} candidate matrices exceed the search limit {limit}",
                            required=candidates, cap=limit)
    entries = range(-bound, bound + 1)
    for flat in itertools.product(entries, repeat=D * D):
        matrix = tuple(tuple(flat[i * D:(i + 1) * D]) for i in range(D))
        if abs(_determinant(matrix)) != 1:
            continue
        if transform_family(X, matrix) == target:
            logger.debug(f"unimodular map {matrix} sends {X} to {target}")
            return matrix
    return None
