"""
Bootstrap percolation: update families, synchronous infection steps, closures,
inhomogeneous runs and Bernoulli initial conditions.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import config
from .errors import DomainError, MarginError
from .pca_engine import Box, CurvePoint, SurvivalCurve, chunk_bounds
from .random_fields import LANE_BERNOULLI, LANE_FAMILY, bernoulli, replica_seeds, seed_array, uniforms
from .rates import Probability, Weight, as_weight

logger = logging.getLogger(__name__)

Vector = Tuple[int, ...]


def _canonical_sets(sets: Iterable[frozenset]) -> Tuple[frozenset, ...]:
    ordered = sorted(set(sets), key=lambda s: (len(s), sorted(s)))
    kept: List[frozenset] = []
    for s in ordered:
        if not any(k <= s for k in kept):
            kept.append(s)
    return tuple(kept)


@dataclass(frozen=True)
class UpdateFamily:
    """A finite family of finite subsets of Z^D minus the origin, kept minimal."""
    dimension: int
    sets: Tuple[frozenset, ...]

    def __post_init__(self):
        if self.dimension < 1:
            raise DomainError(f"BP dimension must be >= 1, got {self.dimension}")
        origin = (0,) * self.dimension
        normalised = []
        for s in self.sets:
            vectors = frozenset(tuple(int(v) for v in x) for x in s)
            for x in vectors:
                if len(x) != self.dimension:
                    raise DomainError(f"vector {x} is not in Z^{self.dimension}")
                if x == origin:
                    raise DomainError("update sets may not contain the origin")
            normalised.append(vectors)
        object.__setattr__(self, "sets", _canonical_sets(normalised))

    @classmethod
    def of(cls, dimension: int, sets: Iterable[Iterable[Sequence[int]]]) -> "UpdateFamily":
        return cls(dimension, tuple(frozenset(tuple(x) for x in s) for s in sets))

    @property
    def is_empty(self) -> bool:
        return not self.sets

    @property
    def contains_empty_set(self) -> bool:
        return bool(self.sets) and not self.sets[0]

    @property
    def range(self) -> int:
        return max((abs(v) for s in self.sets for x in s for v in x), default=0)

    @property
    def sites(self) -> List[Vector]:
        return sorted({x for s in self.sets for x in s})

    def as_lists(self) -> List[List[List[int]]]:
        return [[list(x) for x in sorted(s)] for s in self.sets]

    def __str__(self) -> str:
        return "[" + ", ".join("{" + ",".join(str(x) for x in sorted(s)) + "}" for s in self.sets) + "]"


def east_update_family() -> UpdateFamily:
    return UpdateFamily.of(1, [[(-1,)]])


def north_east_update_family() -> UpdateFamily:
    return UpdateFamily.of(2, [[(0, 1), (1, 0)]])


def influence_box(X: UpdateFamily, T: int) -> Box:
    """Sites whose initial state can reach the origin within T steps."""
    sites = X.sites
    lo = tuple(T * min([0] + [x[i] for x in sites]) for i in range(X.dimension))
    hi = tuple(T * max([0] + [x[i] for x in sites]) for i in range(X.dimension))
    return Box(lo, hi)


@dataclass(frozen=True)
class FamilyMeasure:
    """Finitely supported law of per-site update families."""
    atoms: Tuple[Tuple[UpdateFamily, Weight], ...]

    def __post_init__(self):
        if not self.atoms:
            raise DomainError("a family measure needs at least one atom")
        dims = {f.dimension for f, _ in self.atoms}
        if len(dims) != 1:
            raise DomainError(f"atoms of mixed dimensions {sorted(dims)}")
        total = sum((w for _, w in self.atoms), Fraction(0))
        if any(w < 0 for _, w in self.atoms) or abs(total - 1) > 1e-12:
            raise DomainError(f"family weights must be nonnegative and sum to 1, got {total}")

    @property
    def dimension(self) -> int:
        return self.atoms[0][0].dimension

    @property
    def families(self) -> Tuple[UpdateFamily, ...]:
        return tuple(f for f, _ in self.atoms)

    @property
    def weights(self) -> Tuple[Weight, ...]:
        return tuple(w for _, w in self.atoms)


def make_family_measure(pairs: Iterable[Tuple[UpdateFamily, Probability]]) -> FamilyMeasure:
    merged = {}
    for family, weight in pairs:
        merged[family] = merged.get(family, Fraction(0)) + as_weight(weight)
    return FamilyMeasure(tuple((f, w) for f, w in merged.items() if w != 0))


def dirac_family(family: UpdateFamily) -> FamilyMeasure:
    return FamilyMeasure(((family, Fraction(1)),))


class Face(Enum):
    HEALTHY = "healthy"
    INFECTED = "infected"


Faces = Tuple[Tuple[Face, Face], ...]


def uniform_faces(dimension: int, face: Face) -> Faces:
    return tuple((face, face) for _ in range(dimension))


@dataclass
class BPState:
    """Infected set on a window; ``faces`` gives the (low, high) boundary per axis."""
    window: Box
    infected: np.ndarray
    faces: Faces = ()

    def __post_init__(self):
        self.infected = np.asarray(self.infected, dtype=bool)
        if self.infected.shape != self.window.shape:
            raise DomainError(f"infected shape {self.infected.shape} != window {self.window.shape}")
        if not self.faces:
            self.faces = uniform_faces(self.window.d, Face.HEALTHY)
        if len(self.faces) != self.window.d:
            raise DomainError(f"{len(self.faces)} face pairs for a {self.window.d}-dimensional window")

    @classmethod
    def from_sites(cls, window: Box, sites: Iterable[Sequence[int]],
                   faces: Optional[Faces] = None) -> "BPState":
        infected = np.zeros(window.shape, dtype=bool)
        for x in sites:
            infected[window.position(x)] = True
        return cls(window, infected, faces or ())

    def infected_sites(self) -> List[Vector]:
        return [tuple(int(v) + l for v, l in zip(idx, self.window.lo))
                for idx in np.argwhere(self.infected)]

    def with_infected(self, infected: np.ndarray) -> "BPState":
        return BPState(self.window, infected, self.faces)


# === Kernel ===

@dataclass
class FamilyAssignment:
    """Per-site update families: ``index`` points into ``families``."""
    families: Tuple[UpdateFamily, ...]
    index: Optional[np.ndarray] = None

    @property
    def margin(self) -> int:
        return max((f.range for f in self.families), default=0)


FamilyAt = Union[UpdateFamily, FamilyAssignment, Callable[[Vector], UpdateFamily]]


def _resolve(window: Box, family_at: FamilyAt) -> FamilyAssignment:
    if isinstance(family_at, UpdateFamily):
        return FamilyAssignment((family_at,))
    if isinstance(family_at, FamilyAssignment):
        return family_at
    families: List[UpdateFamily] = []
    index = np.empty(window.shape, dtype=np.int64)
    for point in window.coords():
        x = tuple(int(v) for v in point)
        family = family_at(x)
        if family not in families:
            families.append(family)
        index[window.position(x)] = families.index(family)
    return FamilyAssignment(tuple(families), index)


def _pad_faces(infected: np.ndarray, margin: int, faces: Faces) -> np.ndarray:
    """Pad the spatial axes (all but the first); corners follow the last axis."""
    if margin == 0:
        return infected
    widths = [(0, 0)] + [(margin, margin)] * len(faces)
    values = [(False, False)] + [(lo is Face.INFECTED, hi is Face.INFECTED) for lo, hi in faces]
    return np.pad(infected, widths, mode="constant", constant_values=values)


def _bp_advance(infected: np.ndarray, assignment: FamilyAssignment, faces: Faces) -> np.ndarray:
    """
    One synchronous BP step for a batch of shape (B, *shape).

    ``assignment.index`` may be None (homogeneous), of the window shape, or batched.
    """
    margin = assignment.margin
    padded = _pad_faces(infected, margin, faces)
    shape = infected.shape[1:]

    def shifted(x: Vector) -> np.ndarray:
        return padded[(slice(None),) + tuple(slice(margin + v, margin + v + n) for v, n in zip(x, shape))]

    out = infected.copy()
    for a, family in enumerate(assignment.families):
        if family.is_empty:
            continue
        if assignment.index is None:
            selected = np.ones_like(infected)
        else:
            selected = np.broadcast_to(assignment.index == a, infected.shape)
            if not selected.any():
                continue
        for update_set in family.sets:
            term = selected.copy()
            for x in update_set:
                term &= shifted(x)
            out |= term
    return out


def bp_step(state: BPState, family_at: FamilyAt) -> BPState:
    """x is infected next iff it is infected now or x + X is fully infected for some X."""
    assignment = _resolve(state.window, family_at)
    return state.with_infected(_bp_advance(state.infected[None], assignment, state.faces)[0])


def closure(state: BPState, family_at: FamilyAt) -> BPState:
    """Fixed point of ``bp_step`` on the window."""
    assignment = _resolve(state.window, family_at)
    current = state.infected[None]
    limit = int(config.get_setting('max_equivalence_iterations', 100000))
    for _ in range(max(limit, state.window.size + 1)):
        nxt = _bp_advance(current, assignment, state.faces)
        if np.array_equal(nxt, current):
            return state.with_infected(current[0])
        current = nxt
    raise DomainError(f"closure did not settle within {limit} steps")


def run_bp(state: BPState, family_at: FamilyAt, T: int) -> np.ndarray:
    """Infected sets after 0..T steps, shape (T+1, *window.shape)."""
    assignment = _resolve(state.window, family_at)
    out = np.empty((T + 1,) + state.window.shape, dtype=bool)
    current = state.infected[None]
    out[0] = current[0]
    for t in range(1, T + 1):
        current = _bp_advance(current, assignment, state.faces)
        out[t] = current[0]
    return out


# === Random instances ===

def sample_families(chi: FamilyMeasure, window: Box, seed: int) -> FamilyAssignment:
    """Draw one update family per site, window-independently."""
    weights = np.array([float(w) for w in chi.weights])
    cumulative = np.cumsum(weights) / weights.sum()
    u = uniforms(seed_array([seed]), window.coords(), LANE_FAMILY)[0]
    index = np.clip(np.searchsorted(cumulative, u, side="right"), 0, len(weights) - 1)
    return FamilyAssignment(chi.families, index.reshape(window.shape))


def inhomogeneous_run(chi: FamilyMeasure, initial: BPState, seed: int) -> BPState:
    """Closure of ``initial`` under i.i.d. time-constant families drawn from chi."""
    if chi.dimension != initial.window.d:
        raise DomainError(f"chi acts on Z^{chi.dimension}, window is {initial.window.d}-dimensional")
    assignment = sample_families(chi, initial.window, seed)
    logger.debug(f"inhomogeneous run on {initial.window.shape} with seed {seed}")
    return closure(initial, assignment)


def _infection_probability(q: Probability) -> float:
    value = float(as_weight(q))
    if not 0 <= value <= 1:
        raise DomainError(f"q = {q} outside [0, 1]")
    return value


def healthy_estimate(X: UpdateFamily, q: Probability, T: int, replicas: int, seed: int,
                     workers: Optional[int] = None) -> CurvePoint:
    """
    P(origin still healthy after T steps) from Bernoulli(q) infection on Z^D.

    Works backwards: level k holds the state at time T - k on the box spanned
    by k-fold sums of update-set sites, which holds every site the origin reads
    through k steps. Level T is the initial field and level 0 is the origin.
    For a dual family whose sites all sit one row down each level is a single
    row. The field is the one ``infection_time_curve`` reads, so both give the
    same count at T for the same seed.
    """
    if replicas <= 0:
        raise DomainError("replicas must be positive")
    if T < 0:
        raise DomainError(f"T must be >= 0, got {T}")
    value = _infection_probability(q)
    D = X.dimension
    sites = X.sites
    lo = tuple(min((x[i] for x in sites), default=0) for i in range(D))
    hi = tuple(max((x[i] for x in sites), default=0) for i in range(D))
    boxes = [Box(tuple(k * v for v in lo), tuple(k * v for v in hi)) for k in range(T + 1)]
    starts = [[tuple(v - l for v, l in zip(x, lo)) for x in sorted(s)] for s in X.sets]

    def run_chunk(bounds: Tuple[int, int]) -> int:
        seeds = replica_seeds(seed, *bounds)
        batch = len(seeds)

        def initial(box: Box) -> np.ndarray:
            return bernoulli(seeds, box.coords(), LANE_BERNOULLI, value).reshape((batch,) + box.shape)

        level = initial(boxes[T])
        for k in range(T - 1, -1, -1):
            box = boxes[k]
            reached = np.zeros((batch,) + box.shape, dtype=bool)
            for update_set in starts:
                term = np.ones_like(reached)
                for start in update_set:
                    term &= level[(slice(None),) + tuple(slice(s, s + n) for s, n in zip(start, box.shape))]
                reached |= term
            level = initial(box) | reached
        return int((~level.reshape(batch, -1)[:, 0]).sum())

    chunk = config.batch_size(boxes[T].size)
    healthy = sum(config.run_parallel(run_chunk, chunk_bounds(replicas, chunk), workers))
    estimate = healthy / replicas
    logger.debug(f"healthy after {T} steps at q={value}: {healthy}/{replicas}")
    return CurvePoint(T, estimate, math.sqrt(estimate * (1 - estimate) / replicas), replicas)


def bernoulli_initial(window: Box, q: Probability, seed: int,
                      faces: Optional[Faces] = None) -> BPState:
    value = _infection_probability(q)
    infected = bernoulli(seed_array([seed]), window.coords(), LANE_BERNOULLI, value)[0]
    return BPState(window, infected.reshape(window.shape), faces or ())


def infection_time_curve(X: UpdateFamily, q: Probability, window: Optional[Box], T: int,
                         replicas: int, seed: int,
                         workers: Optional[int] = None) -> SurvivalCurve:
    """
    P(origin still healthy after t steps) for t = 0..T from Bernoulli(q)
    infection, with healthy boundary.
    """
    if replicas <= 0:
        raise DomainError("replicas must be positive")
    value = _infection_probability(q)
    needed = influence_box(X, T)
    if window is None:
        window = needed
    elif not window.contains_box(needed):
        raise MarginError(f"window {window.lo}..{window.hi} does not cover {needed.lo}..{needed.hi}, "
                          f"the sites that reach the origin within {T} steps")
    assignment = FamilyAssignment((X,))
    faces = uniform_faces(X.dimension, Face.HEALTHY)
    coords = window.coords()
    origin = window.position((0,) * X.dimension)

    def run_chunk(bounds: Tuple[int, int]) -> np.ndarray:
        seeds = replica_seeds(seed, *bounds)
        infected = bernoulli(seeds, coords, LANE_BERNOULLI, value).reshape((len(seeds),) + window.shape)
        counts = np.zeros(T + 1, dtype=np.int64)
        for t in range(T + 1):
            if t:
                infected = _bp_advance(infected, assignment, faces)
            healthy = ~infected[(slice(None),) + origin]
            counts[t] = int(healthy.sum())
            if not healthy.all():
                infected = infected[healthy]
                if not len(infected):
                    break
        return counts

    chunk = config.batch_size(window.size)
    totals = sum(config.run_parallel(run_chunk, chunk_bounds(replicas, chunk), workers))
    points = []
    for t, count in enumerate(totals):
        estimate = int(count) / replicas
        points.append(CurvePoint(t, estimate, math.sqrt(estimate * (1 - estimate) / replicas), replicas))
    return SurvivalCurve(points, seed)
