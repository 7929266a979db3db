"""
Graphical construction of attractive PCA.

A site turns 1 at time t iff the set of neighbourhood offsets (y, s) whose
state eta_{x+y}(t+s) is 1 belongs to the up-family drawn at (x, t).

Time labels: the initial slab holds the ``memory`` rows read by the first
update, oldest first; ``states[0]`` of a trajectory is the most recent slab row
and ``states[t]`` is the configuration after t updates, driven by the field
row t. theta_n is the probability that the origin is 1 after n updates from
all-ones.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from . import config
from .errors import CapacityError, DomainError, MarginError
from .random_fields import LANE_ATOM, LANE_EMPTY, bernoulli, replica_seeds, seed_array, uniforms
from .rates import LinearCurve, RatesMeasure, Weight, path_family
from .upset_algebra import GeneratorLike, Neighborhood, Site, UpFamily, bits_of, empty_family

logger = logging.getLogger(__name__)

# Symbol used for exact polynomials along linear curves
P = sp.Symbol("p")


class Boundary(Enum):
    ALL_ZERO = "all-zero"
    ALL_ONE = "all-one"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Box:
    """Inclusive integer box in Z^d; ``Box((), ())`` is the single point of Z^0."""
    lo: Tuple[int, ...]
    hi: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise DomainError(f"box corners {self.lo} and {self.hi} differ in dimension")
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise DomainError(f"empty box {self.lo}..{self.hi}")

    @classmethod
    def centered(cls, d: int, radius: int) -> "Box":
        return cls((-radius,) * d, (radius,) * d)

    @classmethod
    def bounding(cls, points: Sequence[Sequence[int]], d: int) -> "Box":
        if not points:
            return cls.centered(d, 0)
        arr = np.asarray(points, dtype=np.int64).reshape(len(points), d)
        return cls(tuple(arr.min(axis=0)), tuple(arr.max(axis=0)))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def coords(self) -> np.ndarray:
        """All points in C order, shape (size, d)."""
        if self.d == 0:
            return np.zeros((1, 0), dtype=np.int64)
        axes = [np.arange(l, h + 1, dtype=np.int64) for l, h in zip(self.lo, self.hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)

    def contains(self, point: Sequence[int]) -> bool:
        return len(point) == self.d and all(l <= v <= h for v, l, h in zip(point, self.lo, self.hi))

    def contains_box(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and \
            all(a >= b for a, b in zip(self.hi, other.hi))

    def position(self, point: Sequence[int]) -> Tuple[int, ...]:
        if not self.contains(point):
            raise DomainError(f"point {tuple(point)} outside box {self.lo}..{self.hi}")
        return tuple(int(v) - l for v, l in zip(point, self.lo))

    def expand(self, margin: int) -> "Box":
        return Box(tuple(v - margin for v in self.lo), tuple(v + margin for v in self.hi))


# === Field sampling ===

@dataclass(frozen=True, eq=False)
class AtomTable:
    """
    Kernel view of a measure: families in atom order (the empty family is
    appended when the measure does not charge it) and the sampling quantiles.
    """
    families: Tuple[UpFamily, ...]
    empty_index: int
    empty_weight: float
    alive_indices: np.ndarray
    cumulative: np.ndarray
    absorbing: bool

    @classmethod
    def of(cls, measure: RatesMeasure) -> "AtomTable":
        families = list(measure.families)
        empty = empty_family(measure.neighborhood)
        if empty not in families:
            families.append(empty)
        alive = [i for i, f in enumerate(measure.families) if f != empty]
        weights = [measure.weights[i] for i in alive]
        total = sum(weights, Fraction(0))
        running, cumulative = Fraction(0), []
        for w in weights:
            running += w
            cumulative.append(float(running / total))
        return cls(
            families=tuple(families),
            empty_index=families.index(empty),
            empty_weight=float(measure.empty_weight),
            alive_indices=np.array(alive, dtype=np.int64),
            cumulative=np.array(cumulative, dtype=np.float64),
            absorbing=measure.is_absorbing,
        )

    def draw(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Lane-0 uniform decides death, lane-1 uniform picks a surviving atom."""
        if not len(self.alive_indices):
            return np.full(u.shape, self.empty_index, dtype=np.int64)
        pick = np.clip(np.searchsorted(self.cumulative, v, side="right"),
                       0, len(self.alive_indices) - 1)
        return np.where(u < self.empty_weight, self.empty_index, self.alive_indices[pick])


def sample_atoms(table: AtomTable, seeds: np.ndarray, coords: np.ndarray, t: int) -> np.ndarray:
    """
    Atom indices of shape (B, M) at spatial points ``coords`` and time t.

    Same values as ``table.draw`` on the lane-0 and lane-1 uniforms; lanes that
    cannot change the outcome are not drawn.
    """
    points = np.column_stack([coords, np.full(len(coords), t, dtype=np.int64)])
    shape = (len(seeds), len(points))
    alive = table.alive_indices
    if not len(alive) or table.empty_weight >= 1:
        return np.full(shape, table.empty_index, dtype=np.int64)
    if len(alive) == 1:
        atoms = np.full(shape, alive[0], dtype=np.int64)
    else:
        pick = np.searchsorted(table.cumulative, uniforms(seeds, points, LANE_ATOM), side="right")
        atoms = alive[np.clip(pick, 0, len(alive) - 1)]
    if table.empty_weight > 0:
        atoms[bernoulli(seeds, points, LANE_EMPTY, table.empty_weight)] = table.empty_index
    return atoms


@dataclass
class FieldSample:
    """
    The i.i.d. field of up-families drawn from ``measure`` under ``seed``.

    ``overrides`` pins the atom index at chosen space-time sites and is how the
    exhaustive oracles feed explicit assignments to the engines.
    """
    measure: RatesMeasure
    seed: int
    box: Optional[Box] = None
    overrides: Dict[Site, int] = field(default_factory=dict)

    def __post_init__(self):
        self.table = AtomTable.of(self.measure)

    def atom_index(self, site: Sequence[int]) -> int:
        key = tuple(int(v) for v in site)
        if key in self.overrides:
            return self.overrides[key]
        coords = np.array([key[:-1]], dtype=np.int64).reshape(1, len(key) - 1)
        return int(sample_atoms(self.table, seed_array([self.seed]), coords, key[-1])[0, 0])

    def family_at(self, site: Sequence[int]) -> UpFamily:
        return self.table.families[self.atom_index(site)]

    def row_atoms(self, window: Box, t: int) -> np.ndarray:
        atoms = sample_atoms(self.table, seed_array([self.seed]), window.coords(), t)
        atoms = atoms.reshape(window.shape)
        for site, index in self.overrides.items():
            if site[-1] == t and window.contains(site[:-1]):
                atoms[window.position(site[:-1])] = index
        return atoms


# === Configurations and trajectories ===

@dataclass
class Configuration:
    """Binary slab of shape (memory, *window.shape), oldest row first."""
    window: Box
    slab: np.ndarray
    boundary: Boundary = Boundary.ALL_ZERO

    def __post_init__(self):
        self.slab = np.asarray(self.slab, dtype=bool)
        if self.slab.ndim != self.window.d + 1 or self.slab.shape[1:] != self.window.shape:
            raise DomainError(
                f"slab shape {self.slab.shape} does not match window {self.window.shape}")
        if isinstance(self.boundary, str):
            self.boundary = Boundary(self.boundary)

    @property
    def memory(self) -> int:
        return self.slab.shape[0]

    @classmethod
    def filled(cls, nbhd: Neighborhood, window: Box, value: bool,
               boundary: Boundary = Boundary.ALL_ZERO) -> "Configuration":
        slab = np.full((nbhd.memory,) + window.shape, bool(value))
        return cls(window, slab, boundary)

    @classmethod
    def from_sites(cls, nbhd: Neighborhood, window: Box, sites: Sequence[Sequence[int]],
                   boundary: Boundary = Boundary.ALL_ZERO) -> "Configuration":
        """Ones exactly at ``(x, s)`` with s in {-memory, ..., -1} (s = -1 is the latest row)."""
        slab = np.zeros((nbhd.memory,) + window.shape, dtype=bool)
        for site in sites:
            x, s = tuple(site[:-1]), int(site[-1])
            if not -nbhd.memory <= s <= -1:
                raise DomainError(f"initial site {tuple(site)} is not in a slab row")
            slab[(nbhd.memory + s,) + window.position(x)] = True
        return cls(window, slab, boundary)


@dataclass
class Trajectory:
    states: np.ndarray
    initial: Configuration
    field: Optional[FieldSample]
    seed: int

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1

    def at(self, t: int) -> np.ndarray:
        return self.states[t]


# === Kernel ===

def _pad(slab: np.ndarray, r: int, boundary: Boundary) -> np.ndarray:
    d = slab.ndim - 2
    widths = [(0, 0), (0, 0)] + [(r, r)] * d
    if boundary is Boundary.PERIODIC:
        return np.pad(slab, widths, mode="wrap")
    value = boundary is Boundary.ALL_ONE
    return np.pad(slab, widths, mode="constant", constant_values=value)


def _crop(block: np.ndarray, r: int, lead: int) -> np.ndarray:
    d = block.ndim - lead
    return block[(slice(None),) * lead + tuple(slice(r, size - r) for size in block.shape[lead:])]


def _advance(slab: np.ndarray, atoms: np.ndarray, families: Sequence[UpFamily],
             nbhd: Neighborhood, boundary: Optional[Boundary]) -> np.ndarray:
    """
    One synchronous update for a batch.

    :param slab: bool array (B, memory, *shape)
    :param atoms: int array (B, *out_shape) of indices into ``families``
    :param boundary: substitution rule outside the window, or None to return
        only the interior whose stencil fits (each side shrinks by r)
    :return: bool array (B, *out_shape)
    """
    d, r, memory = nbhd.d, nbhd.r, nbhd.memory
    if boundary is None:
        padded = slab
        out_shape = tuple(n - 2 * r for n in slab.shape[2:])
    else:
        padded = _pad(slab, r, boundary)
        out_shape = slab.shape[2:]
    batch = slab.shape[0]
    planes: Dict[int, np.ndarray] = {}

    def plane(bit: int) -> np.ndarray:
        if bit not in planes:
            site = nbhd.sites[bit]
            index = (slice(None), memory + site[-1]) + tuple(
                slice(r + y, r + y + n) for y, n in zip(site[:d], out_shape))
            planes[bit] = padded[index]
        return planes[bit]

    out = np.zeros((batch,) + out_shape, dtype=bool)
    for a, family in enumerate(families):
        if family.is_empty:
            continue
        selected = atoms == a
        if not selected.any():
            continue
        if family.is_full:
            out |= selected
            continue
        for minimal in family.minimal_sets:
            term = selected.copy()
            for bit in bits_of(minimal):
                term &= plane(bit)
            out |= term
    return out


def _shift_in(slab: np.ndarray, row: np.ndarray) -> np.ndarray:
    return np.concatenate([slab[:, 1:], row[:, None]], axis=1)


def step(prev_slab: Configuration, field_row: Mapping[Tuple[int, ...], UpFamily]) -> np.ndarray:
    """Evaluate one row of the construction against an explicit family per site."""
    if not field_row:
        raise DomainError("field row is empty")
    families = sorted(set(field_row.values()), key=lambda f: (len(f.minimal_sets), f.minimal_sets))
    nbhd = families[0].neighborhood
    if prev_slab.memory != nbhd.memory:
        raise DomainError(f"slab holds {prev_slab.memory} rows, {nbhd} needs {nbhd.memory}")
    window = prev_slab.window
    atoms = np.empty(window.shape, dtype=np.int64)
    lookup = {f: i for i, f in enumerate(families)}
    for point in window.coords():
        key = tuple(int(v) for v in point)
        if key not in field_row:
            raise DomainError(f"field row has no up-family at {key}")
        atoms[window.position(key)] = lookup[field_row[key]]
    return _advance(prev_slab.slab[None], atoms[None], families, nbhd, prev_slab.boundary)[0]


def simulate(measure: RatesMeasure, initial: Configuration, T: int, seed: int,
             overrides: Optional[Dict[Site, int]] = None) -> Trajectory:
    """Run T updates from ``initial`` under the field of (measure, seed)."""
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    nbhd = measure.neighborhood
    if initial.memory != nbhd.memory or initial.window.d != nbhd.d:
        raise DomainError(f"initial configuration does not fit {nbhd}")
    sample = FieldSample(measure, seed, overrides=dict(overrides or {}))
    slab = initial.slab[None].copy()
    states = np.empty((T + 1,) + initial.window.shape, dtype=bool)
    states[0] = slab[0, -1]
    for t in range(1, T + 1):
        atoms = sample.row_atoms(initial.window, t)[None]
        row = _advance(slab, atoms, sample.table.families, nbhd, initial.boundary)
        slab = _shift_in(slab, row)
        states[t] = row[0]
    logger.debug(f"simulated {T} steps on window {initial.window.shape} with seed {seed}")
    return Trajectory(states, initial, sample, seed)


# === Cone computations ===

@dataclass(frozen=True)
class ConeBox:
    """Sites (x, t) with |x| <= r (n - t) and 0 <= t <= n, ordered by t then x."""
    nbhd: Neighborhood
    n: int

    def window(self, t: int) -> Box:
        return Box.centered(self.nbhd.d, self.nbhd.r * (self.n - t))

    @property
    def row_offsets(self) -> List[int]:
        offsets, total = [], 0
        for t in range(self.n + 1):
            offsets.append(total)
            total += self.window(t).size
        offsets.append(total)
        return offsets

    @property
    def size(self) -> int:
        return self.row_offsets[-1]

    def row_slice(self, t: int) -> slice:
        offsets = self.row_offsets
        return slice(offsets[t], offsets[t + 1])

    @property
    def sites(self) -> List[Site]:
        out = []
        for t in range(self.n + 1):
            out.extend(tuple(int(v) for v in x) + (t,) for x in self.window(t).coords())
        return out

    def index_of(self, site: Sequence[int]) -> int:
        t = int(site[-1])
        window = self.window(t)
        if not 0 <= t <= self.n or not window.contains(site[:-1]):
            raise DomainError(f"site {tuple(site)} is outside the cone of height {self.n}")
        flat = np.ravel_multi_index(window.position(site[:-1]), window.shape) if window.d else 0
        return self.row_offsets[t] + int(flat)


AtomSource = Callable[[int, Box, np.ndarray], np.ndarray]


def cone_trace(nbhd: Neighborhood, families: Sequence[UpFamily], absorbing: bool,
               n: int, batch: int, atoms_for: AtomSource) -> np.ndarray:
    """
    Origin state at every time 0..n from all-ones, shape (n + 1, batch).

    The run is confined to the cone of height n: the window at time t has
    radius r*(n - t) and every site in it is computed exactly. For absorbing
    measures a replica whose slab is all zero is dropped and reads 0 from then on.

    ``atoms_for(t, window, alive)`` returns atom indices of shape
    (len(alive), *window.shape) for the replicas still carrying a one.
    """
    trace = np.zeros((n + 1, batch), dtype=bool)
    trace[0] = True
    if n == 0:
        return trace
    d, r = nbhd.d, nbhd.r
    slab = np.ones((batch, nbhd.memory) + Box.centered(d, r * n).shape, dtype=bool)
    alive = np.arange(batch)
    for t in range(1, n + 1):
        window = Box.centered(d, r * (n - t))
        row = _advance(slab, atoms_for(t, window, alive), families, nbhd, boundary=None)
        slab = np.concatenate([_crop(slab[:, 1:], r, 2), row[:, None]], axis=1)
        trace[t, alive] = row.reshape(len(alive), -1)[:, window.size // 2]
        if absorbing:
            keep = slab.reshape(len(alive), -1).any(axis=1)
            if not keep.all():
                slab, alive = slab[keep], alive[keep]
                if not len(alive):
                    break
    return trace


def cone_origin(nbhd: Neighborhood, families: Sequence[UpFamily], absorbing: bool,
                n: int, batch: int, atoms_for: AtomSource) -> np.ndarray:
    """Origin state after n updates from all-ones, for a batch of fields."""
    return cone_trace(nbhd, families, absorbing, n, batch, atoms_for)[-1]


def sampled_atoms(table: AtomTable, seeds: np.ndarray) -> AtomSource:
    """Atom source drawing the field of each replica seed."""
    def atoms_for(t: int, window: Box, alive: np.ndarray) -> np.ndarray:
        drawn = sample_atoms(table, seeds[alive], window.coords(), t)
        return drawn.reshape((len(alive),) + window.shape)
    return atoms_for


def cone_event(table: AtomTable, nbhd: Neighborhood, n: int, assignments: np.ndarray) -> np.ndarray:
    """A_n for explicit assignments of shape (B, |cone|) in cone-site order."""
    cone = ConeBox(nbhd, n)
    assignments = np.asarray(assignments, dtype=np.int64)

    def atoms_for(t: int, window: Box, alive: np.ndarray) -> np.ndarray:
        return assignments[alive][:, cone.row_slice(t)].reshape((len(alive),) + window.shape)

    return cone_origin(nbhd, table.families, table.absorbing, n, len(assignments), atoms_for)


def cone_assignments(table: AtomTable, nbhd: Neighborhood, n: int, seeds: np.ndarray) -> np.ndarray:
    """Atom indices on every cone site for each replica seed, shape (B, |cone|)."""
    cone = ConeBox(nbhd, n)
    rows = [sample_atoms(table, seeds, cone.window(t).coords(), t) for t in range(n + 1)]
    return np.concatenate(rows, axis=1)


def chunk_bounds(total: int, size: int) -> List[Tuple[int, int]]:
    return [(start, min(start + size, total)) for start in range(0, total, size)]


def _window_trace(table: AtomTable, nbhd: Neighborhood, n: int, width: int,
                  seeds: np.ndarray) -> np.ndarray:
    """Origin at every time 0..n on a fixed window of the given width (all-one boundary)."""
    half = width // 2
    window = Box.centered(nbhd.d, half)
    coords = window.coords()
    origin = coords.shape[0] // 2
    trace = np.ones((n + 1, len(seeds)), dtype=bool)
    slab = np.ones((len(seeds), nbhd.memory) + window.shape, dtype=bool)
    for t in range(1, n + 1):
        atoms = sample_atoms(table, seeds, coords, t).reshape((len(seeds),) + window.shape)
        slab = _shift_in(slab, _advance(slab, atoms, table.families, nbhd, Boundary.ALL_ONE))
        trace[t] = slab[:, -1].reshape(len(seeds), -1)[:, origin]
    return trace


def covers_cone(nbhd: Neighborhood, n: int, width: Optional[int]) -> bool:
    """Whether a window of this width holds the whole cone of height n."""
    return width is None or width // 2 >= nbhd.r * n


def _origin_trace(table: AtomTable, nbhd: Neighborhood, n: int, width: Optional[int],
                  seeds: np.ndarray) -> np.ndarray:
    if covers_cone(nbhd, n, width):
        return cone_trace(nbhd, table.families, table.absorbing, n, len(seeds),
                          sampled_atoms(table, seeds))
    return _window_trace(table, nbhd, n, width, seeds)


def _run_cells(nbhd: Neighborhood, n: int, width: Optional[int]) -> int:
    half = nbhd.r * n if covers_cone(nbhd, n, width) else width // 2
    return nbhd.memory * Box.centered(nbhd.d, half).size


def theta_estimate(measure: RatesMeasure, n: int, replicas: int, seed: int,
                   width: Optional[int] = None,
                   workers: Optional[int] = None) -> Tuple[float, float]:
    """
    Monte Carlo estimate of theta_n with its binomial standard error.

    Without ``width`` (or with a width covering the cone) the run is confined to
    the cone and is unbiased for the infinite lattice; a narrower width runs on
    a fixed window with all-one boundary, an upper bound.
    """
    if replicas <= 0:
        raise DomainError("replicas must be positive")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    nbhd = measure.neighborhood
    table = AtomTable.of(measure)

    def run_chunk(bounds: Tuple[int, int]) -> int:
        seeds = replica_seeds(seed, *bounds)
        return int(_origin_trace(table, nbhd, n, width, seeds)[-1].sum())

    chunk = config.batch_size(_run_cells(nbhd, n, width))
    successes = sum(config.run_parallel(run_chunk, chunk_bounds(replicas, chunk), workers))
    estimate = successes / replicas
    stderr = math.sqrt(estimate * (1 - estimate) / replicas)
    logger.debug(f"theta_{n}: {successes}/{replicas} = {estimate:.6f} +- {stderr:.6f}")
    return estimate, stderr


# === Exhaustive oracles ===

def check_enumeration(choices: int, sites: int) -> int:
    """Number of assignments, or CapacityError above 2^exhaustive_cap_log2."""
    cap = int(config.get_setting('exhaustive_cap_log2', 26))
    required = sites * math.log2(choices) if choices > 1 else 0.0
    if required > cap:
        raise CapacityError(
            f"{choices}^{sites} field assignments exceed 2^{cap}", required=required, cap=cap)
    return choices ** sites


def assignment_block(start: int, stop: int, choices: int, sites: int) -> Tuple[np.ndarray, np.ndarray]:
    """Assignment indices start..stop-1 and their base-``choices`` digits, site 0 least significant."""
    index = np.arange(start, stop, dtype=np.int64)
    powers = choices ** np.arange(sites, dtype=np.int64)
    return index, (index[:, None] // powers[None, :]) % choices


def enumerate_assignments(choices: int, sites: int) -> Iterator[np.ndarray]:
    """Every assignment in {0..choices-1}^sites, in batches of shape (B, sites)."""
    total = check_enumeration(choices, sites)
    chunk = config.batch_size(sites)
    for start, stop in chunk_bounds(total, chunk):
        yield assignment_block(start, stop, choices, sites)[1]


def atom_weights(table: AtomTable, measure: RatesMeasure) -> List[Weight]:
    exact = measure.exact
    zero = Fraction(0) if exact else 0.0
    return [measure.weight_of(f) if f in measure.families else zero for f in table.families]


def as_symbolic(weight: Weight) -> sp.Expr:
    if isinstance(weight, Fraction):
        return sp.Rational(weight.numerator, weight.denominator)
    return sp.Float(weight)


def curve_weights(table: AtomTable, curve: LinearCurve) -> List[sp.Expr]:
    """Atom weights along p -> p * base + (1 - p) * delta_empty, as polynomials in p."""
    base = curve.base
    out = []
    for index, family in enumerate(table.families):
        w = as_symbolic(base.weight_of(family)) if family in base.families else sp.Integer(0)
        if index == table.empty_index:
            out.append(1 - P * (1 - w))
        else:
            out.append(P * w)
    return out


def weighted_sum(assignments: np.ndarray, values: np.ndarray, weights: Sequence) -> Union[Fraction, float, sp.Expr]:
    """
    Sum over assignments of ``values`` times the product of per-site atom weights.

    Assignments with equal atom counts share a weight, so the products are
    formed once per count vector.
    """
    values = np.asarray(values, dtype=np.int64)
    chosen = values != 0
    total = Fraction(0) if all(isinstance(w, Fraction) for w in weights) else 0
    if not chosen.any():
        return total
    rows_in = assignments[chosen]
    counts = np.stack([(rows_in == k).sum(axis=1) for k in range(len(weights))], axis=1)
    rows, inverse = np.unique(counts, axis=0, return_inverse=True)
    multiplicity = np.zeros(len(rows), dtype=np.int64)
    np.add.at(multiplicity, inverse.reshape(-1), values[chosen])
    for row, mult in zip(rows, multiplicity):
        if not mult:
            continue
        term = int(mult)
        for w, c in zip(weights, row):
            if c:
                term = term * w ** int(c)
        total = total + term
    return total


def exhaustive_theta(target: Union[RatesMeasure, LinearCurve], n: int):
    """
    Exact theta_n by enumerating every field assignment on the cone.

    A measure gives a number (``Fraction`` for rational weights); a linear
    curve gives the expanded polynomial in ``P``.
    """
    measure = target.base if isinstance(target, LinearCurve) else target
    table = AtomTable.of(measure)
    if isinstance(target, LinearCurve):
        weights = curve_weights(table, target)
    else:
        weights = atom_weights(table, measure)
    nbhd = measure.neighborhood
    if n == 0:
        return sp.Integer(1) if isinstance(target, LinearCurve) else Fraction(1)
    cone = ConeBox(nbhd, n)
    total = 0
    for block in enumerate_assignments(len(table.families), cone.size):
        hits = cone_event(table, nbhd, n, block)
        total = total + weighted_sum(block, hits, weights)
    if isinstance(target, LinearCurve):
        return sp.expand(total)
    logger.debug(f"exhaustive theta_{n} over {cone.size} cone sites: {total}")
    return total


# === Survival and invariant density ===

@dataclass
class CurvePoint:
    t: int
    estimate: float
    stderr: float
    replicas: int


@dataclass
class SurvivalCurve:
    points: List[CurvePoint]
    seed: int

    @property
    def estimates(self) -> np.ndarray:
        return np.array([pt.estimate for pt in self.points])


def _binomial_point(t: int, count: int, replicas: int) -> CurvePoint:
    estimate = count / replicas
    return CurvePoint(t, estimate, math.sqrt(estimate * (1 - estimate) / replicas), replicas)


def survival_from(measure: RatesMeasure, A: Sequence[Sequence[int]], T: int, replicas: int,
                  seed: int, window: Optional[Box] = None,
                  workers: Optional[int] = None) -> SurvivalCurve:
    """
    P(the state is not all zero at time t) for t = 0..T, started from ones on A.

    The state at time t is the slab of the last ``memory`` rows. The window
    must contain A with a margin of r*T so the all-zero boundary never enters
    the event.
    """
    if replicas <= 0:
        raise DomainError("replicas must be positive")
    nbhd = measure.neighborhood
    if not A:
        return SurvivalCurve([CurvePoint(t, 0.0, 0.0, replicas) for t in range(T + 1)], seed)
    spatial = [tuple(site[:-1]) for site in A]
    needed = Box.bounding(spatial, nbhd.d).expand(nbhd.r * T)
    if window is None:
        window = needed
    elif not window.contains_box(needed):
        raise MarginError(
            f"window {window.lo}..{window.hi} lacks the margin r*T={nbhd.r * T} around A")
    initial = Configuration.from_sites(nbhd, window, A, Boundary.ALL_ZERO)
    table = AtomTable.of(measure)
    coords = window.coords()

    def run_chunk(bounds: Tuple[int, int]) -> np.ndarray:
        seeds = replica_seeds(seed, *bounds)
        slab = np.broadcast_to(initial.slab, (len(seeds),) + initial.slab.shape).copy()
        alive = np.arange(len(seeds))
        counts = np.zeros(T + 1, dtype=np.int64)
        counts[0] = len(seeds)
        for t in range(1, T + 1):
            atoms = sample_atoms(table, seeds[alive], coords, t).reshape((len(alive),) + window.shape)
            slab = _shift_in(slab, _advance(slab, atoms, table.families, nbhd, Boundary.ALL_ZERO))
            keep = slab.reshape(len(alive), -1).any(axis=1)
            counts[t] = int(keep.sum())
            if table.absorbing and not keep.all():
                slab, alive = slab[keep], alive[keep]
                if not len(alive):
                    break
        return counts

    chunk = config.batch_size(nbhd.memory * window.size)
    totals = sum(config.run_parallel(run_chunk, chunk_bounds(replicas, chunk), workers))
    return SurvivalCurve([_binomial_point(t, int(c), replicas) for t, c in enumerate(totals)], seed)


def theta_curve(measure: RatesMeasure, T: int, replicas: int, seed: int,
                width: Optional[int] = None,
                workers: Optional[int] = None) -> SurvivalCurve:
    """
    theta_t for t = 0..T from a single run per replica.

    Without ``width`` (or with ``width // 2 >= r*T``) each replica runs on the
    cone of height T and every theta_t is unbiased; the origin at time t sits
    inside the cone, whose sites are computed exactly. A narrower width runs on
    a fixed window with all-one boundary and gives upper bounds.
    """
    if replicas <= 0:
        raise DomainError("replicas must be positive")
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    nbhd = measure.neighborhood
    table = AtomTable.of(measure)

    def run_chunk(bounds: Tuple[int, int]) -> np.ndarray:
        seeds = replica_seeds(seed, *bounds)
        return _origin_trace(table, nbhd, T, width, seeds).sum(axis=1)

    chunk = config.batch_size(_run_cells(nbhd, T, width))
    totals = sum(config.run_parallel(run_chunk, chunk_bounds(replicas, chunk), workers))
    return SurvivalCurve([_binomial_point(t, int(c), replicas) for t, c in enumerate(totals)], seed)


def upper_invariant_density(measure: RatesMeasure, width: int, T: int, replicas: int,
                            seed: int) -> Tuple[float, float]:
    """Density of ones after T updates from all-ones on a periodic window."""
    if replicas <= 0:
        raise DomainError("replicas must be positive")
    nbhd = measure.neighborhood
    window = Box.centered(nbhd.d, width // 2)
    table = AtomTable.of(measure)
    coords = window.coords()

    def run_chunk(bounds: Tuple[int, int]) -> np.ndarray:
        seeds = replica_seeds(seed, *bounds)
        slab = np.ones((len(seeds), nbhd.memory) + window.shape, dtype=bool)
        for t in range(1, T + 1):
            atoms = sample_atoms(table, seeds, coords, t).reshape((len(seeds),) + window.shape)
            slab = _shift_in(slab, _advance(slab, atoms, table.families, nbhd, Boundary.PERIODIC))
        return slab[:, -1].reshape(len(seeds), -1).mean(axis=1)

    chunk = config.batch_size(nbhd.memory * window.size)
    densities = np.concatenate([run_chunk(b) for b in chunk_bounds(replicas, chunk)])
    stderr = float(densities.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return float(densities.mean()), stderr


# === GOSP path oracle ===

def gosp_path_oracle(X: GeneratorLike, field: FieldSample, target: Sequence[int]) -> bool:
    """
    Whether a path with steps in -X leads from (0, 0) to ``target`` through
    open sites (sites whose drawn family is nonempty).
    """
    measure = field.measure
    nbhd = measure.neighborhood
    family = path_family(nbhd, X)
    if any(f != family and not f.is_empty for f in measure.families):
        raise DomainError("the path oracle needs a GOSP measure over the same X")
    steps = [nbhd.sites[bits_of(m)[0]] for m in family.minimal_sets]
    d = nbhd.d
    origin = (0,) * d
    memo: Dict[Site, bool] = {}

    def reached(site: Site) -> bool:
        x, t = site[:d], site[d]
        if t <= 0:
            return t == 0 and x == origin
        if site in memo:
            return memo[site]
        ok = not field.family_at(site).is_empty and any(
            reached(tuple(a + b for a, b in zip(x, y[:d])) + (t + y[d],)) for y in steps)
        memo[site] = ok
        return ok

    return reached(tuple(int(v) for v in target))
