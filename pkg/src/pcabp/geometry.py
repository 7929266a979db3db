"""
Direction geometry of update families.

A direction u is unstable for X when some update set lies strictly on the
negative side of u. In two dimensions the circle is cut at the finitely many
directions orthogonal to a site (plus the axes); stability is constant on each
open gap, so every question reduces to exact integer cross and dot products on
the cut points and one representative per gap.
"""

import functools
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import gcd
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bp_engine import BPState, UpdateFamily, run_bp
from .correspondence import ca_to_bp
from .errors import DomainError, MarginError, UnknownClassificationError
from .pca_engine import Boundary, Box, Configuration, simulate
from .rates import dirac
from .upset_algebra import Neighborhood, UpFamily

logger = logging.getLogger(__name__)

Vec = Tuple[int, int]
Vector = Tuple[int, ...]

_AXES: Tuple[Vec, ...] = ((1, 0), (0, 1), (-1, 0), (0, -1))


def _primitive(v: Sequence[int]) -> Vec:
    g = gcd(abs(v[0]), abs(v[1]))
    return (v[0] // g, v[1] // g)


def _cross(a: Vec, b: Vec) -> int:
    return a[0] * b[1] - a[1] * b[0]


def _dot(a: Vec, b: Vec) -> int:
    return a[0] * b[0] + a[1] * b[1]


def _half(v: Vec) -> int:
    return 0 if v[1] > 0 or (v[1] == 0 and v[0] > 0) else 1


def _angle_cmp(a: Vec, b: Vec) -> int:
    """Order by angle in [0, 360) starting at (1, 0)."""
    ha, hb = _half(a), _half(b)
    if ha != hb:
        return ha - hb
    c = _cross(a, b)
    return -1 if c > 0 else (1 if c < 0 else 0)


def _same_direction(a: Vec, b: Vec) -> bool:
    return _cross(a, b) == 0 and _dot(a, b) > 0


def _in_frame(a: Vec, v: Vec) -> Vec:
    """v rotated by minus the angle of a (scaled by |a|)."""
    return (_dot(a, v), _cross(a, v))


def _strictly_inside(a: Vec, u: Vec, b: Vec) -> bool:
    """u on the open counterclockwise arc from a to b (the whole circle minus a if a ~ b)."""
    if _same_direction(a, u):
        return False
    if _same_direction(a, b):
        return True
    return _angle_cmp(_in_frame(a, u), _in_frame(a, b)) < 0


def _at_least_half(a: Vec, b: Vec) -> bool:
    """The counterclockwise arc from a to b spans at least 180 degrees."""
    return _cross(a, b) <= 0


def _is_unstable(family: UpdateFamily, u: Sequence[int]) -> bool:
    return any(all(sum(ui * xi for ui, xi in zip(u, x)) < 0 for x in s) for s in family.sets)


class Verdict(Enum):
    SUPERCRITICAL = "Supercritical"
    SUBCRITICAL = "Subcritical"


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    heuristic: bool = False
    detail: str = ""

    def __str__(self) -> str:
        return f"Heuristic({self.verdict.value})" if self.heuristic else self.verdict.value


@dataclass(frozen=True)
class ArcSet:
    """
    Disjoint arcs, each running counterclockwise from its first to its second
    endpoint. Open arcs leave out their endpoints; closed arcs keep them, and a
    closed arc with equal endpoints is a single direction.
    """
    arcs: Tuple[Tuple[Vec, Vec], ...] = ()
    full: bool = False
    closed: bool = False

    @property
    def is_empty(self) -> bool:
        return not self.full and not self.arcs

    def _is_point(self, a: Vec, b: Vec) -> bool:
        return self.closed and _same_direction(a, b)

    def contains(self, u: Sequence[int]) -> bool:
        direction = _primitive(u)
        if self.full:
            return True
        for a, b in self.arcs:
            if self.closed and (_same_direction(a, direction) or _same_direction(b, direction)):
                return True
            if not self._is_point(a, b) and _strictly_inside(a, direction, b):
                return True
        return False

    def contains_open_semicircle(self) -> bool:
        return self.full or any(_at_least_half(a, b) and not self._is_point(a, b) for a, b in self.arcs)

    def __str__(self) -> str:
        if self.full:
            return "full circle"
        if not self.arcs:
            return "empty"
        if not self.closed:
            return ", ".join(f"({a} -> {b})" for a, b in self.arcs)
        return ", ".join(f"{{{a}}}" if self._is_point(a, b) else f"[{a} -> {b}]" for a, b in self.arcs)


# === Circle decomposition ===

@dataclass(frozen=True)
class _Cell:
    start: Vec
    end: Vec
    rep: Vec
    is_point: bool
    unstable: bool


def _cut_points(family: UpdateFamily) -> List[Vec]:
    points = set(_AXES)
    for x in family.sites:
        if x != (0, 0):
            r = _primitive((-x[1], x[0]))
            points.add(r)
            points.add((-r[0], -r[1]))
    return sorted(points, key=functools.cmp_to_key(_angle_cmp))


def _cells(family: UpdateFamily) -> List[_Cell]:
    if family.dimension != 2:
        raise DomainError(f"planar geometry needs a 2-dimensional family, got dimension {family.dimension}")
    points = _cut_points(family)
    cells = []
    for i, p in enumerate(points):
        q = points[(i + 1) % len(points)]
        rep = _primitive((p[0] + q[0], p[1] + q[1]))
        cells.append(_Cell(p, p, p, True, _is_unstable(family, p)))
        cells.append(_Cell(p, q, rep, False, _is_unstable(family, rep)))
    return cells


def _runs(flags: List[bool]) -> Optional[List[Tuple[int, int]]]:
    """Maximal cyclic runs of True as (first, last) indices; None when every flag is True."""
    n = len(flags)
    if all(flags):
        return None
    start = flags.index(False)
    runs, i = [], 0
    while i < n:
        j = (start + i) % n
        if flags[j]:
            first = j
            length = 0
            while i < n and flags[(start + i) % n]:
                length += 1
                i += 1
            runs.append((first, (first + length - 1) % n))
        else:
            i += 1
    return runs


def _run_span(cells: List[_Cell], run: Tuple[int, int]) -> Tuple[Vec, Vec, bool]:
    first, last = cells[run[0]], cells[run[1]]
    single_point = run[0] == run[1] and first.is_point
    wide = not single_point and _at_least_half(first.start, last.end)
    return first.start, last.end, wide


def unstable_set_2d(X: UpdateFamily) -> ArcSet:
    """Union over update sets of the open arc of directions with every site on the negative side."""
    cells = _cells(X)
    runs = _runs([c.unstable for c in cells])
    if runs is None:
        return ArcSet(full=True)
    return ArcSet(tuple((cells[a].start, cells[b].end) for a, b in runs))


def stable_set_2d(X: UpdateFamily) -> ArcSet:
    """Directions that are not unstable, as closed arcs."""
    cells = _cells(X)
    runs = _runs([not c.unstable for c in cells])
    if runs is None:
        return ArcSet(full=True, closed=True)
    return ArcSet(tuple((cells[a].start, cells[b].end) for a, b in runs), closed=True)


def _closure_flags(cells: List[_Cell]) -> List[bool]:
    n = len(cells)
    flags = []
    for i, cell in enumerate(cells):
        near = cells[(i - 1) % n].unstable or cells[(i + 1) % n].unstable
        flags.append(cell.unstable or (cell.is_point and near))
    return flags


def classify_2d(X: UpdateFamily) -> Classification:
    """
    Supercritical iff an open semicircle is unstable; subcritical iff every
    open semicircle meets the interior of the stable set.
    """
    cells = _cells(X)
    unstable_runs = _runs([c.unstable for c in cells])
    if unstable_runs is None:
        return Classification(Verdict.SUPERCRITICAL, detail="every direction is unstable")
    for run in unstable_runs:
        a, b, wide = _run_span(cells, run)
        if wide:
            return Classification(Verdict.SUPERCRITICAL, detail=f"unstable arc {a} -> {b} spans a semicircle")
    closed_runs = _runs(_closure_flags(cells))
    if closed_runs is not None and not any(_run_span(cells, run)[2] for run in closed_runs):
        return Classification(Verdict.SUBCRITICAL, detail="every open semicircle meets interior-stable directions")
    raise UnknownClassificationError(
        f"{X}: no unstable open semicircle, yet some open semicircle has no interior-stable "
        f"direction; the family is neither supercritical nor subcritical (critical class)")


def _classify_1d(X: UpdateFamily) -> Classification:
    unstable = [u for u in ((1,), (-1,)) if _is_unstable(X, u)]
    if unstable:
        return Classification(Verdict.SUPERCRITICAL, detail=f"direction {unstable[0]} is unstable")
    return Classification(Verdict.SUBCRITICAL, detail="both directions are stable")


def seed_growth(X: UpdateFamily, steps: int = 20, seed_radius: Optional[int] = None) -> List[int]:
    """Infected counts of the closure dynamics from a filled ball, over ``steps`` steps."""
    radius = seed_radius if seed_radius is not None else max(2, 2 * X.range)
    window = Box.centered(X.dimension, radius + X.range * steps + 1)
    seed_box = Box.centered(X.dimension, radius)
    infected = np.zeros(window.shape, dtype=bool)
    inner = tuple(slice(p, p + n) for p, n in zip(window.position(seed_box.lo), seed_box.shape))
    infected[inner] = True
    history = run_bp(BPState(window, infected), X, steps)
    return [int(h.sum()) for h in history]


def classify(X: UpdateFamily, steps: int = 20) -> Classification:
    """Exact in dimensions 1 and 2, labelled heuristic by seed growth above that."""
    if X.dimension == 1:
        return _classify_1d(X)
    if X.dimension == 2:
        return classify_2d(X)
    counts = seed_growth(X, steps)
    growing = all(b > a for a, b in zip(counts, counts[1:]))
    verdict = Verdict.SUPERCRITICAL if growing else Verdict.SUBCRITICAL
    logger.debug(f"heuristic classification of {X}: counts {counts[0]}..{counts[-1]}")
    return Classification(verdict, heuristic=True,
                          detail=f"seed closure {'kept' if growing else 'stopped'} growing over {steps} steps")


# === Half-space certificates ===

@dataclass(frozen=True)
class HalfSpaceCertificate:
    """Either a normal u with <x, u> <= -1 on every site, or a convex combination of sites equal to 0."""
    sites: Tuple[Vector, ...]
    normal: Optional[Tuple[Fraction, ...]] = None
    witness: Optional[Dict[Vector, Fraction]] = None

    @property
    def contained(self) -> bool:
        return self.normal is not None

    def verify(self) -> bool:
        if self.normal is not None:
            return all(sum(Fraction(x) * u for x, u in zip(s, self.normal)) <= -1 for s in self.sites)
        if not self.witness or sum(self.witness.values()) != 1:
            return False
        if any(w < 0 for w in self.witness.values()):
            return False
        dim = len(next(iter(self.witness)))
        return all(sum(w * s[k] for s, w in self.witness.items()) == 0 for k in range(dim))


def half_space_normal(X: UpdateFamily) -> HalfSpaceCertificate:
    """
    Solve <x, u> <= -1 over every site exactly by Fourier-Motzkin elimination,
    tracking multipliers so that infeasibility yields a zero convex combination.
    """
    sites = tuple(X.sites)
    D = X.dimension
    if not sites:
        return HalfSpaceCertificate(sites, normal=tuple(Fraction(int(k == D - 1)) for k in range(D)))
    m = len(sites)
    rows = [(tuple(Fraction(v) for v in s), Fraction(-1),
             tuple(Fraction(int(i == k)) for k in range(m))) for i, s in enumerate(sites)]
    stages = []
    current = rows
    for j in range(D):
        stages.append(current)
        pos = [r for r in current if r[0][j] > 0]
        neg = [r for r in current if r[0][j] < 0]
        nxt = {(r[0], r[1]): r for r in current if r[0][j] == 0}
        for p in pos:
            for n in neg:
                cp, cn = p[0][j], -n[0][j]
                coeffs = tuple(cn * a + cp * b for a, b in zip(p[0], n[0]))
                rhs = cn * p[1] + cp * n[1]
                mult = tuple(cn * a + cp * b for a, b in zip(p[2], n[2]))
                nxt.setdefault((coeffs, rhs), (coeffs, rhs, mult))
        current = list(nxt.values())

    for coeffs, rhs, mult in current:
        if rhs < 0:
            total = sum(mult)
            witness = {sites[i]: w / total for i, w in enumerate(mult) if w}
            logger.debug(f"{X} is not in a half-space: witness {witness}")
            return HalfSpaceCertificate(sites, witness=witness)

    u = [Fraction(0)] * D
    for j in range(D - 1, -1, -1):
        lower, upper = None, None
        for coeffs, rhs, _ in stages[j]:
            c = coeffs[j]
            rest = rhs - sum(coeffs[k] * u[k] for k in range(j + 1, D))
            if c > 0:
                upper = rest / c if upper is None else min(upper, rest / c)
            elif c < 0:
                lower = rest / c if lower is None else max(lower, rest / c)
        value = Fraction(0)
        if lower is not None and value < lower:
            value = lower
        if upper is not None and value > upper:
            value = upper
        u[j] = value
    return HalfSpaceCertificate(sites, normal=tuple(u))


# === Stable interior ===

@dataclass
class StableInteriorReport:
    certificate: HalfSpaceCertificate
    stable_arcs: List[Tuple[Vec, Vec]] = field(default_factory=list)
    isolated_points: List[Vec] = field(default_factory=list)
    unstable_semicircle: bool = False
    opposite_pair: Optional[Tuple[Vec, Vec]] = None

    @property
    def closure_of_interior(self) -> bool:
        return not self.isolated_points


def _locate(cells: List[_Cell], u: Vec) -> int:
    for i, cell in enumerate(cells):
        if cell.is_point and _same_direction(cell.start, u):
            return i
    for i, cell in enumerate(cells):
        if not cell.is_point and _strictly_inside(cell.start, u, cell.end):
            return i
    raise DomainError(f"direction {u} not located on the circle")


def _interior_stable(cells: List[_Cell], i: int) -> bool:
    n = len(cells)
    cell = cells[i]
    if cell.unstable:
        return False
    return not cell.is_point or not (cells[(i - 1) % n].unstable or cells[(i + 1) % n].unstable)


def stable_interior_check(X: UpdateFamily) -> StableInteriorReport:
    """
    Check that the stable set is the closure of its interior and, when no
    open semicircle is unstable, exhibit opposite interior-stable directions.
    """
    cells = _cells(X)
    report = StableInteriorReport(certificate=half_space_normal(X))
    n = len(cells)
    for i, cell in enumerate(cells):
        if cell.is_point and not cell.unstable and \
                cells[(i - 1) % n].unstable and cells[(i + 1) % n].unstable:
            report.isolated_points.append(cell.start)
    stable_runs = _runs([not c.unstable for c in cells])
    if stable_runs is None:
        report.stable_arcs = [((1, 0), (1, 0))]
    else:
        report.stable_arcs = [(cells[a].start, cells[b].end) for a, b in stable_runs]
    report.unstable_semicircle = unstable_set_2d(X).contains_open_semicircle()
    if not report.unstable_semicircle:
        for i, cell in enumerate(cells):
            if not _interior_stable(cells, i):
                continue
            v = cell.rep
            opposite = (-v[0], -v[1])
            if _interior_stable(cells, _locate(cells, opposite)):
                report.opposite_pair = (v, opposite)
                break
    return report


# === Eroders ===

@dataclass
class EroderVerdict:
    island: Tuple[Vector, ...]
    status: str
    erased_at: Optional[int] = None
    period: Optional[int] = None
    shift: Optional[Vector] = None
    horizon: int = 0

    @property
    def erased(self) -> bool:
        return self.status == "erased"


def _zero_pattern(slab: np.ndarray) -> Tuple[Optional[Vector], bytes]:
    """Spatial offset of the zeros and a key of their pattern over every memory row."""
    zeros = np.argwhere(~slab)
    if not len(zeros):
        return None, b""
    lo = zeros[:, 1:].min(axis=0)
    hi = zeros[:, 1:].max(axis=0)
    crop = slab[(slice(None),) + tuple(slice(a, b + 1) for a, b in zip(lo, hi))]
    return tuple(int(v) for v in lo), bytes(str(crop.shape), "ascii") + np.packbits(crop).tobytes()


def is_eroder_simulation(nbhd: Neighborhood, U: UpFamily, T_max: int,
                         islands: Sequence[Sequence[Sequence[int]]],
                         window: Optional[Box] = None) -> List[EroderVerdict]:
    """
    Run the deterministic CA from all-ones with each island of zeros (on every
    slab row) and report erasure time, a proven persistence (exact or
    translated repeat), or undecided at ``T_max``.
    """
    measure = dirac(U)
    verdicts = []
    for island in islands:
        points = [tuple(int(v) for v in x) for x in island]
        needed = Box.bounding(points, nbhd.d).expand(nbhd.r * T_max)
        box = needed if window is None else window
        if not box.contains_box(needed):
            raise MarginError(f"window lacks the margin r*T_max={nbhd.r * T_max} around island {points}")
        slab = np.ones((nbhd.memory,) + box.shape, dtype=bool)
        for x in points:
            slab[(slice(None),) + box.position(x)] = False
        initial = Configuration(box, slab, Boundary.ALL_ONE)
        rows = np.concatenate([slab[:-1], simulate(measure, initial, T_max, seed=0).states], axis=0)

        verdict = EroderVerdict(tuple(points), "undecided", horizon=T_max)
        seen: Dict[bytes, Tuple[int, Vector]] = {}
        for t in range(T_max + 1):
            current = rows[t:t + nbhd.memory]
            origin, key = _zero_pattern(current)
            if origin is None:
                verdict.status, verdict.erased_at = "erased", t
                break
            if key in seen:
                t0, origin0 = seen[key]
                verdict.status, verdict.period = "persistent", t - t0
                verdict.shift = tuple(a - b for a, b in zip(origin, origin0))
                break
            seen[key] = (t, origin)
        logger.debug(f"island {points}: {verdict.status}")
        verdicts.append(verdict)
    return verdicts


def is_eroder_geometric_1d(nbhd: Neighborhood, U: UpFamily) -> bool:
    """Eroder iff the planar dual family is subcritical."""
    if nbhd.d != 1:
        raise DomainError(f"the planar criterion needs d = 1, got d = {nbhd.d}")
    return classify_2d(ca_to_bp(nbhd, U)).verdict is Verdict.SUBCRITICAL
