"""
Rates measures on up-families, death mixtures, parametrised curves,
monotonicity audits and stochastic domination.

Weights are kept as ``Fraction`` when every input is rational and as ``float``
otherwise, so exhaustive oracles can stay exact.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx

from . import config
from .errors import DomainError
from .upset_algebra import (
    DownSystem,
    GeneratorLike,
    Neighborhood,
    SiteSet,
    UpFamily,
    downsystem_contains,
    empty_family,
    make_upfamily,
    popcount,
)

logger = logging.getLogger(__name__)

Weight = Union[Fraction, float]
Probability = Union[Fraction, float, int, str]

WEIGHT_TOLERANCE = 1e-12


def as_weight(value: Probability) -> Weight:
    """Exact ``Fraction`` for ints, strings and fractions; ``float`` otherwise."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise DomainError(f"not a probability: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise DomainError(f"cannot parse weight {value!r}: {e}") from None
    return float(value)


def _family_key(family: UpFamily) -> Tuple:
    return tuple((popcount(m), m) for m in family.minimal_sets)


def order_families(families: Sequence[UpFamily]) -> List[UpFamily]:
    """
    Fixed atom order: the empty family first, then a linear extension of
    inclusion, ties broken canonically.
    """
    remaining = sorted(set(families), key=_family_key)
    ordered: List[UpFamily] = []
    while remaining:
        for candidate in remaining:
            if not any(other != candidate and other.issubset(candidate)
                       for other in remaining):
                ordered.append(candidate)
                remaining.remove(candidate)
                break
    return ordered


@dataclass(frozen=True)
class RatesMeasure:
    """A finitely supported probability measure on up-families of R."""
    neighborhood: Neighborhood
    atoms: Tuple[Tuple[UpFamily, Weight], ...]

    @property
    def exact(self) -> bool:
        return all(isinstance(w, Fraction) for _, w in self.atoms)

    @property
    def families(self) -> Tuple[UpFamily, ...]:
        return tuple(f for f, _ in self.atoms)

    @property
    def weights(self) -> Tuple[Weight, ...]:
        return tuple(w for _, w in self.atoms)

    def weight_of(self, family: UpFamily) -> Weight:
        for f, w in self.atoms:
            if f == family:
                return w
        return Fraction(0) if self.exact else 0.0

    @property
    def empty_weight(self) -> Weight:
        return self.weight_of(empty_family(self.neighborhood))

    def mass(self, system: DownSystem) -> Weight:
        total = Fraction(0) if self.exact else 0.0
        for f, w in self.atoms:
            if downsystem_contains(system, f):
                total += w
        return total

    @property
    def is_absorbing(self) -> bool:
        """The all-zero configuration is a fixed point."""
        return not any(f.is_full for f in self.families)

    @property
    def is_additive(self) -> bool:
        """Every atom is generated by singletons."""
        return all(all(popcount(m) == 1 for m in f.minimal_sets) for f in self.families)

    @property
    def is_dirac(self) -> bool:
        return len(self.atoms) == 1

    def maximal_family(self) -> UpFamily:
        """Union of the support's up-families."""
        return make_upfamily(self.neighborhood,
                             [m for f in self.families for m in f.minimal_sets])


def make_measure(nbhd: Neighborhood,
                 pairs: Iterable[Tuple[UpFamily, Probability]]) -> RatesMeasure:
    """Merge duplicate atoms, drop null ones, validate and order the support."""
    merged: Dict[UpFamily, Weight] = {}
    for family, weight in pairs:
        if family.neighborhood != nbhd:
            raise DomainError(f"atom over {family.neighborhood}, expected {nbhd}")
        w = as_weight(weight)
        if w < 0:
            raise DomainError(f"negative weight {w} on {family}")
        merged[family] = merged.get(family, Fraction(0)) + w
    support = {f: w for f, w in merged.items() if w != 0}
    if not support:
        raise DomainError("a rates measure needs at least one charged atom")
    total = sum(support.values(), Fraction(0))
    if isinstance(total, Fraction):
        if total != 1:
            raise DomainError(f"weights sum to {total}, expected 1")
    elif abs(total - 1.0) > WEIGHT_TOLERANCE:
        raise DomainError(f"weights sum to {total!r}, expected 1 within {WEIGHT_TOLERANCE}")
    atoms = tuple((f, support[f]) for f in order_families(list(support)))
    return RatesMeasure(nbhd, atoms)


def dirac(family: UpFamily) -> RatesMeasure:
    return make_measure(family.neighborhood, [(family, Fraction(1))])


def _check_probability(p: Probability, upper: Weight = Fraction(1)) -> Weight:
    w = as_weight(p)
    if not (0 <= w <= upper):
        raise DomainError(f"parameter {p} outside [0, {upper}]")
    return w


def with_death(mu: RatesMeasure, p: Probability) -> RatesMeasure:
    """p * mu + (1 - p) * delta_empty."""
    w = _check_probability(p)
    pairs = [(f, w * weight) for f, weight in mu.atoms]
    pairs.append((empty_family(mu.neighborhood), 1 - w))
    return make_measure(mu.neighborhood, pairs)


def path_family(nbhd: Neighborhood, neighbours: GeneratorLike) -> UpFamily:
    """{Y : Y meets X}, the up-family generated by the singletons of X."""
    mask = neighbours if isinstance(neighbours, int) else nbhd.site_set(neighbours)
    nbhd.check_mask(mask)
    return make_upfamily(nbhd, [1 << i for i in range(nbhd.size) if mask >> i & 1])


def gosp(nbhd: Neighborhood, neighbours: GeneratorLike, p: Probability) -> RatesMeasure:
    """Generalised oriented site percolation with neighbourhood X."""
    family = path_family(nbhd, neighbours)
    if family.is_empty:
        raise DomainError("GOSP needs a nonempty neighbourhood X")
    return with_death(dirac(family), p)


def bp_rates(nbhd: Neighborhood, update_sets: Iterable[GeneratorLike]) -> RatesMeasure:
    """Dirac on the minimal up-family holding every update set and {(0,...,0,-1)}."""
    if not nbhd.memoryless and nbhd.r > 1:
        raise DomainError("bootstrap percolation rates need a memoryless neighbourhood")
    retention = nbhd.site_set([(0,) * nbhd.d + (-1,)])
    return dirac(make_upfamily(nbhd, list(update_sets) + [retention]))


# === Built-in models ===

def oriented_site_percolation(p: Probability) -> RatesMeasure:
    nbhd = Neighborhood(1, 1, memoryless=True)
    return gosp(nbhd, [(-1, -1), (1, -1)], p)


def toom_majority_family() -> UpFamily:
    nbhd = Neighborhood(2, 1, memoryless=True)
    triple = [(0, 0, -1), (1, 0, -1), (0, 1, -1)]
    pairs = [[a, b] for i, a in enumerate(triple) for b in triple[i + 1:]]
    return make_upfamily(nbhd, pairs)


def toom_majority(p: Probability = 1) -> RatesMeasure:
    """Toom's north-east-centre majority with death rate 1 - p."""
    return with_death(dirac(toom_majority_family()), p)


def identity_ca(d: int = 0) -> UpFamily:
    nbhd = Neighborhood(d, 1, memoryless=True)
    return make_upfamily(nbhd, [[(0,) * d + (-1,)]])


# === Parametrised curves ===

@dataclass(frozen=True)
class LinearCurve:
    """p -> p * base + (1 - p) * delta_empty on [p_lo, p_hi]."""
    base: RatesMeasure
    p_lo: Weight = Fraction(0)
    p_hi: Optional[Weight] = None

    def __post_init__(self):
        limit = self.upper_limit
        hi = limit if self.p_hi is None else as_weight(self.p_hi)
        lo = as_weight(self.p_lo)
        if not (0 <= lo < hi <= limit):
            raise DomainError(f"interval [{lo}, {hi}] not inside [0, {limit}]")
        object.__setattr__(self, "p_lo", lo)
        object.__setattr__(self, "p_hi", hi)

    @property
    def upper_limit(self) -> Weight:
        alive = 1 - self.base.empty_weight
        return Fraction(1) if alive == 0 else 1 / alive

    @property
    def neighborhood(self) -> Neighborhood:
        return self.base.neighborhood

    def check(self, p: Probability) -> Weight:
        w = as_weight(p)
        if not (self.p_lo <= w <= self.p_hi):
            raise DomainError(f"p = {p} outside the curve interval [{self.p_lo}, {self.p_hi}]")
        return w

    def at(self, p: Probability) -> RatesMeasure:
        w = self.check(p)
        empty = empty_family(self.neighborhood)
        pairs = [(f, w * weight) for f, weight in self.base.atoms if f != empty]
        pairs.append((empty, 1 - w * (1 - self.base.empty_weight)))
        return make_measure(self.neighborhood, pairs)

    def mass(self, p: Probability, system: DownSystem) -> Weight:
        return self.at(p).mass(system)

    def derivative(self, p: Probability, system: DownSystem) -> Weight:
        self.check(p)
        if system.is_empty:
            return Fraction(0)
        return self.base.mass(system) - 1


@dataclass(frozen=True)
class ParametrisedCurve:
    """An arbitrary differentiable curve p -> measure, audited numerically."""
    measure_at: Callable[[float], RatesMeasure]
    p_lo: float
    p_hi: float
    name: str = "curve"

    @property
    def neighborhood(self) -> Neighborhood:
        return self.measure_at(self.p_lo).neighborhood

    def check(self, p: Probability) -> float:
        value = float(as_weight(p))
        if not (self.p_lo <= value <= self.p_hi):
            raise DomainError(f"p = {p} outside [{self.p_lo}, {self.p_hi}]")
        return value

    def at(self, p: Probability) -> RatesMeasure:
        return self.measure_at(self.check(p))

    def mass(self, p: Probability, system: DownSystem) -> float:
        return float(self.at(p).mass(system))

    def derivative(self, p: Probability, system: DownSystem) -> float:
        x = self.check(p)
        h = float(config.get_setting('finite_difference_step', 1e-4))
        lo, hi = max(self.p_lo, x - h), min(self.p_hi, x + h)
        if hi <= lo:
            return 0.0
        return (self.mass(hi, system) - self.mass(lo, system)) / (hi - lo)


Curve = Union[LinearCurve, ParametrisedCurve]


@dataclass
class SystemAudit:
    index: int
    worst_p: Weight
    worst_value: Weight


@dataclass
class CurveAuditReport:
    """Outcome of a monotonicity audit over user-supplied down-systems."""
    kind: str
    max_value: Optional[Weight]
    systems: List[SystemAudit] = field(default_factory=list)
    excluded: List[int] = field(default_factory=list)
    constant: Optional[float] = None

    @property
    def passed(self) -> bool:
        if self.max_value is None:
            return True
        tolerance = 0 if isinstance(self.max_value, Fraction) else 1e-9
        return self.max_value <= tolerance


def _audit(curve: Curve, grid: Sequence[Probability], systems: Sequence[DownSystem],
           kind: str, value_fn) -> CurveAuditReport:
    nbhd = curve.neighborhood
    report = CurveAuditReport(kind=kind, max_value=None)
    for index, system in enumerate(systems):
        if system.neighborhood != nbhd:
            raise DomainError(f"down-system {index} is over {system.neighborhood}, curve over {nbhd}")
        if system.is_empty or system.is_everything:
            report.excluded.append(index)
            continue
        worst_p, worst = None, None
        for p in grid:
            value = value_fn(p, system)
            if worst is None or value > worst:
                worst_p, worst = p, value
        if worst is None:
            continue
        report.systems.append(SystemAudit(index, worst_p, worst))
        if report.max_value is None or worst > report.max_value:
            report.max_value = worst
    logger.debug(f"{kind} audit: max {report.max_value}, excluded {report.excluded}")
    return report


def check_monotone(curve: Curve, grid: Sequence[Probability],
                   downsystems: Sequence[DownSystem]) -> CurveAuditReport:
    """Maximum of d/dp mu_p(D) over the grid and the non-trivial systems."""
    return _audit(curve, grid, downsystems, "monotone", curve.derivative)


def check_strongly_increasing(curve: Curve, grid: Sequence[Probability],
                              downsystems: Sequence[DownSystem],
                              c: Probability) -> CurveAuditReport:
    """Maximum of d/dp mu_p(D) + c (1 - mu_p(D)); nonpositive means the bound holds."""
    constant = as_weight(c)
    if constant <= 0:
        raise DomainError(f"the constant c must be positive, got {c}")

    def value(p, system):
        return curve.derivative(p, system) + constant * (1 - curve.mass(p, system))

    report = _audit(curve, grid, downsystems, "strongly-increasing", value)
    report.constant = float(constant)
    return report


# === Stochastic domination ===

@dataclass(frozen=True)
class DominationCertificate:
    """A coupling of nu (rows) and mu (columns) supported on ordered pairs."""
    nu: RatesMeasure
    mu: RatesMeasure
    coupling: Dict[Tuple[int, int], Weight]

    def verify(self, tolerance: float = 1e-9) -> bool:
        exact = self.nu.exact and self.mu.exact
        for (i, j), mass in self.coupling.items():
            if mass < 0:
                return False
            if mass and not self.mu.families[j].issubset(self.nu.families[i]):
                return False
        for axis, measure in ((0, self.nu), (1, self.mu)):
            for index, weight in enumerate(measure.weights):
                marginal = sum((m for key, m in self.coupling.items() if key[axis] == index),
                               Fraction(0))
                gap = marginal - weight
                if (gap != 0) if exact else (abs(gap) > tolerance):
                    return False
        return True


@dataclass
class DominationResult:
    certificate: Optional[DominationCertificate]
    violating_generators: Tuple[UpFamily, ...] = ()
    flow_value: Weight = 0

    @property
    def dominates(self) -> bool:
        return self.certificate is not None

    def __bool__(self) -> bool:
        return self.dominates

    def violating_system(self, nbhd: Neighborhood) -> Optional[DownSystem]:
        if self.dominates:
            return None
        return DownSystem(nbhd, self.violating_generators)


def _integer_capacities(weights: Sequence[Weight], exact: bool) -> Tuple[List[int], int]:
    if exact:
        scale = 1
        for w in weights:
            scale = lcm(scale, w.denominator)
        return [int(w * scale) for w in weights], scale
    scale = 10 ** 12
    return [int(round(float(w) * scale)) for w in weights], scale


def stochastically_dominates(nu: RatesMeasure, mu: RatesMeasure) -> DominationResult:
    """
    Decide whether nu dominates mu by max-flow over the bipartite support
    graph with an edge (A, B) whenever the up-closure of A contains that of B.
    """
    if nu.neighborhood != mu.neighborhood:
        raise DomainError(f"neighbourhood mismatch: {nu.neighborhood} vs {mu.neighborhood}")
    exact = nu.exact and mu.exact
    caps, scale = _integer_capacities(list(nu.weights) + list(mu.weights), exact)
    nu_caps, mu_caps = caps[:len(nu.atoms)], caps[len(nu.atoms):]

    graph = nx.DiGraph()
    for i, cap in enumerate(nu_caps):
        graph.add_edge("source", ("nu", i), capacity=cap)
    for j, cap in enumerate(mu_caps):
        graph.add_edge(("mu", j), "sink", capacity=cap)
    for i, upper in enumerate(nu.families):
        for j, lower in enumerate(mu.families):
            if lower.issubset(upper):
                graph.add_edge(("nu", i), ("mu", j))

    flow_value, flow_dict = nx.maximum_flow(graph, "source", "sink")
    target = min(sum(nu_caps), sum(mu_caps))
    slack = 0 if exact else len(caps)
    to_weight = (lambda v: Fraction(v, scale)) if exact else (lambda v: v / scale)

    if flow_value >= target - slack:
        coupling = {}
        for i in range(len(nu.atoms)):
            for node, amount in flow_dict[("nu", i)].items():
                if amount > 0:
                    coupling[(i, node[1])] = to_weight(amount)
        certificate = DominationCertificate(nu, mu, coupling)
        logger.debug(f"domination certificate with {len(coupling)} coupled pairs")
        return DominationResult(certificate, (), to_weight(flow_value))

    _, (reachable, _) = nx.minimum_cut(graph, "source", "sink")
    generators = tuple(nu.families[node[1]] for node in sorted(
        (n for n in reachable if isinstance(n, tuple) and n[0] == "nu"), key=lambda n: n[1]))
    logger.debug(f"no domination: flow {flow_value}/{target}, witness of {len(generators)} generators")
    return DominationResult(None, generators, to_weight(flow_value))
