"""
Exact combinatorics of the neighbourhood R, its subsets, up-families and the
double-complement dual.

Subsets of R are plain ``int`` bitmasks: bit i stands for ``nbhd.sites[i]``.
Sites are ordered lexicographically on (t, x_1, ..., x_d) so bit indices are
stable across runs and file formats.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from . import config
from .errors import CapacityError, DomainError

logger = logging.getLogger(__name__)

Site = Tuple[int, ...]
SiteSet = int
GeneratorLike = Union[int, Iterable[Site]]


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def bits_of(mask: int) -> List[int]:
    """Indices of the set bits of ``mask``, lowest first."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class Neighborhood:
    """The neighbourhood R of dimension d and range r, with or without memory."""
    d: int
    r: int
    memoryless: bool = False
    sites: Tuple[Site, ...] = field(init=False, repr=False, compare=False)
    _index: Dict[Site, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 0:
            raise DomainError(f"dimension must be >= 0, got {self.d}")
        if self.r < 1:
            raise DomainError(f"range must be >= 1, got {self.r}")
        times = [-1] if self.memoryless else list(range(-self.r, 0))
        spans = [range(-self.r, self.r + 1)] * self.d
        ordered = sorted(
            (tuple(xs) + (t,) for t in times for xs in itertools.product(*spans)),
            key=lambda s: (s[-1],) + s[:-1])
        object.__setattr__(self, "sites", tuple(ordered))
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(ordered)})

    @property
    def size(self) -> int:
        return len(self.sites)

    @property
    def memory(self) -> int:
        """Number of past rows a configuration slab must hold."""
        return 1 if self.memoryless else self.r

    @property
    def full_mask(self) -> SiteSet:
        return (1 << self.size) - 1

    def index_of(self, site: Sequence[int]) -> int:
        key = tuple(int(v) for v in site)
        try:
            return self._index[key]
        except KeyError:
            raise DomainError(f"site {key} is not in R for {self}") from None

    def contains_site(self, site: Sequence[int]) -> bool:
        return tuple(int(v) for v in site) in self._index

    def site_set(self, sites: Iterable[Sequence[int]]) -> SiteSet:
        mask = 0
        for s in sites:
            mask |= 1 << self.index_of(s)
        return mask

    def sites_of(self, mask: SiteSet) -> Tuple[Site, ...]:
        return tuple(self.sites[i] for i in bits_of(mask))

    def check_mask(self, mask: SiteSet) -> SiteSet:
        if mask < 0 or mask & ~self.full_mask:
            raise DomainError(f"bitmask {mask:#x} has bits outside R (|R|={self.size})")
        return mask

    def __str__(self) -> str:
        kind = "memoryless" if self.memoryless else "memory"
        return f"R(d={self.d}, r={self.r}, {kind})"


def _as_mask(nbhd: Neighborhood, generator: GeneratorLike) -> SiteSet:
    if isinstance(generator, (int, np.integer)):
        return nbhd.check_mask(int(generator))
    return nbhd.site_set(generator)


def _minimal_antichain(masks: Iterable[int]) -> Tuple[int, ...]:
    kept: List[int] = []
    for m in sorted(set(masks), key=lambda v: (popcount(v), v)):
        if not any(k & m == k for k in kept):
            kept.append(m)
    return tuple(sorted(kept, key=lambda v: (popcount(v), v)))


@dataclass(frozen=True)
class UpFamily:
    """
    An up-closed family of subsets of R, stored as its antichain of minimal sets.

    The empty antichain is the empty family (nothing qualifies); the antichain
    ``(0,)`` is all of Omega_R (everything qualifies).
    """
    neighborhood: Neighborhood
    minimal_sets: Tuple[SiteSet, ...]

    @property
    def is_empty(self) -> bool:
        return not self.minimal_sets

    @property
    def is_full(self) -> bool:
        return self.minimal_sets == (0,)

    def contains(self, subset: SiteSet) -> bool:
        return any(m & subset == m for m in self.minimal_sets)

    def issubset(self, other: "UpFamily") -> bool:
        """Inclusion of up-closures."""
        _check_same(self.neighborhood, other.neighborhood)
        return all(other.contains(m) for m in self.minimal_sets)

    def as_sites(self) -> List[List[Site]]:
        return [list(self.neighborhood.sites_of(m)) for m in self.minimal_sets]

    def __str__(self) -> str:
        if self.is_empty:
            return "{}"
        return "{" + ", ".join(
            "{" + ",".join(str(s) for s in self.neighborhood.sites_of(m)) + "}"
            for m in self.minimal_sets) + "}"


@dataclass(frozen=True)
class DownSystem:
    """Down-closure of a list of generator up-families under inclusion."""
    neighborhood: Neighborhood
    generators: Tuple[UpFamily, ...]

    def __post_init__(self):
        for g in self.generators:
            _check_same(self.neighborhood, g.neighborhood)

    @property
    def is_empty(self) -> bool:
        return not self.generators

    @property
    def is_everything(self) -> bool:
        return any(g.is_full for g in self.generators)


def _check_same(a: Neighborhood, b: Neighborhood) -> None:
    if a != b:
        raise DomainError(f"neighbourhood mismatch: {a} vs {b}")


def make_upfamily(nbhd: Neighborhood, generators: Iterable[GeneratorLike]) -> UpFamily:
    """Canonical up-family generated by the given subsets of R."""
    masks = [_as_mask(nbhd, g) for g in generators]
    return UpFamily(nbhd, _minimal_antichain(masks))


def empty_family(nbhd: Neighborhood) -> UpFamily:
    return UpFamily(nbhd, ())


def full_family(nbhd: Neighborhood) -> UpFamily:
    return UpFamily(nbhd, (0,))


def contains(family: UpFamily, subset: SiteSet, nbhd: Neighborhood = None) -> bool:
    if nbhd is not None:
        _check_same(family.neighborhood, nbhd)
    family.neighborhood.check_mask(subset)
    return family.contains(subset)


def membership_table(family: UpFamily) -> np.ndarray:
    """Boolean membership of every subset of R, indexed by bitmask."""
    n = family.neighborhood.size
    masks = np.arange(1 << n, dtype=np.uint32)
    member = np.zeros(1 << n, dtype=bool)
    for m in family.minimal_sets:
        m = np.uint32(m)
        member |= (masks & m) == m
    return member


def complement_dual(family: UpFamily) -> List[SiteSet]:
    """
    Minimal elements of {R \\ D : D not in family}.

    Computed by enumerating every subset of R: complements of the maximal
    non-members are exactly the minimal elements.
    """
    nbhd = family.neighborhood
    n = nbhd.size
    cap = int(config.get_setting('enumeration_cap_bits', 25))
    if n > cap:
        raise CapacityError(
            f"|R| = {n} exceeds the enumeration cap of {cap} bits", required=n, cap=cap)
    if family.is_full:
        return []

    masks = np.arange(1 << n, dtype=np.uint32)
    member = membership_table(family)
    maximal = ~member
    for i in range(n):
        bit = np.uint32(1 << i)
        has_bit = (masks & bit) != 0
        maximal &= has_bit | member[masks | bit]
    full = nbhd.full_mask
    duals = [full ^ int(m) for m in masks[maximal]]
    logger.debug(f"complement dual over {nbhd}: {len(duals)} minimal sets")
    return list(_minimal_antichain(duals))


def dual_family(family: UpFamily) -> UpFamily:
    """The double-complement image as an up-family over the same R."""
    return UpFamily(family.neighborhood, tuple(complement_dual(family)))


def downsystem_contains(system: DownSystem, family: UpFamily) -> bool:
    _check_same(system.neighborhood, family.neighborhood)
    return any(family.issubset(g) for g in system.generators)
