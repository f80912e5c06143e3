"""Finite square lattices, regions, boundaries and the rectangle splittings
used by the gap recursion."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping


@dataclass(frozen=True)
class Lattice:
    side_lengths: tuple[int, ...]
    periodic: tuple[bool, ...]

    def __init__(self, side_lengths, periodic=False):
        side_lengths = tuple(int(s) for s in side_lengths)
        if not side_lengths or any(s < 1 for s in side_lengths):
            raise ValueError(f"side lengths must be positive, got {side_lengths}")
        if isinstance(periodic, bool):
            periodic = (periodic,) * len(side_lengths)
        periodic = tuple(bool(p) for p in periodic)
        if len(periodic) != len(side_lengths):
            raise ValueError("one periodicity flag per axis is required")
        object.__setattr__(self, "side_lengths", side_lengths)
        object.__setattr__(self, "periodic", periodic)

    @classmethod
    def chain(cls, n: int, periodic: bool = False) -> "Lattice":
        return cls((n,), periodic)

    @property
    def dims(self) -> int:
        return len(self.side_lengths)

    @property
    def n_sites(self) -> int:
        return math.prod(self.side_lengths)

    def coords(self, site: int) -> tuple[int, ...]:
        if not 0 <= site < self.n_sites:
            raise ValueError(f"site {site} outside lattice of {self.n_sites} sites")
        out = []
        for length in reversed(self.side_lengths):
            out.append(site % length)
            site //= length
        return tuple(reversed(out))

    def site(self, coords: Iterable[int]) -> int:
        coords = tuple(coords)
        if len(coords) != self.dims:
            raise ValueError("coordinate rank does not match lattice dimension")
        index = 0
        for c, length, per in zip(coords, self.side_lengths, self.periodic):
            if per:
                c %= length
            if not 0 <= c < length:
                raise ValueError(f"coordinates {coords} outside lattice")
            index = index * length + c
        return index

    def axis_offsets(self, a: int, b: int) -> list[int]:
        """Per-axis absolute coordinate offsets, using the shortest image on periodic axes."""
        out = []
        for x, y, length, per in zip(self.coords(a), self.coords(b), self.side_lengths, self.periodic):
            delta = abs(x - y)
            if per:
                delta = min(delta, length - delta)
            out.append(delta)
        return out

    def site_distance(self, a: int, b: int, metric: str = "euclidean") -> float:
        offsets = self.axis_offsets(a, b)
        if metric == "euclidean":
            return math.sqrt(sum(o * o for o in offsets))
        if metric == "chebyshev":
            return float(max(offsets))
        raise ValueError(f"unknown metric {metric!r}")

    def region(self, sites: Iterable[int]) -> "Region":
        return Region(self, sites)

    def all(self) -> "Region":
        return Region(self, range(self.n_sites))

    def empty(self) -> "Region":
        return Region(self, ())

    def rectangle(self, origin: Iterable[int], shape: Iterable[int]) -> "Region":
        origin, shape = tuple(origin), tuple(shape)
        ranges = [range(o, o + s) for o, s in zip(origin, shape)]
        return Region(self, (self.site(c) for c in itertools.product(*ranges)))


@dataclass(frozen=True)
class Region:
    lattice: Lattice
    sites: tuple[int, ...]

    def __init__(self, lattice: Lattice, sites: Iterable[int]):
        sites = tuple(sorted({int(s) for s in sites}))
        for s in sites:
            if not 0 <= s < lattice.n_sites:
                raise ValueError(f"site {s} outside lattice of {lattice.n_sites} sites")
        object.__setattr__(self, "lattice", lattice)
        object.__setattr__(self, "sites", sites)

    def __iter__(self):
        return iter(self.sites)

    def __len__(self):
        return len(self.sites)

    def __contains__(self, site):
        return site in self.sites

    def __bool__(self):
        return bool(self.sites)

    def _other(self, other) -> set[int]:
        if isinstance(other, Region):
            if other.lattice != self.lattice:
                raise ValueError("regions live on different lattices")
            return set(other.sites)
        return set(other)

    def __or__(self, other) -> "Region":
        return Region(self.lattice, set(self.sites) | self._other(other))

    def __and__(self, other) -> "Region":
        return Region(self.lattice, set(self.sites) & self._other(other))

    def __sub__(self, other) -> "Region":
        return Region(self.lattice, set(self.sites) - self._other(other))

    def __le__(self, other) -> bool:
        return set(self.sites) <= self._other(other)

    def complement(self) -> "Region":
        return self.lattice.all() - self

    def to_json(self) -> list[int]:
        return list(self.sites)

    def __repr__(self):
        return f"Region({list(self.sites)})"


def euclidean_distance(A: Region, B: Region, metric: str = "euclidean") -> float:
    """Minimum site-to-site distance between two non-empty regions."""
    if not A or not B:
        raise ValueError("distance is undefined for an empty region")
    lat = A.lattice
    return min(lat.site_distance(a, b, metric) for a in A for b in B)


def neighborhood(A: Region, radius: float, metric: str = "euclidean") -> Region:
    """Sites within `radius` of A (A itself for radius 0)."""
    lat = A.lattice
    if not A:
        return A
    return Region(lat, (s for s in range(lat.n_sites)
                        if min(lat.site_distance(s, a, metric) for a in A) <= radius + 1e-12))


def boundary(A: Region, supports: Mapping[int, Iterable[int]]) -> Region:
    """Outer boundary: term indices outside A whose support meets A."""
    inside = set(A.sites)
    return Region(A.lattice, (j for j, supp in supports.items()
                              if j not in inside and inside.intersection(supp)))


def closure(A: Region, supports: Mapping[int, Iterable[int]]) -> Region:
    """A together with its outer boundary."""
    return A | boundary(A, supports)


def rectangle_class(side_lengths: Iterable[int]) -> int:
    """Smallest k with the rectangle in R_k: sorted sides bounded by l_{k+1}..l_{k+d}."""
    sides = sorted(side_lengths)
    d = len(sides)
    k = 0
    while True:
        ls = [1.5 ** ((k + i) / d) for i in range(1, d + 1)]
        if all(s <= l + 1e-9 for s, l in zip(sides, ls)):
            return k
        k += 1


def decomposition_sequence(C: Region, k: int | None = None, n_pairs: int | None = None,
                           overlap: int | None = None) -> list[tuple[Region, Region]]:
    """Split a rectangle C into pairs (A_i, B_i) along its longest axis.

    By default k is the rectangle's class, the number of pairs is floor(l_k^(1/3))
    and the overlap width is ceil(sqrt(l_k)/8) with l_k = 1.5^(k/d). Both can be
    overridden. The three geometric conditions are re-checked on the output.
    """
    lat = C.lattice
    if not C:
        raise ValueError("cannot decompose an empty region")
    coords = [lat.coords(s) for s in C]
    lo = [min(c[a] for c in coords) for a in range(lat.dims)]
    hi = [max(c[a] for c in coords) for a in range(lat.dims)]
    shape = [h - l + 1 for l, h in zip(lo, hi)]
    if math.prod(shape) != len(C):
        raise ValueError("region is not a rectangle")
    if k is None:
        k = rectangle_class(shape)
    l_k = 1.5 ** (k / lat.dims)
    s = n_pairs if n_pairs is not None else math.floor(l_k ** (1 / 3))
    w = overlap if overlap is not None else max(1, math.ceil(math.sqrt(l_k) / 8))
    axis = max(range(lat.dims), key=lambda a: shape[a])
    b = shape[axis]
    minimal = 4 * max(s, 1) * w + 1
    if s < 1 or b < minimal:
        raise ValueError(f"rectangle side {b} too small for {max(s, 1)} strip(s) of width {w}; "
                         f"minimal admissible side is {minimal}")
    mid = b // 2

    def slab(start, stop):
        return Region(lat, (site for site, c in zip(C.sites, coords)
                            if start <= c[axis] - lo[axis] < stop))

    pairs = []
    for i in range(1, s + 1):
        A = slab(0, mid + 2 * i * w)
        B = slab(mid + (2 * i - 1) * w, b)
        pairs.append((A, B))
    check_decomposition(C, pairs, math.sqrt(l_k) / 8)
    return pairs


def check_decomposition(C: Region, pairs, min_distance: float) -> None:
    for A, B in pairs:
        if (A | B) != C:
            raise AssertionError("pair does not cover the rectangle")
        if euclidean_distance(C - A, C - B) < min_distance:
            raise AssertionError("pair separation below the required distance")
    overlaps = [A & B for A, B in pairs]
    for i, j in itertools.combinations(range(len(overlaps)), 2):
        if overlaps[i] & overlaps[j]:
            raise AssertionError("overlap strips are not pairwise disjoint")
