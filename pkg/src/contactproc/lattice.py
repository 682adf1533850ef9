"""Site groups and translation-invariant infection kernels.

Three group families are supported:

* ``IntegerLattice(d)``: sites are integer d-tuples, group law is addition.
* ``Torus(n, d)``: d-tuples with coordinates in ``[0, n)``, addition mod n.
* ``FreeGroup(k)``: reduced words over generators ``a, b, ...`` with the
  capital letters as inverses. Its Cayley graph is the 2k-regular tree.

A kernel stores the rates ``a(0, i)`` out of the origin; every other rate is
obtained by translation, ``a(i, j) = a(0, i^-1 j)``.
"""

from __future__ import annotations

import itertools
import string
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import CapacityError, UsageError

Site = Union[tuple, str]

MAX_ENUMERATED_SITES = 20
_LOWER = string.ascii_lowercase


@dataclass(frozen=True)
class IntegerLattice:
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise UsageError(f"lattice dimension must be >= 1, got {self.d}")

    @property
    def identity(self) -> tuple:
        return (0,) * self.d

    @property
    def is_finite(self) -> bool:
        return False

    def is_site(self, x) -> bool:
        return (isinstance(x, tuple) and len(x) == self.d
                and all(isinstance(c, (int, np.integer)) for c in x))

    def canonical(self, x) -> tuple:
        if isinstance(x, (int, np.integer)) and self.d == 1:
            x = (int(x),)
        x = tuple(int(c) for c in x)
        if len(x) != self.d:
            raise UsageError(f"site {x} has wrong dimension for {self}")
        return x

    def mul(self, x: tuple, y: tuple) -> tuple:
        return tuple(a + b for a, b in zip(x, y))

    def inv(self, x: tuple) -> tuple:
        return tuple(-a for a in x)

    def label(self) -> str:
        return f"z:{self.d}"


@dataclass(frozen=True)
class Torus:
    n: int
    d: int = 1

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise UsageError(f"torus needs n >= 1 and d >= 1, got n={self.n}, d={self.d}")

    @property
    def identity(self) -> tuple:
        return (0,) * self.d

    @property
    def is_finite(self) -> bool:
        return True

    @property
    def size(self) -> int:
        return self.n ** self.d

    def is_site(self, x) -> bool:
        return (isinstance(x, tuple) and len(x) == self.d
                and all(isinstance(c, (int, np.integer)) and 0 <= c < self.n for c in x))

    def canonical(self, x) -> tuple:
        if isinstance(x, (int, np.integer)) and self.d == 1:
            x = (int(x),)
        x = tuple(int(c) for c in x)
        if len(x) != self.d:
            raise UsageError(f"site {x} has wrong dimension for {self}")
        return tuple(c % self.n for c in x)

    def mul(self, x: tuple, y: tuple) -> tuple:
        return tuple((a + b) % self.n for a, b in zip(x, y))

    def inv(self, x: tuple) -> tuple:
        return tuple((-a) % self.n for a in x)

    def label(self) -> str:
        return f"torus:{self.n}x{self.d}"


@dataclass(frozen=True)
class FreeGroup:
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= 11:
            raise UsageError(f"free group needs 1 <= k <= 11 generators, got {self.k}")

    @property
    def identity(self) -> str:
        return ""

    @property
    def is_finite(self) -> bool:
        return False

    @property
    def letters(self) -> str:
        return _LOWER[: self.k] + _LOWER[: self.k].upper()

    def is_site(self, x) -> bool:
        if not isinstance(x, str) or any(c not in self.letters for c in x):
            return False
        return all(a != b.swapcase() for a, b in zip(x, x[1:]))

    def canonical(self, x) -> str:
        if not isinstance(x, str) or any(c not in self.letters for c in x):
            raise UsageError(f"{x!r} is not a word over {self.letters!r}")
        return self.mul("", x)

    def mul(self, x: str, y: str) -> str:
        out = list(x)
        for c in y:
            if out and out[-1] == c.swapcase():
                out.pop()
            else:
                out.append(c)
        return "".join(out)

    def inv(self, x: str) -> str:
        return x[::-1].swapcase()

    def label(self) -> str:
        return f"free:{self.k}"


GroupSpec = Union[IntegerLattice, Torus, FreeGroup]


def parse_group(text: str) -> GroupSpec:
    """Parse ``z:D``, ``torus:NxD`` (or ``torus:N``) and ``free:K``."""
    kind, _, arg = text.strip().partition(":")
    kind = kind.lower()
    try:
        if kind in ("z", "lattice", "zd"):
            return IntegerLattice(int(arg or 1))
        if kind == "torus":
            n, _, d = arg.partition("x")
            return Torus(int(n), int(d or 1))
        if kind in ("free", "tree"):
            return FreeGroup(int(arg))
    except ValueError as exc:
        raise UsageError(f"bad group spec {text!r}: {exc}") from None
    raise UsageError(f"unknown group kind in {text!r}; use z:D, torus:NxD or free:K")


def unit_offsets(group: GroupSpec) -> list:
    """Generators and their inverses, i.e. the nearest-neighbour offsets."""
    if isinstance(group, FreeGroup):
        return list(group.letters)
    out = []
    for axis in range(group.d):
        for sign in (1, -1):
            e = [0] * group.d
            e[axis] = sign
            out.append(group.canonical(tuple(e)))
    return out


@dataclass(frozen=True, eq=False)
class InfectionKernel:
    """Translation-invariant infection rates ``a(0, i)`` with finite support.

    Entries with rate 0 are dropped. The zero kernel must be requested with
    ``allow_zero=True`` (or :meth:`zero`).
    """

    group: GroupSpec
    base: Mapping
    allow_zero: bool = False
    total: float = field(init=False)

    def __post_init__(self):
        clean = {}
        for site, rate in dict(self.base).items():
            site = self.group.canonical(site)
            rate = float(rate)
            if not np.isfinite(rate) or rate < 0:
                raise UsageError(f"rate for {site!r} must be finite and >= 0, got {rate}")
            if site == self.group.identity:
                if rate > 0:
                    raise UsageError("a(0, 0) must be 0: self-infection is not allowed")
                continue
            if rate > 0:
                clean[site] = clean.get(site, 0.0) + rate
        if not clean and not self.allow_zero:
            raise UsageError("empty kernel; pass allow_zero=True for the zero kernel")
        ordered = dict(sorted(clean.items(), key=lambda kv: _site_sort_key(kv[0])))
        object.__setattr__(self, "base", ordered)
        object.__setattr__(self, "total", float(sum(ordered.values())))

    @classmethod
    def zero(cls, group: GroupSpec) -> "InfectionKernel":
        return cls(group, {}, allow_zero=True)

    @classmethod
    def nearest_neighbor(cls, group: GroupSpec, rate: float) -> "InfectionKernel":
        """Rate ``rate`` to every distinct neighbour in the Cayley graph.

        On ``Torus(2, d)`` the offsets +e and -e coincide, so each neighbour is
        counted once.
        """
        return cls(group, {s: rate for s in dict.fromkeys(unit_offsets(group))},
                   allow_zero=rate == 0)

    @classmethod
    def from_pairs(cls, group: GroupSpec, pairs: Iterable[Sequence]) -> "InfectionKernel":
        """Build from ``[offset-or-word, rate]`` pairs; duplicate sites add up."""
        base: dict = {}
        for item in pairs:
            if len(item) != 2:
                raise UsageError(f"kernel entry must be [offset, rate], got {item!r}")
            off, rate = item
            if isinstance(group, FreeGroup):
                site = group.canonical(off)
            else:
                site = group.canonical(tuple(off) if isinstance(off, (list, tuple)) else off)
            base[site] = base.get(site, 0.0) + float(rate)
        return cls(group, base, allow_zero=not any(float(r) > 0 for _, r in base.items()))

    @property
    def is_zero(self) -> bool:
        return not self.base

    def items(self):
        return self.base.items()

    def to_pairs(self) -> list:
        out = []
        for site, rate in self.base.items():
            out.append([site if isinstance(site, str) else list(site), rate])
        return out

    def __eq__(self, other):
        if not isinstance(other, InfectionKernel):
            return NotImplemented
        return self.group == other.group and self.base == other.base

    def __hash__(self):
        return hash((self.group, tuple(self.base.items())))

    def __repr__(self):
        return f"InfectionKernel({self.group.label()}, {self.base})"


def _site_sort_key(site):
    if isinstance(site, str):
        return (len(site), site)
    return (sum(abs(c) for c in site), site)


def _check_site(group: GroupSpec, x):
    if isinstance(x, (int, np.integer)) and not isinstance(group, FreeGroup) and group.d == 1:
        x = (int(x),)
    if not group.is_site(x):
        raise UsageError(f"{x!r} is not a site of {group.label()}")
    return x


def rate(kernel: InfectionKernel, i: Site, j: Site) -> float:
    """Infection rate ``a(i, j) = a(0, i^-1 j)``."""
    g = kernel.group
    i, j = _check_site(g, i), _check_site(g, j)
    return kernel.base.get(g.mul(g.inv(i), j), 0.0)


def reverse(kernel: InfectionKernel) -> InfectionKernel:
    """The reversed kernel ``a†(i, j) = a(j, i)``, i.e. ``a†(0, i) = a(0, i^-1)``."""
    g = kernel.group
    return InfectionKernel(g, {g.inv(s): r for s, r in kernel.base.items()}, allow_zero=True)


@dataclass(frozen=True)
class SiteIndex:
    """Enumeration of a finite torus.

    ``sites[k]`` is the k-th site (origin first) and ``translate[k, i]`` is the
    index of ``sites[k] * sites[i]``, so each row is a permutation.
    """

    group: Torus
    sites: tuple
    index: Mapping
    translate: np.ndarray

    def __len__(self):
        return len(self.sites)

    def mask_of(self, sites: Iterable) -> int:
        m = 0
        for s in sites:
            m |= 1 << self.index[self.group.canonical(s)]
        return m

    def sites_of(self, mask: int) -> list:
        return [s for k, s in enumerate(self.sites) if mask >> k & 1]


def enumerate_sites(group: GroupSpec) -> SiteIndex:
    if not isinstance(group, Torus):
        raise CapacityError(f"{group.label()} is infinite; only tori can be enumerated")
    if group.size > MAX_ENUMERATED_SITES:
        raise CapacityError(
            f"{group.label()} has {group.size} sites, cap is {MAX_ENUMERATED_SITES}")
    # product() in lexicographic order starts at the origin
    sites = tuple(itertools.product(range(group.n), repeat=group.d))
    index = {s: k for k, s in enumerate(sites)}
    translate = np.array([[index[group.mul(k, i)] for i in sites] for k in sites],
                         dtype=np.int64)
    return SiteIndex(group, sites, index, translate)
