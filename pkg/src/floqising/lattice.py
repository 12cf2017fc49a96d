"""Periodic rectangular lattices: indexing, bonds, gate layers and symmetries."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import check_int
from .exceptions import InputDomainError


@dataclass(frozen=True)
class SitePermutation:
    """A bijection of lattice sites, stored as ``map[source] = target``."""

    map: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.map) != list(range(len(self.map))):
            raise InputDomainError("site permutation must be a bijection on 0..N-1")

    def __call__(self, site: int) -> int:
        return self.map[site]

    def __len__(self):
        return len(self.map)

    def compose(self, other: "SitePermutation") -> "SitePermutation":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return SitePermutation(tuple(self.map[j] for j in other.map))

    def inverse(self) -> "SitePermutation":
        inv = [0] * len(self.map)
        for src, dst in enumerate(self.map):
            inv[dst] = src
        return SitePermutation(tuple(inv))

    @property
    def is_identity(self) -> bool:
        return all(i == j for i, j in enumerate(self.map))


@dataclass(frozen=True)
class Lattice:
    """An ``nx`` by ``ny`` torus with sites numbered ``ix + iy * nx``.

    Axes of length 2 are accepted; their forward and wraparound bonds
    coincide and are stored once, so such sites have fewer than four
    distinct neighbours.
    """

    nx: int
    ny: int

    def __post_init__(self):
        check_int(self.nx, "nx", minimum=2)
        check_int(self.ny, "ny", minimum=2)

    @classmethod
    def from_dict(cls, doc) -> "Lattice":
        return cls(int(doc["nx"]), int(doc["ny"]))

    def to_dict(self):
        return {"nx": self.nx, "ny": self.ny}

    @property
    def n_sites(self) -> int:
        return self.nx * self.ny

    def site_index(self, ix: int, iy: int) -> int:
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise InputDomainError(f"coordinates ({ix}, {iy}) outside {self.nx}x{self.ny} lattice")
        return ix + iy * self.nx

    def coords(self, i: int) -> tuple[int, int]:
        self._check_site(i)
        return i % self.nx, i // self.nx

    def _check_site(self, i):
        if not (0 <= i < self.n_sites):
            raise InputDomainError(f"site {i} outside 0..{self.n_sites - 1}")

    def _wrap(self, ix, iy):
        return (ix % self.nx) + (iy % self.ny) * self.nx

    def neighbors(self, i: int) -> list[int]:
        """Distinct nearest neighbours of site ``i`` in (+x, -x, +y, -y) order."""
        ix, iy = self.coords(i)
        out = []
        for j in (
            self._wrap(ix + 1, iy),
            self._wrap(ix - 1, iy),
            self._wrap(ix, iy + 1),
            self._wrap(ix, iy - 1),
        ):
            if j not in out:
                out.append(j)
        return out

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        """All bonds as sorted pairs: horizontal bonds first, then vertical."""
        seen = set()
        out = []
        for step in ((1, 0), (0, 1)):
            for i in range(self.n_sites):
                ix, iy = i % self.nx, i // self.nx
                j = self._wrap(ix + step[0], iy + step[1])
                e = (min(i, j), max(i, j))
                if e not in seen:
                    seen.add(e)
                    out.append(e)
        return tuple(out)

    @cached_property
    def edge_layers(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Partition of :attr:`edges` into layers of disjoint bonds."""
        if self.nx >= 3 and self.ny >= 3:
            if self.nx % 2 == 0 and self.ny % 2 == 0:
                layers = self._even_even_layers()
            elif self.ny % 2 == 0:
                layers = self._prism_layers(transpose=False)
            elif self.nx % 2 == 0:
                layers = self._prism_layers(transpose=True)
            else:
                layers = _greedy_edge_coloring(self.edges, self._even_axis_seed())
        else:
            layers = _greedy_edge_coloring(self.edges, [])
        return tuple(tuple(sorted(layer)) for layer in layers if layer)

    def _bond(self, ix, iy, dx, dy):
        i = self._wrap(ix, iy)
        j = self._wrap(ix + dx, iy + dy)
        return (min(i, j), max(i, j))

    def _even_even_layers(self):
        layers = [[], [], [], []]
        for iy in range(self.ny):
            for ix in range(self.nx):
                layers[ix % 2].append(self._bond(ix, iy, 1, 0))
                layers[2 + iy % 2].append(self._bond(ix, iy, 0, 1))
        return layers

    def _prism_layers(self, transpose):
        # Odd cycles along one axis, even along the other: pair the even axis
        # into prisms C_odd x K2, 3-colour each prism, give the rest colour 3.
        n_odd, n_even = (self.ny, self.nx) if transpose else (self.nx, self.ny)

        def bond(a, b, da, db):
            return self._bond(b, a, db, da) if transpose else self._bond(a, b, da, db)

        layers = [[], [], [], []]
        for b in range(n_even):
            for a in range(n_odd):
                color = 2 if a == n_odd - 1 else a % 2
                layers[color].append(bond(a, b, 1, 0))
            if b % 2 == 0:
                for a in range(n_odd):
                    if a == 0:
                        color = 1
                    elif a == n_odd - 1:
                        color = 0
                    else:
                        color = 2
                    layers[color].append(bond(a, b, 0, 1))
            else:
                for a in range(n_odd):
                    layers[3].append(bond(a, b, 0, 1))
        return layers

    def _even_axis_seed(self):
        seed = []
        if self.nx % 2 == 0:
            for parity in (0, 1):
                seed.append([self._bond(ix, iy, 1, 0) for iy in range(self.ny) for ix in range(parity, self.nx, 2)])
        if self.ny % 2 == 0:
            for parity in (0, 1):
                seed.append([self._bond(ix, iy, 0, 1) for ix in range(self.nx) for iy in range(parity, self.ny, 2)])
        return seed

    @cached_property
    def symmetry_group(self) -> tuple[SitePermutation, ...]:
        """Translations composed with identity, inversion and both reflections."""
        point_ops = (
            lambda ix, iy: (ix, iy),
            lambda ix, iy: (-ix, -iy),
            lambda ix, iy: (ix, -iy),
            lambda ix, iy: (-ix, iy),
        )
        seen = set()
        out = []
        for op in point_ops:
            for ty in range(self.ny):
                for tx in range(self.nx):
                    perm = []
                    for i in range(self.n_sites):
                        ix, iy = op(i % self.nx, i // self.nx)
                        perm.append(self._wrap(ix + tx, iy + ty))
                    key = tuple(perm)
                    if key not in seen:
                        seen.add(key)
                        out.append(SitePermutation(key))
        return tuple(out)

    @cached_property
    def symmetry_array(self) -> np.ndarray:
        """``symmetry_group`` as a ``(G, N)`` integer array."""
        return np.array([g.map for g in self.symmetry_group], dtype=np.int64)

    def column_of(self) -> np.ndarray:
        return np.arange(self.n_sites) % self.nx


def _greedy_edge_coloring(edges, seed_layers):
    """Greedy proper edge colouring, starting from given disjoint matchings."""
    layers = [list(layer) for layer in seed_layers]
    used = [set(v for e in layer for v in e) for layer in layers]
    placed = set(e for layer in layers for e in layer)
    for e in edges:
        if e in placed:
            continue
        for k, occupied in enumerate(used):
            if e[0] not in occupied and e[1] not in occupied:
                layers[k].append(e)
                occupied.update(e)
                break
        else:
            layers.append([e])
            used.append(set(e))
    return layers
