"""Bit-packed Pauli strings.

A string on ``n`` qubits is stored as two integer masks ``z`` and ``x``; bit
``q`` of each mask says whether qubit ``q`` carries a Z or X factor, and a
qubit with both bits set carries Y.  Strings are always the Hermitian tensor
product of I, X, Y, Z; any phase produced by multiplication is returned
separately as a power of ``i``.

Labels are written with qubit 0 first, so ``"XZ"`` is X on qubit 0 and Z on
qubit 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import sparse

from .exceptions import InputDomainError

_LETTERS = "IXYZ"
# (x bit, z bit) for each letter
_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_LETTER_OF = {bits: letter for letter, bits in _BITS.items()}

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _popcount(v: int) -> int:
    return bin(v).count("1")


def product_phase(z1: int, x1: int, z2: int, x2: int) -> int:
    """Power ``k`` such that ``P1 P2 = i**k P3`` for Hermitian strings."""
    y1, xo1, zo1 = z1 & x1, x1 & ~z1, z1 & ~x1
    y2, xo2, zo2 = z2 & x2, x2 & ~z2, z2 & ~x2
    plus = _popcount(y1 & zo2) + _popcount(xo1 & y2) + _popcount(zo1 & xo2)
    minus = _popcount(y1 & xo2) + _popcount(xo1 & zo2) + _popcount(zo1 & y2)
    return (plus - minus) % 4


@dataclass(frozen=True, order=True)
class PauliString:
    """A Hermitian Pauli string on ``n`` qubits."""

    z: int
    x: int
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise InputDomainError("Pauli string needs at least one qubit")
        limit = 1 << self.n
        if not (0 <= self.z < limit and 0 <= self.x < limit):
            raise InputDomainError("mask has bits outside the qubit range")

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        z = x = 0
        for q, ch in enumerate(label.upper()):
            if ch not in _BITS:
                raise InputDomainError(f"bad Pauli letter {ch!r} in {label!r}")
            xb, zb = _BITS[ch]
            x |= xb << q
            z |= zb << q
        return cls(z, x, len(label))

    @classmethod
    def single(cls, n: int, site: int, letter: str) -> "PauliString":
        return cls.from_sites(n, {site: letter})

    @classmethod
    def from_sites(cls, n: int, letters: dict) -> "PauliString":
        z = x = 0
        for q, ch in letters.items():
            xb, zb = _BITS[ch.upper()]
            x |= xb << q
            z |= zb << q
        return cls(z, x, n)

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls(0, 0, n)

    def letter(self, q: int) -> str:
        return _LETTER_OF[((self.x >> q) & 1, (self.z >> q) & 1)]

    @property
    def label(self) -> str:
        return "".join(self.letter(q) for q in range(self.n))

    def __str__(self):
        return self.label

    @property
    def weight(self) -> int:
        return _popcount(self.z | self.x)

    @property
    def is_identity(self) -> bool:
        return self.z == 0 and self.x == 0

    def commutes(self, other: "PauliString") -> bool:
        return (_popcount(self.z & other.x) + _popcount(self.x & other.z)) % 2 == 0

    def multiply(self, other: "PauliString") -> tuple[int, "PauliString"]:
        """Return ``(k, R)`` with ``self @ other == i**k * R``."""
        self._check_same(other)
        k = product_phase(self.z, self.x, other.z, other.x)
        return k, PauliString(self.z ^ other.z, self.x ^ other.x, self.n)

    def _check_same(self, other):
        if other.n != self.n:
            raise InputDomainError(f"qubit counts differ: {self.n} vs {other.n}")

    def permute(self, perm) -> "PauliString":
        """Move the factor on qubit ``q`` to qubit ``perm[q]``."""
        z = x = 0
        for q in range(self.n):
            t = perm[q]
            z |= ((self.z >> q) & 1) << t
            x |= ((self.x >> q) & 1) << t
        return PauliString(z, x, self.n)

    def to_matrix(self) -> np.ndarray:
        """Dense matrix in the little-endian basis (qubit 0 is bit 0)."""
        out = np.array([[1.0 + 0j]])
        for q in reversed(range(self.n)):
            out = np.kron(out, PAULI_MATRICES[self.letter(q)])
        return out

    def to_sparse(self) -> sparse.csr_matrix:
        return pauli_sparse(self.z, self.x, self.n)


def pauli_sparse(z: int, x: int, n: int) -> sparse.csr_matrix:
    """Sparse matrix of a Hermitian Pauli string.

    Uses ``P|b> = i^{|z&x|} (-1)^{|b&z|} |b^x>``, which follows from
    ``Y = i X Z`` on each qubit.
    """
    dim = 1 << n
    b = np.arange(dim, dtype=np.int64)
    signs = 1 - 2 * (np.bitwise_count(b & z) & 1).astype(np.int64)
    vals = (1j ** (_popcount(z & x) % 4)) * signs
    return sparse.csr_matrix((vals, (b ^ x, b)), shape=(dim, dim))


TWO_QUBIT_LABELS = tuple(a + b for a, b in product(_LETTERS, repeat=2))
"""The 16 two-qubit labels, identity first."""

NONTRIVIAL_TWO_QUBIT_LABELS = TWO_QUBIT_LABELS[1:]


def commutation_table(labels=TWO_QUBIT_LABELS) -> np.ndarray:
    """``T[i, j] = 1`` when ``labels[i]`` anticommutes with ``labels[j]``."""
    ps = [PauliString.from_label(lab) for lab in labels]
    return np.array([[0 if a.commutes(b) else 1 for b in ps] for a in ps], dtype=np.int64)
