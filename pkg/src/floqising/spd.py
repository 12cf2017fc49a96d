"""Sparse Pauli dynamics: Heisenberg-picture evolution of Pauli sums.

An observable ``O = sum_P a_P P`` is pushed backwards through the Trotter
circuit one Pauli rotation at a time.  A rotation ``exp(-i theta sigma / 2)``
leaves commuting strings alone and splits an anticommuting ``P`` into
``cos(theta) P + i sin(theta) sigma P``.  Small coefficients and heavy strings
are dropped, and strings related by a lattice symmetry are merged.

Masks are stored as ``(M, W)`` arrays of ``uint64`` words so that lattices
with more than 64 sites work unchanged.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, check_real
from .circuit import QuenchSpec
from .exceptions import InputDomainError, SaturationWarning
from .lattice import Lattice
from .pauli import PauliString

_U64_MAX = np.iinfo(np.uint64).max
_ONE = np.uint64(1)


def _n_words(n: int) -> int:
    return (n + 63) // 64


def _int_to_words(v: int, n_words: int) -> np.ndarray:
    return np.array([(v >> (64 * w)) & 0xFFFFFFFFFFFFFFFF for w in range(n_words)], dtype=np.uint64)


def _words_to_int(words) -> int:
    return sum(int(w) << (64 * k) for k, w in enumerate(words))


def _bit(masks: np.ndarray, q: int) -> np.ndarray:
    return (masks[:, q // 64] >> np.uint64(q % 64)) & _ONE


def _popcount_rows(masks: np.ndarray) -> np.ndarray:
    return np.bitwise_count(masks).sum(axis=1, dtype=np.int64)


def product_phase_arrays(z1, x1, z2, x2) -> np.ndarray:
    """Vectorised power of ``i`` in ``P1 P2 = i^k P3`` for ``(M, W)`` mask arrays."""
    y1, xo1, zo1 = z1 & x1, x1 & ~z1, z1 & ~x1
    y2, xo2, zo2 = z2 & x2, x2 & ~z2, z2 & ~x2
    plus = _popcount_rows(y1 & zo2) + _popcount_rows(xo1 & y2) + _popcount_rows(zo1 & xo2)
    minus = _popcount_rows(y1 & xo2) + _popcount_rows(xo1 & zo2) + _popcount_rows(zo1 & y2)
    return (plus - minus) % 4


_I_POWERS = np.array([1, 1j, -1, -1j])


@dataclass(frozen=True)
class Rotation:
    """``exp(-i angle sigma / 2)`` with ``sigma`` an ``X`` on one site or ``ZZ`` on an edge."""

    kind: str
    sites: tuple[int, ...]
    angle: float

    def __post_init__(self):
        if self.kind == "X" and len(self.sites) == 1:
            return
        if self.kind == "ZZ" and len(self.sites) == 2 and self.sites[0] != self.sites[1]:
            return
        raise InputDomainError(f"unsupported rotation generator {self.kind} on {self.sites}")

    def generator(self, n: int) -> PauliString:
        return PauliString.from_sites(n, {q: "Z" if self.kind == "ZZ" else "X" for q in self.sites})


@dataclass
class PauliSum:
    """``sum_k coef[k] * P_k`` with bit-packed masks.

    ``group`` is an optional ``(G, N)`` array of site permutations; when set,
    stored strings are orbit representatives and each coefficient is the sum
    over all orbit members that were merged into it.
    """

    n: int
    z: np.ndarray
    x: np.ndarray
    coef: np.ndarray
    group: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        w = _n_words(self.n)
        self.z = np.ascontiguousarray(self.z, dtype=np.uint64).reshape(-1, w)
        self.x = np.ascontiguousarray(self.x, dtype=np.uint64).reshape(-1, w)
        self.coef = np.asarray(self.coef, dtype=complex).reshape(-1)
        if not (self.z.shape == self.x.shape and self.z.shape[0] == self.coef.size):
            raise InputDomainError("mask and coefficient arrays disagree in length")

    @classmethod
    def from_terms(cls, n: int, terms, group=None) -> "PauliSum":
        """Build from ``(coefficient, PauliString)`` pairs, merging duplicates."""
        w = _n_words(n)
        terms = list(terms)
        z = np.array([_int_to_words(p.z, w) for _, p in terms], dtype=np.uint64).reshape(-1, w)
        x = np.array([_int_to_words(p.x, w) for _, p in terms], dtype=np.uint64).reshape(-1, w)
        coef = np.array([c for c, _ in terms], dtype=complex)
        out = cls(n, z, x, coef, group)
        if group is not None:
            out.z, out.x = canonicalize_masks(out.z, out.x, n, group)
        out.z, out.x, out.coef = _merge(out.z, out.x, out.coef)
        return out

    @classmethod
    def identity(cls, n: int, coef: complex = 1.0) -> "PauliSum":
        return cls.from_terms(n, [(coef, PauliString.identity(n))])

    def __len__(self) -> int:
        return self.coef.size

    def copy(self) -> "PauliSum":
        return PauliSum(self.n, self.z.copy(), self.x.copy(), self.coef.copy(), self.group)

    def terms(self):
        for k in range(len(self)):
            yield complex(self.coef[k]), PauliString(_words_to_int(self.z[k]), _words_to_int(self.x[k]), self.n)

    def to_dict(self) -> dict:
        return {p.label: c for c, p in self.terms()}

    @property
    def weights(self) -> np.ndarray:
        return _popcount_rows(self.z | self.x)

    def to_matrix(self) -> np.ndarray:
        """Dense matrix; only for small ``n`` and only meaningful without symmetry merging."""
        dim = 1 << self.n
        out = np.zeros((dim, dim), dtype=complex)
        for c, p in self.terms():
            out += c * p.to_sparse().toarray()
        return out


def _single_keys(z: np.ndarray, x: np.ndarray, n: int) -> np.ndarray | None:
    """One ``uint64`` sort key per string when both masks fit in 32 bits."""
    if n > 32:
        return None
    return (z[:, 0] << np.uint64(32)) | x[:, 0]


def _merge(z, x, coef):
    """Sort by ``(z, x)`` and add coefficients of identical strings."""
    if coef.size == 0:
        return z, x, coef
    if z.shape[1] == 1 and not np.any((z | x) >> np.uint64(32)):
        order = np.argsort((z[:, 0] << np.uint64(32)) | x[:, 0], kind="stable")
    else:
        keys = [x[:, w] for w in range(x.shape[1])] + [z[:, w] for w in range(z.shape[1])]
        order = np.lexsort(keys)
    z, x, coef = z[order], x[order], coef[order]
    new = np.ones(coef.size, dtype=bool)
    new[1:] = np.any(z[1:] != z[:-1], axis=1) | np.any(x[1:] != x[:-1], axis=1)
    starts = np.flatnonzero(new)
    return z[starts], x[starts], np.add.reduceat(coef, starts)


def _byte_tables(group: np.ndarray, n: int) -> np.ndarray:
    """``T[g, b, v]``: words of the image under ``g`` of byte value ``v`` placed at byte ``b``."""
    n_bytes, n_words = (n + 7) // 8, _n_words(n)
    vals = np.arange(256)
    tables = np.zeros((group.shape[0], n_bytes, 256, n_words), dtype=np.uint64)
    for b in range(n_bytes):
        for j in range(8):
            q = 8 * b + j
            if q >= n:
                break
            on = ((vals >> j) & 1).astype(np.uint64)
            for g, target in enumerate(group[:, q]):
                tables[g, b, :, target // 64] |= on << np.uint64(target % 64)
    return tables


_TABLE_CACHE: dict = {}


def _tables_for(group: np.ndarray, n: int) -> np.ndarray:
    key = (n, group.tobytes())
    if key not in _TABLE_CACHE:
        if len(_TABLE_CACHE) > 8:
            _TABLE_CACHE.clear()
        _TABLE_CACHE[key] = _byte_tables(group, n)
    return _TABLE_CACHE[key]


def _permute_masks(masks: np.ndarray, table: np.ndarray) -> np.ndarray:
    out = np.zeros_like(masks)
    for b in range(table.shape[0]):
        byte = (masks[:, b // 8] >> np.uint64(8 * (b % 8))) & np.uint64(0xFF)
        out |= table[b][byte.astype(np.intp)]
    return out


def _lex_less(z1, x1, z2, x2) -> np.ndarray:
    """Row-wise ``(z1, x1) < (z2, x2)`` comparing the most significant word first."""
    less = np.zeros(z1.shape[0], dtype=bool)
    undecided = np.ones(z1.shape[0], dtype=bool)
    cols = [(z1[:, w], z2[:, w]) for w in reversed(range(z1.shape[1]))]
    cols += [(x1[:, w], x2[:, w]) for w in reversed(range(x1.shape[1]))]
    for a, b in cols:
        less |= undecided & (a < b)
        undecided &= a == b
    return less


def canonicalize_masks(z: np.ndarray, x: np.ndarray, n: int, group: np.ndarray):
    """Replace every string by the orbit element with the smallest ``(z, x)`` encoding."""
    group = np.asarray(group, dtype=np.int64)
    if z.shape[0] == 0:
        return z, x
    tables = _tables_for(group, n)
    best_z, best_x = z.copy(), x.copy()
    for g in range(group.shape[0]):
        pz = _permute_masks(z, tables[g])
        px = _permute_masks(x, tables[g])
        better = _lex_less(pz, px, best_z, best_x)
        best_z[better] = pz[better]
        best_x[better] = px[better]
    return best_z, best_x


def canonicalize(p: PauliString, group) -> PauliString:
    """Orbit representative of ``p`` under a ``(G, N)`` permutation array or a lattice group."""
    if isinstance(group, Lattice):
        group = group.symmetry_array
    w = _n_words(p.n)
    z, x = canonicalize_masks(_int_to_words(p.z, w)[None], _int_to_words(p.x, w)[None], p.n, np.asarray(group))
    return PauliString(_words_to_int(z[0]), _words_to_int(x[0]), p.n)


def orbit_size(p: PauliString, group) -> int:
    if isinstance(group, Lattice):
        group = group.symmetry_array
    return len({p.permute(perm) for perm in np.asarray(group)})


def rotate_term(p: PauliString, sigma: PauliString, theta: float) -> list[tuple[complex, PauliString]]:
    """Conjugate ``p`` by ``exp(-i theta sigma / 2)``: one term if they commute, else two."""
    if p.commutes(sigma):
        return [(1.0 + 0j, p)]
    k, q = sigma.multiply(p)
    out = [(complex(math.cos(theta)), p), (1j * math.sin(theta) * _I_POWERS[k], q)]
    return [(c, s) for c, s in out if c != 0]


@dataclass
class Truncation:
    """Drop terms with ``|a| < delta`` or weight above ``max_weight`` (``None`` = no cap)."""

    delta: float = 0.0
    max_weight: int | None = None

    def __post_init__(self):
        check_real(self.delta, "delta", minimum=0.0)
        if self.max_weight is not None:
            check_int(self.max_weight, "max_weight", minimum=0)


def apply_rotation(ps: PauliSum, rot: Rotation, trunc: Truncation = Truncation()) -> float:
    """Apply one rotation in place; returns the summed ``|a|`` of truncated terms."""
    if rot.kind == "X":
        anti = _bit(ps.z, rot.sites[0]).astype(bool)
    else:
        anti = (_bit(ps.x, rot.sites[0]) ^ _bit(ps.x, rot.sites[1])).astype(bool)
    if not anti.any():
        return 0.0
    w = _n_words(ps.n)
    sig = rot.generator(ps.n)
    sz = np.broadcast_to(_int_to_words(sig.z, w), (int(anti.sum()), w))
    sx = np.broadcast_to(_int_to_words(sig.x, w), (int(anti.sum()), w))
    za, xa = ps.z[anti], ps.x[anti]
    k = product_phase_arrays(sz, sx, za, xa)
    new_coef = ps.coef[anti] * (1j * math.sin(rot.angle)) * _I_POWERS[k]
    new_z, new_x = za ^ sz, xa ^ sx
    ps.coef = ps.coef.copy()
    ps.coef[anti] *= math.cos(rot.angle)
    keys = _single_keys(ps.z, ps.x, ps.n)
    if keys is None:
        ps.z, ps.x, ps.coef = _merge(
            np.concatenate([ps.z, new_z]), np.concatenate([ps.x, new_x]), np.concatenate([ps.coef, new_coef])
        )
    else:
        # existing terms are sorted by key, so new ones are added or inserted in place
        new_keys = _single_keys(new_z, new_x, ps.n)
        order = np.argsort(new_keys)
        new_keys, new_z, new_x, new_coef = new_keys[order], new_z[order], new_x[order], new_coef[order]
        pos = np.searchsorted(keys, new_keys)
        hit = pos < keys.size
        hit[hit] = keys[pos[hit]] == new_keys[hit]
        np.add.at(ps.coef, pos[hit], new_coef[hit])
        miss = ~hit
        ps.z = np.insert(ps.z, pos[miss], new_z[miss], axis=0)
        ps.x = np.insert(ps.x, pos[miss], new_x[miss], axis=0)
        ps.coef = np.insert(ps.coef, pos[miss], new_coef[miss])
    return truncate(ps, trunc)


def truncate(ps: PauliSum, trunc: Truncation) -> float:
    mag = np.abs(ps.coef)
    keep = (mag >= trunc.delta) & (mag > 0)
    if trunc.max_weight is not None:
        keep &= ps.weights <= trunc.max_weight
    dropped = float(mag[~keep].sum())
    if not keep.all():
        ps.z, ps.x, ps.coef = ps.z[keep], ps.x[keep], ps.coef[keep]
    return dropped


def merge_symmetric(ps: PauliSum) -> None:
    """Canonicalise every string and add coefficients within each orbit (in place)."""
    if ps.group is None:
        return
    z, x = canonicalize_masks(ps.z, ps.x, ps.n, ps.group)
    ps.z, ps.x, ps.coef = _merge(z, x, ps.coef)


# ---------------------------------------------------------------------------
# circuit rewrite


@dataclass(frozen=True)
class RotationPlan:
    """How a quench maps onto Heisenberg rotations.

    ``observable_frame`` is applied once to the observable, ``step`` is applied
    once per Trotter step (in Heisenberg order, first element first), and the
    initial product state is rotated about x by ``state_angle`` per site.
    When ``rewritten`` is false, the step list is empty and
    ``full_sequence(s)`` must be used instead.
    """

    n: int
    observable_frame: tuple[Rotation, ...]
    step: tuple[Rotation, ...]
    state_angle: float
    rewritten: bool
    spec: QuenchSpec

    @property
    def rotations_per_step(self) -> int:
        return len(self.step)

    def full_sequence(self, s: int) -> list[Rotation]:
        """Heisenberg-ordered rotations of the plain ``s``-step circuit."""
        spec = self.spec
        n = spec.n_sites
        if s == 0:
            return []
        half = [Rotation("X", (q,), spec.h * spec.dt) for q in range(n)]
        zz = [Rotation("ZZ", e, 2 * spec.J * spec.dt) for e in spec.lattice.edges]
        seq = list(half)
        for _ in range(s):
            seq += zz + half + half
        return seq[: len(seq) - n]


def rewrite_circuit(spec: QuenchSpec, *, rewrite: bool = True) -> RotationPlan:
    """Write ``U(s) = U_X(dt/2) [U_ZZ U_X(dt)]^s U_X(-dt/2)`` so each step is one ZZ and one X sweep."""
    n = spec.n_sites
    half = spec.h * spec.dt
    if not rewrite:
        return RotationPlan(n, (), (), 0.0, False, spec)
    frame = tuple(Rotation("X", (q,), half) for q in range(n))
    step = tuple(Rotation("ZZ", e, 2 * spec.J * spec.dt) for e in spec.lattice.edges)
    step += tuple(Rotation("X", (q,), 2 * half) for q in range(n))
    return RotationPlan(n, frame, step, -half, True, spec)


def bloch_vectors(theta, x_angle: float = 0.0) -> np.ndarray:
    """Bloch vectors of ``cos(t/2)|0> + sin(t/2)|1>`` after ``exp(-i x_angle X / 2)``."""
    theta = np.asarray(theta, dtype=float)
    bx, by, bz = np.sin(theta), np.zeros_like(theta), np.cos(theta)
    c, s = math.cos(x_angle), math.sin(x_angle)
    return np.stack([bx, by * c - bz * s, bz * c + by * s], axis=1)


def expectation(ps: PauliSum, bloch: np.ndarray) -> complex:
    """``sum_P a_P prod_i <P_i>`` in the product state with per-site Bloch vectors.

    With symmetry merging, each coefficient already carries its orbit sum,
    so no multiplicity factor is applied; the state must be symmetric.
    """
    bloch = np.asarray(bloch, dtype=float)
    if bloch.shape != (ps.n, 3):
        raise InputDomainError(f"need one Bloch vector per site, shape ({ps.n}, 3)")
    val = ps.coef.copy()
    for q in range(ps.n):
        zb = _bit(ps.z, q).astype(bool)
        xb = _bit(ps.x, q).astype(bool)
        factor = np.ones(len(ps))
        factor[xb & ~zb] = bloch[q, 0]
        factor[xb & zb] = bloch[q, 1]
        factor[~xb & zb] = bloch[q, 2]
        val *= factor
    return complex(val.sum())


def ztot2_sum(n: int, group=None) -> PauliSum:
    """``Z_tot^2 = (1/N^2) sum_ij Z_i Z_j`` as a Pauli sum."""
    terms = [(1.0 / n, PauliString.identity(n))]
    for i in range(n):
        for j in range(n):
            if i != j:
                terms.append((1.0 / n**2, PauliString.from_sites(n, {i: "Z", j: "Z"})))
    return PauliSum.from_terms(n, terms, group)


@dataclass
class SPDStep:
    s: int
    n_terms: int
    wall_time: float
    truncated_mass: float
    value: float


@dataclass
class SPDResult:
    """Per-step expectations and telemetry of one sparse-Pauli run."""

    values: np.ndarray
    telemetry: list[SPDStep]
    saturated: bool
    symmetry_merged: bool
    final: PauliSum | None = field(default=None, repr=False)

    @property
    def max_terms(self) -> int:
        return max(t.n_terms for t in self.telemetry)

    def write_telemetry(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "M", "wall_time", "truncated_mass"])
            for t in self.telemetry:
                w.writerow([t.s, t.n_terms, f"{t.wall_time:.6f}", repr(t.truncated_mass)])


def evolve(
    observable: PauliSum,
    spec: QuenchSpec,
    steps: int,
    *,
    truncation: Truncation = Truncation(),
    plan: RotationPlan | None = None,
    max_terms: int | None = None,
    callback=None,
) -> tuple[PauliSum, bool]:
    """Heisenberg-evolve ``observable`` (already in the rewritten frame) by ``steps`` steps.

    Symmetry merging runs after every full step.  ``callback(s, sum, dropped)``
    is called after each step.  Returns ``(sum, saturated)``; when the term
    count exceeds ``max_terms`` the evolution stops early with
    ``saturated=True``.
    """
    plan = plan or rewrite_circuit(spec)
    if not plan.rewritten:
        raise InputDomainError("evolve needs a rewritten plan; use evolve_plain for the unmerged sequence")
    ps = observable.copy()
    for s in range(1, steps + 1):
        dropped = 0.0
        for rot in plan.step:
            dropped += apply_rotation(ps, rot, truncation)
            if max_terms is not None and len(ps) > max_terms:
                warnings.warn(f"term count {len(ps)} exceeded {max_terms} at step {s}", SaturationWarning, stacklevel=2)
                return ps, True
        merge_symmetric(ps)
        if callback is not None:
            callback(s, ps, dropped)
    return ps, False


def evolve_plain(observable: PauliSum, plan: RotationPlan, steps: int, truncation: Truncation = Truncation()) -> PauliSum:
    """Push a lab-frame observable through the unrewritten gate sequence (no merging)."""
    ps = observable.copy()
    ps.group = None
    for rot in plan.full_sequence(steps):
        apply_rotation(ps, rot, truncation)
    return ps


def run_spd(
    spec: QuenchSpec,
    *,
    observable: PauliSum | None = None,
    delta: float = 0.0,
    max_weight: int | None = None,
    symmetry: bool = True,
    max_terms: int | None = 2_000_000,
) -> SPDResult:
    """Expectation of ``observable`` (default ``Z_tot^2``) after every step ``0..spec.steps``.

    Symmetry merging is switched off automatically for non-uniform initial
    angles, since then the state breaks the lattice symmetry.
    """
    n = spec.n_sites
    merged = bool(symmetry and spec.is_uniform)
    group = spec.lattice.symmetry_array if merged else None
    base = observable if observable is not None else ztot2_sum(n)
    ps = PauliSum(n, base.z, base.x, base.coef, group)
    plan = rewrite_circuit(spec)
    trunc = Truncation(delta, max_weight)
    for rot in plan.observable_frame:
        apply_rotation(ps, rot, Truncation())
    merge_symmetric(ps)
    bloch = bloch_vectors(spec.theta, plan.state_angle)
    values = [expectation(ps, bloch).real]
    telemetry = [SPDStep(0, len(ps), 0.0, 0.0, values[0])]
    clock = [time.perf_counter()]

    def record(s, cur, dropped):
        now = time.perf_counter()
        values.append(expectation(cur, bloch).real)
        telemetry.append(SPDStep(s, len(cur), now - clock[0], dropped, values[-1]))
        clock[0] = now

    final, saturated = evolve(ps, spec, spec.steps, truncation=trunc, plan=plan, max_terms=max_terms, callback=record)
    return SPDResult(np.array(values), telemetry, saturated, merged, final)
