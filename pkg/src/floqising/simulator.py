"""Statevector simulation: ideal evolution, noisy trajectories, sampling and readout.

Basis states are indexed little-endian: bit ``q`` of the index is the state of
qubit ``q``.  A Z-basis outcome bit of 1 means ``Z = -1``.

Noisy runs are trajectory simulations.  In each ZZ moment a Pauli is drawn
from the two-qubit channel for every gate and applied before it; afterwards
each participating qubit may leak.  Leakage is tracked as a classical flag:
a ZZ gate touching a leaked qubit does nothing to either qubit, and the
leaked qubit reads out as 1.  Heralds fire on leaked qubits (up to detection
errors) and every qubit whose detector fired is scrubbed from estimators.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._validation import check_int, check_probability, check_real
from .channel import PauliChannel
from .circuit import Circuit, CircuitRecipe, Gate
from .exceptions import InputDomainError, ResourceError
from .lattice import Lattice
from .pauli import TWO_QUBIT_LABELS, pauli_sparse

DEFAULT_QUBIT_CAP = 25
DENSITY_MATRIX_CAP = 6
_EDGE_CACHE_MAX_QUBITS = 20


def _check_cap(n, cap):
    if n > cap:
        raise ResourceError(
            f"simulator: {n} qubits exceeds the statevector cap of {cap}; "
            "use a smaller lattice or the spd module"
        )


@dataclass
class StateVector:
    amplitudes: np.ndarray
    n_qubits: int

    def __post_init__(self):
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise InputDomainError("amplitude vector length must be 2**n_qubits")

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.n_qubits)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def overlap(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


def product_state(theta, *, cap: int = DEFAULT_QUBIT_CAP) -> StateVector:
    """``prod_j (cos(theta_j/2)|0> + sin(theta_j/2)|1>)``."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    _check_cap(n, cap)
    psi = np.ones(1, dtype=complex)
    for t in theta:
        # qubit j is bit j, so later qubits go in front
        psi = np.kron(np.array([math.cos(t / 2), math.sin(t / 2)], dtype=complex), psi)
    return StateVector(psi, n)


# ---------------------------------------------------------------------------
# kernels


@lru_cache(maxsize=8)
def _basis(n):
    idx = np.arange(1 << n, dtype=np.int64)
    weight = np.bitwise_count(idx).astype(np.int64)
    return idx, weight


@lru_cache(maxsize=4096)
def _edge_sign(n, a, b):
    idx, _ = _basis(n)
    par = ((idx >> a) ^ (idx >> b)) & 1
    return (1 - 2 * par).astype(np.int8)


def _edge_sign_any(n, a, b):
    if n <= _EDGE_CACHE_MAX_QUBITS:
        return _edge_sign(n, a, b)
    idx, _ = _basis(n)
    return (1 - 2 * (((idx >> a) ^ (idx >> b)) & 1)).astype(np.int8)


@lru_cache(maxsize=64)
def _zz_diagonal(n, gates):
    """``exp(-i/2 sum_g phi_g Z_a Z_b)`` for ``gates = ((a, b, phi), ...)``."""
    total = np.zeros(1 << n)
    for a, b, phi in gates:
        total += phi * _edge_sign_any(n, a, b)
    return np.exp(-0.5j * total)


@lru_cache(maxsize=16)
def _memory_diagonal(n, phi):
    _, w = _basis(n)
    return np.exp(-1j * phi * (n - 2 * w))


def u1q_matrix(theta: float, phase: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [[c, -1j * s * np.exp(-1j * phase)], [-1j * s * np.exp(1j * phase), c]],
        dtype=complex,
    )


def _apply_1q(psi, q, u):
    v = psi.reshape(-1, 2, 1 << q)
    a = v[:, 0, :].copy()
    b = v[:, 1, :]
    v[:, 0, :] = u[0, 0] * a + u[0, 1] * b
    v[:, 1, :] = u[1, 0] * a + u[1, 1] * b


def _apply_pauli_letter(psi, q, letter):
    v = psi.reshape(-1, 2, 1 << q)
    if letter == "X":
        v[:] = v[:, ::-1, :].copy()
    elif letter == "Z":
        v[:, 1, :] *= -1
    elif letter == "Y":
        a = v[:, 0, :].copy()
        v[:, 0, :] = -1j * v[:, 1, :]
        v[:, 1, :] = 1j * a


def _apply_pauli_gate(psi, g: Gate):
    for q, letter in zip(g.qubits, g.label):
        if letter != "I":
            _apply_pauli_letter(psi, q, letter)


def _apply_zz(psi, n, gates):
    if gates:
        psi *= _zz_diagonal(n, tuple(gates))


def _apply_r1q(psi, g, overrotation=0.0):
    _apply_1q(psi, g.qubits[0], _u1q_cached(g.angle + overrotation, g.phase))


@lru_cache(maxsize=1024)
def _u1q_cached(theta, phase):
    return u1q_matrix(theta, phase)


def _apply_logical(psi, n, moment_gates):
    zz = []
    for g in moment_gates:
        if g.kind == "ZZ":
            zz.append((g.qubits[0], g.qubits[1], g.angle))
        elif g.kind == "R1Q":
            _apply_r1q(psi, g)
        elif g.kind == "PAULI" and g.logical:
            _apply_pauli_gate(psi, g)
    _apply_zz(psi, n, zz)


def _theta_of(initial, n):
    theta = getattr(initial, "theta", initial)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        theta = np.full(n, float(theta))
    if theta.shape != (n,):
        raise InputDomainError(f"initial angles must have length {n}")
    return theta


def run_ideal(circuit: Circuit, initial, *, cap: int = DEFAULT_QUBIT_CAP) -> StateVector:
    """Apply every logical gate of ``circuit`` to the initial product state.

    ``initial`` is a :class:`~floqising.circuit.QuenchSpec`, an array of
    per-site angles, or one angle for all sites.  Inserted error Paulis are
    skipped, as are heralds.
    """
    n = circuit.n_qubits
    _check_cap(n, cap)
    state = product_state(_theta_of(initial, n), cap=cap)
    psi = state.amplitudes
    for m in circuit.moments:
        _apply_logical(psi, n, m.gates)
    if circuit.closing:
        _apply_logical(psi, n, circuit.closing)
    return state


def ideal_states_by_step(circuit: Circuit, initial, *, cap: int = DEFAULT_QUBIT_CAP):
    """Yield ``(s, StateVector)`` for ``s = 0..steps`` from one pass over the circuit."""
    n = circuit.n_qubits
    _check_cap(n, cap)
    state = product_state(_theta_of(initial, n), cap=cap)
    by_step = _moments_by_step(circuit)
    for s in range(circuit.steps + 1):
        for m in by_step.get(s, ()):
            if m.role != "herald":
                _apply_logical(state.amplitudes, n, m.gates)
        out = state.copy()
        if s > 0 and circuit.closing:
            _apply_logical(out.amplitudes, n, circuit.closing)
        yield s, out


def _moments_by_step(circuit):
    out = {}
    for m in circuit.moments:
        out.setdefault(m.step, []).append(m)
    return out


# ---------------------------------------------------------------------------
# observables on exact states


def ztot2_from_probabilities(probs: np.ndarray, n: int) -> float:
    _, w = _basis(n)
    return float(np.dot(probs, (n - 2 * w) ** 2) / n**2)


def expectation_ztot2(state) -> float:
    """``(1/N^2) sum_{j,k} <Z_j Z_k>`` for a :class:`StateVector` or density matrix."""
    if isinstance(state, StateVector):
        return ztot2_from_probabilities(state.probabilities(), state.n_qubits)
    rho = np.asarray(state)
    n = int(round(math.log2(rho.shape[0])))
    return ztot2_from_probabilities(np.real(np.diag(rho)), n)


def edge_correlations(probs: np.ndarray, n: int, edges) -> np.ndarray:
    """``<Z_a Z_b>`` for each edge, from Z-basis probabilities."""
    return np.array([float(np.dot(probs, _edge_sign_any(n, a, b))) for a, b in edges])


def infinite_temperature_state(n: int) -> np.ndarray:
    d = 1 << n
    return np.eye(d) / d


# ---------------------------------------------------------------------------
# noisy trajectories


@dataclass(frozen=True)
class NoiseConfig:
    """Noise parameters for trajectory simulation.

    ``coherent_memory_angle`` is the angle ``phi`` of ``exp(-i phi Z)`` applied
    to every qubit after every ZZ moment.  ``one_q_overrotation`` is added to
    the rotation angle of every single-qubit gate.
    """

    two_qubit_channel: PauliChannel = field(default_factory=PauliChannel.identity)
    leak_prob_2q: float = 0.0
    coherent_memory_angle: float = 0.0
    one_q_overrotation: float = 0.0
    detection_false_positive: float = 0.0
    detection_false_negative: float = 0.0
    edge_channels: dict | None = None

    def __post_init__(self):
        check_probability(self.leak_prob_2q, "leak_prob_2q")
        check_probability(self.detection_false_positive, "detection_false_positive")
        check_probability(self.detection_false_negative, "detection_false_negative")
        check_real(self.coherent_memory_angle, "coherent_memory_angle")
        check_real(self.one_q_overrotation, "one_q_overrotation")

    @classmethod
    def noiseless(cls) -> "NoiseConfig":
        return cls()

    @property
    def is_noiseless(self) -> bool:
        return (
            self.two_qubit_channel.total_error == 0
            and not self.edge_channels
            and self.leak_prob_2q == 0
            and self.coherent_memory_angle == 0
            and self.one_q_overrotation == 0
            and self.detection_false_positive == 0
        )

    def to_dict(self) -> dict:
        return {
            "two_qubit_channel": self.two_qubit_channel.to_dict(),
            "leak_prob_2q": self.leak_prob_2q,
            "coherent_memory_angle": self.coherent_memory_angle,
            "one_q_overrotation": self.one_q_overrotation,
            "detection_false_positive": self.detection_false_positive,
            "detection_false_negative": self.detection_false_negative,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseConfig":
        doc = dict(doc)
        channel = doc.pop("two_qubit_channel", None)
        if channel is None:
            channel = PauliChannel.identity()
        elif isinstance(channel, dict):
            channel = PauliChannel.from_dict(channel)
        return cls(two_qubit_channel=channel, **doc)


@dataclass(frozen=True)
class ShotRecord:
    """One measured shot.

    ``bits`` packs the outcomes with bit ``q`` for qubit ``q``.  Every qubit
    whose leakage detector fired is in ``replaced_mask`` and is treated as
    maximally mixed by estimators; ``herald_mask`` holds the fired detectors
    whose qubit also read 1, which are the events counted as leakage.
    """

    bits: int
    n_qubits: int
    herald_mask: int = 0
    replaced_mask: int = 0

    @property
    def m(self) -> int:
        return bin(self.herald_mask).count("1")

    def bit_array(self) -> np.ndarray:
        return np.array([(self.bits >> q) & 1 for q in range(self.n_qubits)], dtype=np.uint8)


@dataclass
class ShotTable:
    """Many shots of one circuit prefix as arrays of shape ``(shots, N)``."""

    bits: np.ndarray
    herald: np.ndarray
    replaced: np.ndarray

    @property
    def n_shots(self) -> int:
        return self.bits.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.bits.shape[1]

    @property
    def m(self) -> np.ndarray:
        return self.herald.sum(axis=1)

    @classmethod
    def from_records(cls, records) -> "ShotTable":
        records = list(records)
        if not records:
            raise InputDomainError("no shot records given")
        n = records[0].n_qubits
        q = np.arange(n)

        def unpack(v):
            return ((v >> q) & 1).astype(bool)

        bits = np.array([unpack(r.bits) for r in records], dtype=np.uint8)
        herald = np.array([unpack(r.herald_mask) for r in records], dtype=bool)
        replaced = np.array([unpack(r.replaced_mask) for r in records], dtype=bool)
        return cls(bits, herald, replaced)

    def records(self) -> list[ShotRecord]:
        weights = 1 << np.arange(self.n_qubits, dtype=object)
        out = []
        for b, hm, rm in zip(self.bits, self.herald, self.replaced):
            out.append(
                ShotRecord(
                    int(np.dot(b.astype(object), weights)),
                    self.n_qubits,
                    int(np.dot(hm.astype(object), weights)),
                    int(np.dot(rm.astype(object), weights)),
                )
            )
        return out

    @staticmethod
    def concat(tables) -> "ShotTable":
        tables = list(tables)
        return ShotTable(
            np.concatenate([t.bits for t in tables]),
            np.concatenate([t.herald for t in tables]),
            np.concatenate([t.replaced for t in tables]),
        )


class _Trajectory:
    """Mutable state of one noisy trajectory."""

    def __init__(self, n, theta, noise: NoiseConfig, rng, cap):
        self.n = n
        self.state = product_state(theta, cap=cap)
        self.noise = noise
        self.rng = rng
        self.leaked = np.zeros(n, dtype=bool)
        self._cdf_default = np.cumsum(noise.two_qubit_channel.probs)
        self._noisy_2q = noise.two_qubit_channel.total_error > 0 or bool(noise.edge_channels)

    def _cdf(self, a, b):
        ch = self.noise.edge_channels
        if ch:
            edge = (min(a, b), max(a, b))
            if edge in ch:
                return np.cumsum(ch[edge].probs)
        return self._cdf_default

    def apply_moment(self, moment):
        psi = self.state.amplitudes
        if moment.role == "zz" or any(g.kind == "ZZ" for g in moment.gates):
            self._apply_zz_moment(moment.gates)
            return
        for g in moment.gates:
            if g.kind == "R1Q":
                if not self.leaked[g.qubits[0]]:
                    _apply_r1q(psi, g, self.noise.one_q_overrotation)
            elif g.kind == "PAULI":
                _apply_pauli_gate(psi, g)

    def _apply_zz_moment(self, gates):
        psi = self.state.amplitudes
        zz_gates = [g for g in gates if g.kind == "ZZ"]
        k = len(zz_gates)
        u_err = self.rng.random(k) if self._noisy_2q else None
        u_leak = self.rng.random((k, 2)) if self.noise.leak_prob_2q > 0 else None
        active = []
        for i, g in enumerate(zz_gates):
            a, b = g.qubits
            if self.leaked[a] or self.leaked[b]:
                continue
            if u_err is not None:
                j = int(np.searchsorted(self._cdf(a, b), u_err[i], side="right"))
                if 0 < j < 16:
                    _apply_pauli_gate(psi, Gate.pauli((a, b), TWO_QUBIT_LABELS[j], logical=False))
            active.append((a, b, g.angle))
        _apply_zz(psi, self.n, active)
        if u_leak is not None:
            for i, g in enumerate(zz_gates):
                a, b = g.qubits
                if (a, b, g.angle) in active:
                    if u_leak[i, 0] < self.noise.leak_prob_2q:
                        self.leaked[a] = True
                    if u_leak[i, 1] < self.noise.leak_prob_2q:
                        self.leaked[b] = True
        if self.noise.coherent_memory_angle:
            psi *= _memory_diagonal(self.n, float(self.noise.coherent_memory_angle))

    def readout_probabilities(self, closing) -> np.ndarray:
        psi = self.state.amplitudes
        if closing:
            psi = psi.copy()
            for g in closing:
                if not self.leaked[g.qubits[0]]:
                    _apply_r1q(psi, g, self.noise.one_q_overrotation)
        p = np.abs(psi) ** 2
        if self.leaked.any():
            mask = int(np.dot(self.leaked.astype(np.int64), 1 << np.arange(self.n, dtype=np.int64)))
            idx, _ = _basis(self.n)
            p = np.bincount(idx | mask, weights=p, minlength=p.size)
        return p / p.sum()

    def sample(self, p, shots, herald_qubits):
        cdf = np.cumsum(p)
        outcomes = np.searchsorted(cdf, self.rng.random(shots) * cdf[-1], side="right")
        outcomes = np.minimum(outcomes, p.size - 1)
        q = np.arange(self.n)
        bits = ((outcomes[:, None] >> q) & 1).astype(np.uint8)
        u = self.rng.random((shots, self.n))
        fp, fn = self.noise.detection_false_positive, self.noise.detection_false_negative
        fired = np.where(self.leaked[None, :], u >= fn, u < fp)
        watched = np.zeros(self.n, dtype=bool)
        watched[list(herald_qubits)] = True
        fired &= watched[None, :]
        herald = fired & (bits == 1)
        return ShotTable(bits, herald, fired.copy())


def _trajectory_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _run_one(recipe_or_circuit, noise, theta, rng, cap, mode, shots, reducer):
    circuit = recipe_or_circuit.build(rng) if isinstance(recipe_or_circuit, CircuitRecipe) else recipe_or_circuit
    n = circuit.n_qubits
    traj = _Trajectory(n, theta, noise, rng, cap)
    heralds = circuit.herald_qubits
    by_step = _moments_by_step(circuit)
    out = []
    for s in range(circuit.steps + 1):
        for m in by_step.get(s, ()):
            if m.role != "herald":
                traj.apply_moment(m)
        p = traj.readout_probabilities(circuit.closing if s > 0 else ())
        if mode == "shots":
            out.append(traj.sample(p, shots, heralds))
        else:
            out.append(reducer(p, n))
    return out


def run_noisy_shot(circuit: Circuit, noise: NoiseConfig, rng, initial=None, *, cap: int = DEFAULT_QUBIT_CAP) -> ShotRecord:
    """Sample one shot of the full circuit under ``noise``."""
    n = circuit.n_qubits
    _check_cap(n, cap)
    theta = _theta_of(0.0 if initial is None else initial, n)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    table = _run_one(circuit, noise, theta, rng, cap, "shots", 1, None)[-1]
    return table.records()[0]


def _chunk_worker(args):
    recipe, noise, theta, seed, start, stop, cap, mode, shots, reducer = args
    return [_run_one(recipe, noise, theta, _trajectory_rng(seed, i), cap, mode, shots, reducer) for i in range(start, stop)]


def _run_trajectories(recipe, noise, theta, n_traj, seed, cap, mode, shots, reducer, workers):
    chunks = []
    if workers <= 1 or n_traj < 2:
        chunks = [_chunk_worker((recipe, noise, theta, seed, 0, n_traj, cap, mode, shots, reducer))]
    else:
        bounds = np.linspace(0, n_traj, workers + 1).astype(int)
        jobs = [
            (recipe, noise, theta, seed, int(a), int(b), cap, mode, shots, reducer)
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_chunk_worker, jobs))
    return [res for chunk in chunks for res in chunk]


def run_noisy_shots(
    circuit,
    noise: NoiseConfig,
    initial,
    n_trajectories: int,
    seed: int,
    *,
    shots_per_trajectory: int = 1,
    workers: int = 1,
    cap: int = DEFAULT_QUBIT_CAP,
) -> list[ShotTable]:
    """Sample shots at every Trotter step.

    ``circuit`` is a :class:`Circuit` or a :class:`CircuitRecipe`; a recipe
    is rebuilt with each trajectory's generator, so randomized compiling and
    noise amplification are resampled per trajectory.  Trajectory ``i`` uses
    ``SeedSequence(seed, spawn_key=(i,))``, which makes the output independent
    of ``workers``.  Returns one :class:`ShotTable` per step ``s = 0..steps``.
    """
    base = circuit.base if isinstance(circuit, CircuitRecipe) else circuit
    n = base.n_qubits
    _check_cap(n, cap)
    check_int(n_trajectories, "n_trajectories", minimum=1)
    check_int(shots_per_trajectory, "shots_per_trajectory", minimum=1)
    theta = _theta_of(initial, n)
    results = _run_trajectories(circuit, noise, theta, n_trajectories, seed, cap, "shots", shots_per_trajectory, None, workers)
    n_steps = len(results[0])
    return [ShotTable.concat(r[s] for r in results) for s in range(n_steps)]


def _ztot2_reducer(p, n):
    return np.array([ztot2_from_probabilities(p, n)])


def trajectory_expectations(
    circuit,
    noise: NoiseConfig,
    initial,
    n_trajectories: int,
    seed: int,
    *,
    reducer=None,
    workers: int = 1,
    cap: int = DEFAULT_QUBIT_CAP,
) -> np.ndarray:
    """Exact per-trajectory expectations, shape ``(n_trajectories, steps + 1, k)``.

    Each trajectory's readout distribution (leaked qubits forced to 1) is
    reduced with ``reducer(probs, n) -> array of k values``; the default
    computes ``<Z_tot^2>``.  Heralds are not applied.  The average over
    trajectories is an unbiased estimate of the noisy expectation with
    smaller variance than sampling one shot per trajectory.
    """
    base = circuit.base if isinstance(circuit, CircuitRecipe) else circuit
    n = base.n_qubits
    _check_cap(n, cap)
    theta = _theta_of(initial, n)
    reducer = reducer or _ztot2_reducer
    results = _run_trajectories(circuit, noise, theta, n_trajectories, seed, cap, "exact", 1, reducer, workers)
    return np.array(results)


# ---------------------------------------------------------------------------
# shot estimators


@dataclass(frozen=True)
class ObservableEstimate:
    mean: float
    stderr: float
    n_shots: int


def ztot2_per_shot(table: ShotTable) -> np.ndarray:
    """Unbiased per-shot ``Z_tot^2`` with replaced qubits treated as maximally mixed.

    Pairs touching a replaced qubit contribute 0, the diagonal ``j == k``
    terms contribute 1 each.
    """
    n = table.n_qubits
    z = 1.0 - 2.0 * table.bits
    keep = ~table.replaced
    zs = np.where(keep, z, 0.0)
    total = zs.sum(axis=1)
    kept = keep.sum(axis=1)
    return (total**2 - kept + n) / n**2


def site_energy_per_shot(table: ShotTable, lattice: Lattice, J: float) -> np.ndarray:
    """Per-shot ``(J/4) sum_{j in nbr(i)} z_i z_j`` for every site, shape ``(shots, N)``."""
    z = 1.0 - 2.0 * table.bits
    zs = np.where(table.replaced, 0.0, z)
    out = np.zeros_like(zs)
    for i in range(lattice.n_sites):
        for j in lattice.neighbors(i):
            out[:, i] += zs[:, i] * zs[:, j]
    return 0.25 * J * out


def _mean_stderr(values):
    values = np.asarray(values, dtype=float)
    k = values.shape[0]
    mean = values.mean(axis=0)
    stderr = values.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(mean)
    return mean, stderr


def estimate_from_shots(records, observable: str = "ztot2", *, lattice: Lattice | None = None, J: float = -1.0):
    """Mean and standard error of a Z-basis observable.

    ``observable`` is ``"ztot2"``, ``"site_energy"`` (per-site array) or
    ``"column_energy"`` (array over x).  ``records`` may be a
    :class:`ShotTable` or a list of :class:`ShotRecord`.
    """
    table = records if isinstance(records, ShotTable) else ShotTable.from_records(records)
    if table.n_shots == 0:
        raise InputDomainError("no shots to estimate from")
    if observable == "ztot2":
        mean, err = _mean_stderr(ztot2_per_shot(table))
        return ObservableEstimate(float(mean), float(err), table.n_shots)
    if lattice is None:
        raise InputDomainError(f"observable {observable!r} needs the lattice")
    site = site_energy_per_shot(table, lattice, J)
    if observable == "site_energy":
        mean, err = _mean_stderr(site)
        return ObservableEstimate(mean, err, table.n_shots)
    if observable == "column_energy":
        cols = lattice.column_of()
        per_col = np.stack([site[:, cols == x].mean(axis=1) for x in range(lattice.nx)], axis=1)
        mean, err = _mean_stderr(per_col)
        return ObservableEstimate(mean, err, table.n_shots)
    raise InputDomainError(f"unknown observable {observable!r}")


def bin_by_herald_count(values: np.ndarray, m: np.ndarray) -> dict[int, tuple[int, float, float]]:
    """Group per-shot values by herald count: ``{m: (count, mean, stderr)}``."""
    out = {}
    for k in np.unique(m):
        sel = values[m == k]
        err = float(sel.std(ddof=1) / math.sqrt(sel.size)) if sel.size > 1 else float("inf")
        out[int(k)] = (int(sel.size), float(sel.mean()), err)
    return out


# ---------------------------------------------------------------------------
# shot archives


ARCHIVE_COLUMNS = ("seed", "s", "shot", "bitstring", "m", "herald_mask", "replaced_mask")


def _hex_rows(arr):
    weights = 1 << np.arange(arr.shape[1], dtype=object)
    return [format(int(np.dot(row.astype(object), weights)), "x") for row in arr]


def write_shot_archive(tables: list[ShotTable], seed: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ARCHIVE_COLUMNS)
    for s, table in enumerate(tables):
        bits = _hex_rows(table.bits)
        herald = _hex_rows(table.herald)
        replaced = _hex_rows(table.replaced)
        m = table.m
        for k in range(table.n_shots):
            writer.writerow([seed, s, k, bits[k], int(m[k]), herald[k], replaced[k]])
    return buf.getvalue()


def read_shot_archive(text: str, n_qubits: int) -> list[ShotTable]:
    reader = csv.DictReader(io.StringIO(text))
    rows = {}
    for row in reader:
        rows.setdefault(int(row["s"]), []).append(row)
    q = np.arange(n_qubits)

    def unpack(hexes):
        vals = np.array([int(h, 16) for h in hexes], dtype=object)
        return np.array([[(int(v) >> int(j)) & 1 for j in q] for v in vals], dtype=np.uint8).reshape(len(hexes), n_qubits)

    out = []
    for s in sorted(rows):
        r = rows[s]
        out.append(
            ShotTable(
                unpack([x["bitstring"] for x in r]),
                unpack([x["herald_mask"] for x in r]).astype(bool),
                unpack([x["replaced_mask"] for x in r]).astype(bool),
            )
        )
    return out


# ---------------------------------------------------------------------------
# density matrices (small N cross-checks)


def _embed_1q(u, q, n):
    return np.kron(np.kron(np.eye(1 << (n - q - 1)), u), np.eye(1 << q))


@lru_cache(maxsize=4096)
def _pauli_dense(qubits, label, n):
    z = x = 0
    for q, ch in zip(qubits, label):
        if ch in "XY":
            x |= 1 << q
        if ch in "YZ":
            z |= 1 << q
    return pauli_sparse(z, x, n).toarray()


def _channel_on_edge(rho, a, b, channel, n):
    out = channel.probs[0] * rho
    for j in range(1, 16):
        pj = channel.probs[j]
        if pj:
            P = _pauli_dense((int(a), int(b)), TWO_QUBIT_LABELS[j], n)
            out = out + pj * (P @ rho @ P.conj().T)
    return out


def run_density_matrix(circuit: Circuit, initial, noise: NoiseConfig | None = None, *, per_step: bool = False):
    """Exact channel evolution for ``N <= 6``.

    Supports the two-qubit Pauli channel (applied before each ZZ gate),
    coherent memory errors and single-qubit over-rotation.  Leakage is not
    modelled here.  ``initial`` may also be a ``2**N`` square density matrix.  Returns the final density matrix, or one per step when
    ``per_step`` is set.
    """
    n = circuit.n_qubits
    _check_cap(n, DENSITY_MATRIX_CAP)
    noise = noise or NoiseConfig()
    if noise.leak_prob_2q > 0:
        raise InputDomainError("density-matrix mode does not model leakage")
    if isinstance(initial, np.ndarray) and initial.ndim == 2:
        rho = np.array(initial, dtype=complex)
    else:
        psi = product_state(_theta_of(initial, n)).amplitudes
        rho = np.outer(psi, psi.conj())

    def one_q(rho, g):
        u = _embed_1q(u1q_matrix(g.angle + noise.one_q_overrotation, g.phase), g.qubits[0], n)
        return u @ rho @ u.conj().T

    def apply(rho, m_gates, role):
        zz = []
        for g in m_gates:
            if g.kind == "ZZ":
                ch = noise.two_qubit_channel
                if noise.edge_channels and tuple(sorted(g.qubits)) in noise.edge_channels:
                    ch = noise.edge_channels[tuple(sorted(g.qubits))]
                if ch.total_error > 0:
                    rho = _channel_on_edge(rho, g.qubits[0], g.qubits[1], ch, n)
                zz.append((g.qubits[0], g.qubits[1], g.angle))
            elif g.kind == "R1Q":
                rho = one_q(rho, g)
            elif g.kind == "PAULI":
                P = _pauli_dense(tuple(g.qubits), g.label, n)
                rho = P @ rho @ P.conj().T
        if zz:
            d = _zz_diagonal(n, tuple(zz))
            rho = d[:, None] * rho * d.conj()[None, :]
            if noise.coherent_memory_angle:
                d = _memory_diagonal(n, float(noise.coherent_memory_angle))
                rho = d[:, None] * rho * d.conj()[None, :]
        return rho

    by_step = _moments_by_step(circuit)
    states = []
    for s in range(circuit.steps + 1):
        for m in by_step.get(s, ()):
            rho = apply(rho, m.gates, m.role)
        if per_step or s == circuit.steps:
            out = rho
            if s > 0 and circuit.closing:
                out = apply(rho, circuit.closing, "x")
            states.append(out)
    return states if per_step else states[-1]
