"""Trotter circuits and the transforms applied to them before execution.

A :class:`Circuit` is a sequence of :class:`Moment` objects.  Each moment has
a role (``"x"``, ``"zz"``, ``"frame"``, ``"noise"`` or ``"herald"``) and the
Trotter step it belongs to, which lets the simulator read out every
intermediate step from one pass: the step-``s`` circuit is every moment with
``step <= s`` followed by the circuit's ``closing`` gates.

Rotation conventions::

    U_ZZ(phi)       = exp(-i phi Z Z / 2)
    U_1q(theta, ph) = exp(-i (X cos ph + Y sin ph) theta / 2)

so an X-rotation layer ``exp(-i h dt X / 2)`` is ``U_1q(h dt, 0)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from ._validation import check_int, check_random_state, check_real
from .channel import PauliChannel
from .exceptions import ConfigError, InputDomainError
from .lattice import Lattice
from .pauli import TWO_QUBIT_LABELS

TWO_PI = 2.0 * math.pi
PHASE_RULES = ("standard", "improved")


def normalize_rotation(theta: float, phase: float) -> tuple[float, float]:
    """Map ``U_1q(theta, phase)`` to ``0 <= theta <= pi``, ``0 <= phase < 2 pi``.

    The result equals the input up to a global sign.
    """
    theta = math.fmod(theta, TWO_PI)
    if theta < 0:
        theta += TWO_PI
    if theta > math.pi:
        theta = TWO_PI - theta
        phase += math.pi
    phase = math.fmod(phase, TWO_PI)
    if phase < 0:
        phase += TWO_PI
    if phase >= TWO_PI:
        phase = 0.0
    return theta, phase


@dataclass(frozen=True)
class Gate:
    """One operation.

    ``kind`` is ``"ZZ"`` (``angle`` = phi on an edge), ``"R1Q"`` (``angle`` =
    theta, ``phase`` = phi on one site), ``"PAULI"`` (explicit Pauli with a
    ``label`` per qubit; ``logical=False`` marks inserted errors) or
    ``"HERALD"`` (leakage detection on one site).
    """

    kind: str
    qubits: tuple[int, ...]
    angle: float = 0.0
    phase: float = 0.0
    label: str = ""
    logical: bool = True

    @classmethod
    def zz(cls, a: int, b: int, phi: float) -> "Gate":
        if a == b:
            raise InputDomainError("ZZ gate needs two distinct qubits")
        return cls("ZZ", (a, b), angle=float(phi))

    @classmethod
    def r1q(cls, q: int, theta: float, phase: float = 0.0) -> "Gate":
        theta, phase = normalize_rotation(float(theta), float(phase))
        return cls("R1Q", (q,), angle=theta, phase=phase)

    @classmethod
    def pauli(cls, qubits, label: str, *, logical: bool = True) -> "Gate":
        qubits = tuple(int(q) for q in qubits)
        if len(label) != len(qubits) or any(ch not in "IXYZ" for ch in label):
            raise InputDomainError(f"bad Pauli label {label!r} for qubits {qubits}")
        return cls("PAULI", qubits, label=label, logical=logical)

    @classmethod
    def herald(cls, q: int) -> "Gate":
        return cls("HERALD", (q,))

    def to_line(self) -> str:
        if self.kind == "ZZ":
            return f"ZZ {self.qubits[0]} {self.qubits[1]} {self.angle!r}"
        if self.kind == "R1Q":
            return f"R1Q {self.qubits[0]} {self.angle!r} {self.phase!r}"
        if self.kind == "PAULI":
            tag = "logical" if self.logical else "noise"
            return f"PAULI {','.join(map(str, self.qubits))} {self.label} {tag}"
        return f"HERALD {self.qubits[0]}"

    @classmethod
    def from_line(cls, line: str) -> "Gate":
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "ZZ":
                return cls("ZZ", (int(parts[1]), int(parts[2])), angle=float(parts[3]))
            if kind == "R1Q":
                return cls("R1Q", (int(parts[1]),), angle=float(parts[2]), phase=float(parts[3]))
            if kind == "PAULI":
                qubits = tuple(int(q) for q in parts[1].split(","))
                return cls("PAULI", qubits, label=parts[2], logical=parts[3] == "logical")
            if kind == "HERALD":
                return cls("HERALD", (int(parts[1]),))
        except (IndexError, ValueError) as exc:
            raise InputDomainError(f"malformed gate line {line!r}") from exc
        raise InputDomainError(f"unknown gate kind in line {line!r}")


@dataclass(frozen=True)
class Moment:
    role: str
    step: int
    gates: tuple[Gate, ...]

    def __post_init__(self):
        seen = set()
        for g in self.gates:
            for q in g.qubits:
                if q in seen:
                    raise InputDomainError(f"qubit {q} used twice in one moment")
                seen.add(q)


@dataclass(frozen=True)
class QuenchSpec:
    """Parameters of a quench: lattice, couplings, step size, initial angles and depth.

    ``theta`` holds one polar angle per site; the initial state is the
    product of ``cos(theta_j/2)|0> + sin(theta_j/2)|1>``.
    """

    lattice: Lattice
    J: float
    h: float
    dt: float
    theta: tuple[float, ...]
    steps: int

    def __post_init__(self):
        check_real(self.J, "J")
        check_real(self.h, "h")
        check_real(self.dt, "dt", minimum=0.0, strict_min=True)
        check_int(self.steps, "steps", minimum=0)
        theta = tuple(float(t) for t in self.theta)
        if len(theta) != self.lattice.n_sites:
            raise InputDomainError(f"theta has {len(theta)} entries for {self.lattice.n_sites} sites")
        if not all(math.isfinite(t) for t in theta):
            raise InputDomainError("theta must be finite")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def uniform(cls, lattice: Lattice, J: float, h: float, dt: float, theta: float, steps: int) -> "QuenchSpec":
        return cls(lattice, J, h, dt, (float(theta),) * lattice.n_sites, steps)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def is_uniform(self) -> bool:
        return len(set(self.theta)) == 1

    def with_steps(self, steps: int) -> "QuenchSpec":
        return replace(self, steps=steps)

    def to_dict(self) -> dict:
        return {
            "lattice": self.lattice.to_dict(),
            "J": self.J,
            "h": self.h,
            "dt": self.dt,
            "theta": list(self.theta),
            "steps": self.steps,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "QuenchSpec":
        lattice = Lattice.from_dict(doc["lattice"])
        theta = doc["theta"]
        if isinstance(theta, (int, float)):
            theta = [theta] * lattice.n_sites
        return cls(lattice, float(doc["J"]), float(doc["h"]), float(doc["dt"]), tuple(theta), int(doc["steps"]))

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    moments: tuple[Moment, ...]
    closing: tuple[Gate, ...] = ()
    metadata: dict = field(default_factory=dict, compare=True, hash=False)

    @property
    def steps(self) -> int:
        return max((m.step for m in self.moments), default=0)

    def gates(self) -> Iterable[Gate]:
        for m in self.moments:
            yield from m.gates

    def count(self, kind: str, *, logical: bool | None = None) -> int:
        return sum(1 for g in self.gates() if g.kind == kind and (logical is None or g.logical == logical))

    @property
    def herald_qubits(self) -> tuple[int, ...]:
        return tuple(sorted(g.qubits[0] for g in self.gates() if g.kind == "HERALD"))

    def prefix(self, s: int) -> "Circuit":
        """Standalone circuit for the first ``s`` Trotter steps."""
        s = check_int(s, "s", minimum=0, maximum=self.steps)
        body = [m for m in self.moments if m.step <= s and m.role != "herald"]
        if s > 0 and self.closing:
            body.append(Moment("x", s, self.closing))
        if s > 0:
            body.extend(m for m in self.moments if m.role == "herald")
            body = [replace(m, step=min(m.step, s)) for m in body]
        return Circuit(self.n_qubits, tuple(body), (), {**self.metadata, "steps": s})

    def to_text(self) -> str:
        lines = [
            "# floqising circuit v1",
            f"N {self.n_qubits}",
            "META " + json.dumps(self.metadata, sort_keys=True),
        ]
        for m in self.moments:
            lines.append(f"MOMENT {m.role} {m.step}")
            lines.extend(g.to_line() for g in m.gates)
        if self.closing:
            lines.append("CLOSING")
            lines.extend(g.to_line() for g in self.closing)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Circuit":
        n = None
        meta = {}
        moments = []
        closing = []
        current = None
        in_closing = False

        def flush():
            if current is not None:
                moments.append(Moment(current[0], current[1], tuple(current[2])))

        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            head = line.split(maxsplit=1)[0]
            if head == "N":
                n = int(line.split()[1])
            elif head == "META":
                meta = json.loads(line[5:])
            elif head == "MOMENT":
                flush()
                _, role, step = line.split()
                current = (role, int(step), [])
            elif head == "CLOSING":
                flush()
                current = None
                in_closing = True
            elif in_closing:
                closing.append(Gate.from_line(line))
            elif current is None:
                raise InputDomainError(f"gate line outside a moment: {line!r}")
            else:
                current[2].append(Gate.from_line(line))
        if not in_closing:
            flush()
        if n is None:
            raise InputDomainError("circuit text has no 'N' header")
        return cls(n, tuple(moments), tuple(closing), meta)


def build_trotter(spec: QuenchSpec, *, merge: bool = True, heralds: bool = True) -> Circuit:
    """Second-order Trotter circuit ``[U_X(h dt/2) U_ZZ(J dt) U_X(h dt/2)]^s``.

    With ``merge`` the two half X layers between consecutive steps become one
    full layer.  Each ZZ bond gets ``U_ZZ(2 J dt)``, grouped into the
    lattice's edge layers.
    """
    lattice = spec.lattice
    n = lattice.n_sites
    half = spec.h * spec.dt
    zz_angle = 2.0 * spec.J * spec.dt
    layers = lattice.edge_layers

    def x_layer(theta, step):
        return Moment("x", step, tuple(Gate.r1q(q, theta, 0.0) for q in range(n)))

    moments = []
    for step in range(1, spec.steps + 1):
        if not merge or step == 1:
            moments.append(x_layer(half, step))
        else:
            moments.append(x_layer(2.0 * half, step))
        for layer in layers:
            moments.append(Moment("zz", step, tuple(Gate.zz(a, b, zz_angle) for a, b in layer)))
        if not merge:
            moments.append(x_layer(half, step))
    closing = ()
    if spec.steps > 0:
        if merge:
            closing = x_layer(half, spec.steps).gates
        if heralds:
            moments.append(Moment("herald", spec.steps, tuple(Gate.herald(q) for q in range(n))))
    metadata = {
        "spec": spec.digest(),
        "merged": merge,
        "n_zz_layers": len(layers),
        "transforms": [],
    }
    return Circuit(n, tuple(moments), closing, metadata)


# ---------------------------------------------------------------------------
# Pauli frames: DD and RC insert logical Paulis between moments.  Adjacent
# insertions are fused per qubit and lowered to physical U_1q(pi, phase)
# rotations with tracked phases.


@dataclass
class _Frame:
    z: int = 0
    x: int = 0
    step: int = 0

    def multiply(self, z: int, x: int):
        self.z ^= z
        self.x ^= x


def _to_skeleton(circuit: Circuit):
    """Split into alternating frames and non-frame moments.

    Returns ``(frames, body)`` where ``frames[k]`` sits before ``body[k]`` and
    ``frames[-1]`` after the last moment (``len(frames) == len(body) + 1``).
    """
    body = []
    frames = [_Frame()]
    for m in circuit.moments:
        if m.role == "frame":
            z, x = _frame_masks(m)
            frames[-1].multiply(z, x)
        else:
            body.append(m)
            frames.append(_Frame())
    for k, fr in enumerate(frames):
        # a frame belongs to the step of the moment before it (or after, at the start)
        fr.step = body[k - 1].step if k > 0 else (body[0].step if body else 0)
    return frames, body


def _frame_masks(moment: Moment) -> tuple[int, int]:
    z = x = 0
    for g in moment.gates:
        q = g.qubits[0]
        if g.kind != "R1Q" or not math.isclose(g.angle, math.pi):
            raise InputDomainError("frame moments may only hold pi rotations")
        quarter = round(g.phase / (math.pi / 2)) % 2
        if quarter == 0:
            x ^= 1 << q
        else:
            x ^= 1 << q
            z ^= 1 << q
    return z, x


def _lower_frames(frames, body, n, phase_rule):
    if phase_rule not in PHASE_RULES:
        raise ConfigError(f"phase_rule must be one of {PHASE_RULES}, got {phase_rule!r}")
    phase_x = [0] * n
    phase_y = [0] * n
    out = []

    def emit(q, letter, sink):
        if letter == "X":
            sink.append(Gate.r1q(q, math.pi, math.pi * phase_x[q]))
            phase_x[q] ^= 1
            if phase_rule == "improved":
                phase_y[q] ^= 1
        else:
            sink.append(Gate.r1q(q, math.pi, math.pi / 2 + math.pi * phase_y[q]))
            phase_x[q] ^= 1
            phase_y[q] ^= 1

    for k, fr in enumerate(frames):
        if fr.z or fr.x:
            first, second = [], []
            for q in range(n):
                zb, xb = (fr.z >> q) & 1, (fr.x >> q) & 1
                if xb and not zb:
                    emit(q, "X", first)
                elif xb and zb:
                    emit(q, "Y", first)
                elif zb:
                    # Z is realized as a physical Y followed by a physical X
                    emit(q, "Y", first)
                    emit(q, "X", second)
            out.append(Moment("frame", fr.step, tuple(first)))
            if second:
                out.append(Moment("frame", fr.step, tuple(second)))
        if k < len(body):
            out.append(body[k])
    return tuple(out)


def _with_transform(circuit: Circuit, moments, name: str, extra=None) -> Circuit:
    meta = dict(circuit.metadata)
    meta["transforms"] = list(meta.get("transforms", [])) + [name]
    if extra:
        meta.update(extra)
    return Circuit(circuit.n_qubits, moments, circuit.closing, meta)


def _zz_groups(body, group_size):
    """Runs of consecutive ZZ moments within a step, split into chunks."""
    groups = []
    run = []
    for k, m in enumerate(body):
        if m.role == "zz" and (not run or body[run[-1]].step == m.step):
            run.append(k)
        elif m.role == "noise":
            continue
        else:
            if run:
                groups.extend(run[i : i + group_size] for i in range(0, len(run), group_size))
            run = [k] if m.role == "zz" else []
    if run:
        groups.extend(run[i : i + group_size] for i in range(0, len(run), group_size))
    return groups


def _frame_before(body, frames, k):
    """Index of the frame directly before ``body[k]``, skipping noise moments."""
    while k > 0 and body[k - 1].role == "noise":
        k -= 1
    return k


def apply_dynamical_decoupling(circuit: Circuit, *, phase_rule: str = "standard") -> Circuit:
    """Insert an X on every qubit before each ZZ layer, alternating X phases.

    A step with an even number of ZZ layers gets an even number of X's per
    qubit, so the logical circuit is unchanged.
    """
    if "n_zz_layers" not in circuit.metadata:
        raise ConfigError("circuit has no step-structure metadata; build it with build_trotter")
    frames, body = _to_skeleton(circuit)
    all_x = (1 << circuit.n_qubits) - 1
    for k, m in enumerate(body):
        if m.role == "zz":
            frames[_frame_before(body, frames, k)].multiply(0, all_x)
    n_layers = circuit.metadata["n_zz_layers"]
    if n_layers % 2:
        # odd layer count: close the step with one more X so each step is logical identity
        for group in _zz_groups(body, len(body)):
            frames[group[-1] + 1].multiply(0, all_x)
    moments = _lower_frames(frames, body, circuit.n_qubits, phase_rule)
    return _with_transform(circuit, moments, "dd", {"phase_rule": phase_rule})


def apply_randomized_compiling(circuit: Circuit, rng, *, phase_rule: str = "standard", group_size: int = 2) -> Circuit:
    """Twirl each group of ``group_size`` ZZ layers by a random Pauli.

    For each group a uniformly random N-qubit Pauli is placed before the group
    and again after it; every ZZ gate in the group whose edge anticommutes
    with that Pauli has its angle negated, so the logical unitary is unchanged.
    """
    if rng is None:
        raise ConfigError("randomized compiling needs a random generator or seed")
    rng = check_random_state(rng)
    n = circuit.n_qubits
    frames, body = _to_skeleton(circuit)
    body = list(body)
    for group in _zz_groups(body, group_size):
        letters = rng.integers(0, 4, size=n)
        x_bits = (letters == 1) | (letters == 2)
        z_bits = (letters == 2) | (letters == 3)
        x, z = _pack(x_bits), _pack(z_bits)
        frames[_frame_before(body, frames, group[0])].multiply(z, x)
        frames[group[-1] + 1].multiply(z, x)
        for k in group:
            gates = []
            for g in body[k].gates:
                a, b = g.qubits
                if x_bits[a] != x_bits[b]:
                    g = replace(g, angle=-g.angle)
                gates.append(g)
            body[k] = replace(body[k], gates=tuple(gates))
    moments = _lower_frames(frames, body, n, phase_rule)
    return _with_transform(circuit, moments, "rc", {"phase_rule": phase_rule})


def _pack(bits) -> int:
    return sum(1 << int(i) for i in np.flatnonzero(bits))


def amplify_noise(circuit: Circuit, channel: PauliChannel, alpha: float, rng, *, edge_channels: dict | None = None) -> Circuit:
    """Insert extra two-qubit Paulis before ZZ gates to scale the error rate by ``alpha``.

    Before each ZZ gate the Pauli ``P_j`` (``j`` not identity) is inserted
    with probability ``(alpha - 1) p_j``.  Inserted gates carry
    ``logical=False``.
    """
    alpha = check_real(alpha, "alpha")
    if alpha < 1:
        raise InputDomainError("alpha must be >= 1; error cancellation is not supported")
    if alpha == 1:
        return circuit
    rng = check_random_state(rng)
    default_q = channel.insertion_probs(alpha)
    cdf_cache = {}
    out = []
    inserted = 0
    for m in circuit.moments:
        if m.role == "zz":
            gates = []
            for g in m.gates:
                edge = tuple(sorted(g.qubits))
                q = default_q
                if edge_channels and edge in edge_channels:
                    q = edge_channels[edge].insertion_probs(alpha)
                key = q.tobytes()
                if key not in cdf_cache:
                    cdf_cache[key] = np.cumsum(q)
                j = int(np.searchsorted(cdf_cache[key], rng.random(), side="right"))
                j = min(j, 15)
                if j:
                    gates.append(Gate.pauli(g.qubits, TWO_QUBIT_LABELS[j], logical=False))
                    inserted += 1
            if gates:
                out.append(Moment("noise", m.step, tuple(gates)))
        out.append(m)
    return _with_transform(circuit, tuple(out), "amplify", {"alpha": alpha, "inserted": inserted})


@dataclass(frozen=True)
class CircuitRecipe:
    """A base circuit plus the transforms to apply to it for each shot.

    Randomized compiling and noise amplification are sampled afresh by
    :meth:`build`, so one recipe and one seed fully determine a circuit.
    """

    base: Circuit
    dynamical_decoupling: bool = False
    randomized_compiling: bool = False
    phase_rule: str = "standard"
    alpha: float = 1.0
    channel: PauliChannel | None = None

    def __post_init__(self):
        if self.phase_rule not in PHASE_RULES:
            raise ConfigError(f"phase_rule must be one of {PHASE_RULES}")
        if self.alpha < 1:
            raise InputDomainError("alpha must be >= 1")
        if self.alpha > 1 and self.channel is None:
            raise ConfigError("noise amplification needs a channel")
        if self.dynamical_decoupling:
            object.__setattr__(self, "_dd_base", apply_dynamical_decoupling(self.base, phase_rule=self.phase_rule))
        else:
            object.__setattr__(self, "_dd_base", self.base)

    @property
    def is_random(self) -> bool:
        return self.randomized_compiling or self.alpha > 1

    def build(self, rng=None) -> Circuit:
        circuit = self._dd_base
        if self.randomized_compiling:
            circuit = apply_randomized_compiling(circuit, rng, phase_rule=self.phase_rule)
        if self.alpha > 1:
            circuit = amplify_noise(circuit, self.channel, self.alpha, rng)
        return circuit
