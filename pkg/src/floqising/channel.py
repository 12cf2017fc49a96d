"""Two-qubit stochastic Pauli channels and their fidelity spectra."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_probability, check_random_state, check_real
from .exceptions import InconsistentSpectrumError, InputDomainError
from .pauli import TWO_QUBIT_LABELS, PauliString, commutation_table

_ANTI = commutation_table()
# Walsh-Hadamard-like sign matrix: f = SIGNS @ p and p = SIGNS @ f / 16
SIGNS = 1 - 2 * _ANTI
LABEL_INDEX = {lab: k for k, lab in enumerate(TWO_QUBIT_LABELS)}
ZZ_INDEX = LABEL_INDEX["ZZ"]
ANTICOMMUTES_WITH_ZZ = _ANTI[ZZ_INDEX].astype(bool)


def _zz_partner(label: str) -> str:
    p = PauliString.from_label(label)
    if p.commutes(PauliString.from_label("ZZ")):
        return label
    _, q = PauliString.from_label("ZZ").multiply(p)
    return q.label


ZZ_PARTNER = tuple(LABEL_INDEX[_zz_partner(lab)] for lab in TWO_QUBIT_LABELS)
"""Index of ``u(j)``: conjugation of label ``j`` by a quarter-turn ZZ rotation (up to sign)."""

NEGATIVE_PROB_TOL = 1e-6


def probs_to_fidelities(probs) -> np.ndarray:
    """Pauli fidelities ``f_i = sum_j (-1)^<i,j> p_j`` for a 16-entry probability vector."""
    return SIGNS @ np.asarray(probs, dtype=float)


def fidelities_to_probs(fidelities, *, clip: bool = True) -> np.ndarray:
    """Inverse transform.

    Small negative probabilities (down to ``-1e-6``) are clipped and the
    vector renormalized with a warning; anything more negative means the
    spectrum does not come from a Pauli channel.
    """
    p = SIGNS @ np.asarray(fidelities, dtype=float) / 16.0
    if not clip:
        return p
    worst = p.min()
    if worst < -NEGATIVE_PROB_TOL:
        raise InconsistentSpectrumError(f"fidelity spectrum gives probability {worst:.3g} < 0")
    if worst < 0:
        if worst < -1e-15:
            warnings.warn(f"clipping negative probabilities (min {worst:.3g})", RuntimeWarning, stacklevel=2)
        p = np.clip(p, 0.0, None)
        p /= p.sum()
    return p


@dataclass(frozen=True)
class PauliChannel:
    """A two-qubit Pauli channel, ``rho -> sum_j p_j P_j rho P_j``.

    ``probs`` is indexed like :data:`~floqising.pauli.TWO_QUBIT_LABELS`.
    """

    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.shape != (16,):
            raise InputDomainError("a two-qubit Pauli channel needs 16 probabilities")
        if np.any(p < -1e-12) or not np.all(np.isfinite(p)):
            raise InputDomainError("channel probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise InputDomainError(f"channel probabilities sum to {p.sum()!r}, not 1")
        p = np.clip(p, 0.0, None)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __eq__(self, other):
        return isinstance(other, PauliChannel) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    @classmethod
    def identity(cls) -> "PauliChannel":
        p = np.zeros(16)
        p[0] = 1.0
        return cls(p)

    @classmethod
    def depolarizing(cls, total_error: float) -> "PauliChannel":
        """Uniform two-qubit depolarizing channel with ``p_j = total_error / 15``."""
        eps = check_probability(total_error, "total_error")
        p = np.full(16, eps / 15.0)
        p[0] = 1.0 - eps
        return cls(p)

    @classmethod
    def from_dict(cls, probs: dict) -> "PauliChannel":
        p = np.zeros(16)
        for lab, val in probs.items():
            key = lab.upper()
            if key not in LABEL_INDEX:
                raise InputDomainError(f"unknown two-qubit Pauli label {lab!r}")
            p[LABEL_INDEX[key]] = float(val)
        if "II" not in {k.upper() for k in probs}:
            p[0] = 1.0 - p[1:].sum()
        return cls(p)

    @classmethod
    def from_fidelities(cls, fidelities) -> "PauliChannel":
        return cls(fidelities_to_probs(fidelities))

    @classmethod
    def random_symmetric(cls, total_error: float, rng, *, concentration: float = 1.0) -> "PauliChannel":
        """Random channel whose learnable spectrum is fully determined.

        Only the products ``f_j f_u(j)`` are visible to benchmarking with a
        non-Clifford ZZ gate, so the weights are tied to satisfy
        ``p_j = p_u(j)``.
        """
        eps = check_probability(total_error, "total_error")
        w = check_random_state(rng).gamma(concentration, size=16)
        w[0] = 0.0
        w = 0.5 * (w + w[list(ZZ_PARTNER)])
        p = eps * w / w.sum()
        p[0] = 1.0 - eps
        return cls(p)

    def to_dict(self) -> dict:
        return {lab: float(v) for lab, v in zip(TWO_QUBIT_LABELS, self.probs)}

    @property
    def fidelities(self) -> np.ndarray:
        return probs_to_fidelities(self.probs)

    @property
    def total_error(self) -> float:
        """Probability that any non-identity Pauli fires."""
        return float(1.0 - self.probs[0])

    @property
    def average_infidelity(self) -> float:
        """Average gate infidelity, ``(d / (d + 1)) * (1 - p_I)`` with ``d = 4``."""
        return 0.8 * self.total_error

    def scaled(self, alpha: float) -> "PauliChannel":
        """Channel with every error probability multiplied by ``alpha``."""
        alpha = check_real(alpha, "alpha", minimum=0.0)
        p = self.probs.copy() * alpha
        p[0] = 1.0 - p[1:].sum()
        if p[0] < 0:
            raise InputDomainError(f"alpha={alpha} pushes the error probability above 1")
        return PauliChannel(p)

    def insertion_probs(self, alpha: float) -> np.ndarray:
        """Per-gate probabilities ``(alpha - 1) p_j`` of the extra Pauli, identity first."""
        alpha = check_real(alpha, "alpha", minimum=1.0)
        q = self.probs.copy() * (alpha - 1.0)
        q[0] = 1.0 - q[1:].sum()
        if q[0] < 0:
            raise InputDomainError(f"alpha={alpha} gives insertion probability above 1")
        return q

    def to_json(self, **metadata) -> str:
        doc = {"probs": self.to_dict(), "metadata": {"total_infidelity": self.average_infidelity, **metadata}}
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> tuple["PauliChannel", dict]:
        doc = json.loads(text)
        if "probs" not in doc:
            raise InputDomainError("noise-model document has no 'probs' entry")
        return cls.from_dict(doc["probs"]), dict(doc.get("metadata", {}))
