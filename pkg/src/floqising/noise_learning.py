"""Learning a two-qubit Pauli channel from cycle-benchmarking decays.

Each non-identity Pauli ``P_j`` is prepared, pushed through ``l`` noisy
cycles of the ZZ gate (ideal rotation compiled out) and measured.  Paulis
commuting with ``Z Z`` decay as ``A f^l``; anticommuting ones also rotate
under a residual coherent ZZ angle and decay as ``A f^l cos(theta_eps l)``.
The fitted fidelities are turned into error probabilities with the inverse
Hadamard transform.
"""

from __future__ import annotations

import datetime as _dt
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_random_state
from .channel import (
    ANTICOMMUTES_WITH_ZZ,
    NEGATIVE_PROB_TOL,
    SIGNS,
    ZZ_PARTNER,
    PauliChannel,
    fidelities_to_probs,
    probs_to_fidelities,
)
from .circuit import Circuit, Gate, Moment
from .exceptions import FitFailure, InconsistentSpectrumError, InputDomainError
from .pauli import TWO_QUBIT_LABELS, PauliString
from .simulator import NoiseConfig, run_density_matrix

DEFAULT_LENGTHS = (4, 80, 160)
NONTRIVIAL = tuple(range(1, 16))

__all__ = [
    "PauliChannel",
    "probs_to_fidelities",
    "fidelities_to_probs",
    "symmetrized_fidelity",
    "zz_partner_label",
    "CBDecayData",
    "simulate_cb_experiment",
    "CBResult",
    "CycleBenchmarkFit",
    "fit_cb",
    "write_noise_model",
    "read_noise_model",
]


def zz_partner_label(label: str) -> str:
    """Label of ``u(j)``: ``label`` conjugated by a quarter-turn ZZ rotation, sign dropped."""
    return TWO_QUBIT_LABELS[ZZ_PARTNER[TWO_QUBIT_LABELS.index(label.upper())]]


def symmetrized_fidelity(f_j: float, f_partner: float) -> float:
    """``sqrt(f_j * f_u(j))``, the combination a ZZ-gate benchmark can resolve."""
    prod = f_j * f_partner
    if prod < 0:
        raise FitFailure(f"fidelity product {prod:.3g} is negative")
    return math.sqrt(prod)


@dataclass
class CBDecayData:
    """Measured decays: ``means[k, i]`` is the estimate of Pauli ``labels[k]`` at ``lengths[i]``."""

    lengths: np.ndarray
    labels: tuple[str, ...]
    means: np.ndarray
    stderrs: np.ndarray
    shots: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=int)
        self.means = np.asarray(self.means, dtype=float)
        self.stderrs = np.asarray(self.stderrs, dtype=float)
        shape = (len(self.labels), self.lengths.size)
        if self.means.shape != shape or self.stderrs.shape != shape:
            raise InputDomainError(f"means and stderrs must have shape {shape}")
        if np.any(np.abs(self.means) > 1 + 1e-12):
            raise InputDomainError("Pauli expectations must lie in [-1, 1]")

    @property
    def anticommuting(self) -> np.ndarray:
        return np.array([ANTICOMMUTES_WITH_ZZ[TWO_QUBIT_LABELS.index(lab)] for lab in self.labels])


def _cycle_circuit(length: int, theta_eps: float) -> Circuit:
    moments = tuple(Moment("zz", k + 1, (Gate.zz(0, 1, theta_eps),)) for k in range(length))
    return Circuit(2, moments, (), {})


def simulate_cb_experiment(
    true_channel: PauliChannel,
    theta_eps: float,
    shots: int | None,
    rng,
    *,
    lengths=DEFAULT_LENGTHS,
    spam: float = 1.0,
) -> CBDecayData:
    """Simulate benchmarking decays for all 15 non-identity Paulis.

    Each Pauli starts in the mixture of its +1 eigenstates, ``(I + P)/4``,
    and evolves through ``l`` cycles of the channel followed by a coherent
    ``U_ZZ(theta_eps)``.  ``spam`` scales every expectation.  With
    ``shots=None`` the exact expectations are returned with zero error bars.
    """
    lengths = np.asarray(sorted(int(v) for v in lengths))
    if lengths.size < 1 or lengths[0] < 0:
        raise InputDomainError("sequence lengths must be non-negative")
    rng = check_random_state(rng) if shots is not None else None
    noise = NoiseConfig(two_qubit_channel=true_channel)
    circuit = _cycle_circuit(int(lengths[-1]), theta_eps)
    means = np.zeros((15, lengths.size))
    errs = np.zeros_like(means)
    for k, j in enumerate(NONTRIVIAL):
        P = PauliString.from_label(TWO_QUBIT_LABELS[j]).to_matrix()
        rho0 = (np.eye(4) + P) / 4
        states = run_density_matrix(circuit, rho0, noise, per_step=True)
        for i, l in enumerate(lengths):
            exact = spam * float(np.real(np.trace(P @ states[l])))
            exact = min(1.0, max(-1.0, exact))
            if shots is None:
                means[k, i] = exact
            else:
                ups = rng.binomial(shots, 0.5 * (1 + exact))
                means[k, i] = 2.0 * ups / shots - 1.0
                errs[k, i] = max(math.sqrt(max(1 - means[k, i] ** 2, 0.0) / shots), 1.0 / shots)
    meta = {"theta_eps": theta_eps, "spam": spam}
    return CBDecayData(lengths, tuple(TWO_QUBIT_LABELS[j] for j in NONTRIVIAL), means, errs, shots, meta)


@dataclass
class CBResult:
    channel: PauliChannel
    fidelities: np.ndarray
    fidelity_errors: np.ndarray
    prob_errors: np.ndarray
    raw_probs: np.ndarray
    spam: np.ndarray
    theta_eps: float
    theta_eps_error: float
    excluded: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "probs": self.channel.to_dict(),
            "prob_errors": dict(zip(TWO_QUBIT_LABELS, map(float, self.prob_errors))),
            "fidelities": dict(zip(TWO_QUBIT_LABELS, map(float, self.fidelities))),
            "fidelity_errors": dict(zip(TWO_QUBIT_LABELS, map(float, self.fidelity_errors))),
            "theta_eps": self.theta_eps,
            "theta_eps_error": self.theta_eps_error,
            "theta_eps_shared": True,
            "average_infidelity": self.channel.average_infidelity,
            "excluded": list(self.excluded),
        }


def _weights(stderr):
    floor = np.maximum(stderr, 1e-9)
    return 1.0 / floor


def _start_values(lengths, means):
    pos = np.clip(means, 1e-6, None)
    if lengths.size > 1 and lengths[-1] > lengths[0]:
        f = (pos[-1] / pos[0]) ** (1.0 / (lengths[-1] - lengths[0]))
    else:
        f = 1.0
    f = float(np.clip(f, 0.5, 1.0))
    return float(pos[0] / f ** lengths[0]), f


def _covariance(jac, cost_scale=1.0):
    jtj = jac.T @ jac
    return np.linalg.pinv(jtj) * cost_scale


def _fit_commuting(lengths, means, errs):
    w = _weights(errs)
    a0, f0 = _start_values(lengths, means)

    def resid(p):
        return (p[0] * p[1] ** lengths - means) * w

    sol = least_squares(resid, [a0, f0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    if not sol.success or not np.all(np.isfinite(sol.x)):
        raise FitFailure("commuting decay fit did not converge")
    return sol.x, _covariance(sol.jac)


def _fit_anticommuting(lengths, means, errs):
    """Joint fit of all anticommuting decays with one shared coherent angle."""
    k = means.shape[0]
    w = _weights(errs)
    starts = [_start_values(lengths, means[i]) for i in range(k)]

    def model(p):
        a, f, th = p[:k], p[k : 2 * k], p[-1]
        return a[:, None] * f[:, None] ** lengths[None, :] * np.cos(th * lengths)[None, :]

    def resid(p):
        return ((model(p) - means) * w).ravel()

    # profile the angle on a grid first: cos is flat at zero, so start away from it
    best = None
    for th in np.linspace(0.0, 0.5 * math.pi / max(lengths[-1], 1), 101):
        c = np.cos(th * lengths)
        if np.any(c <= 0.05):
            continue
        p0 = np.concatenate([[s[0] for s in starts], [s[1] for s in starts], [th]])
        adj = np.clip(means / c[None, :], 1e-6, None)
        for i in range(k):
            p0[i], p0[k + i] = _start_values(lengths, adj[i])
        cost = float(np.sum(resid(p0) ** 2))
        if best is None or cost < best[0]:
            best = (cost, p0)
    p0 = best[1]
    p0[-1] = max(p0[-1], 1e-5)
    sol = least_squares(resid, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    if not sol.success or not np.all(np.isfinite(sol.x)):
        raise FitFailure("anticommuting decay fit did not converge")
    x = sol.x.copy()
    x[-1] = abs(x[-1])
    return x, _covariance(sol.jac)


class CycleBenchmarkFit(BaseEstimator):
    """Fit benchmarking decays to Pauli fidelities and error probabilities.

    The shared coherent angle is only identifiable while
    ``theta_eps * max(lengths) < pi / 2``; larger angles alias.

    Parameters
    ----------
    negative_sigma : float
        Estimated probabilities more negative than ``1e-6 + negative_sigma``
        standard errors are treated as an inconsistent spectrum.  Smaller
        negative values come from fit noise and are clipped to zero.

    Attributes
    ----------
    fidelities_ : ndarray of shape (16,)
    fidelity_errors_ : ndarray of shape (16,)
    channel_ : PauliChannel
    prob_errors_ : ndarray of shape (16,)
    spam_ : ndarray of shape (15,)
    theta_eps_, theta_eps_error_ : float
    """

    def __init__(self, negative_sigma: float = 5.0):
        self.negative_sigma = negative_sigma

    def fit(self, data: CBDecayData, y=None):
        lengths = data.lengths
        if len(set(lengths.tolist())) < 3:
            raise InputDomainError("need at least three distinct sequence lengths per Pauli")
        index = {lab: TWO_QUBIT_LABELS.index(lab) for lab in data.labels}
        if sorted(index.values()) != list(NONTRIVIAL):
            raise InputDomainError("decays for all 15 non-identity Paulis are required")

        f = np.ones(16)
        cov_f = np.zeros((16, 16))
        spam = np.zeros(15)
        excluded = []
        anti_rows = [k for k, lab in enumerate(data.labels) if ANTICOMMUTES_WITH_ZZ[index[lab]]]
        for k, lab in enumerate(data.labels):
            if k in anti_rows:
                continue
            j = index[lab]
            try:
                (a, fj), cov = _fit_commuting(lengths, data.means[k], data.stderrs[k])
            except FitFailure:
                excluded.append(lab)
                warnings.warn(f"decay fit for {lab} failed; excluded", RuntimeWarning, stacklevel=2)
                continue
            f[j], cov_f[j, j], spam[k] = fj, cov[1, 1], a

        x, cov = _fit_anticommuting(lengths, data.means[anti_rows], data.stderrs[anti_rows])
        m = len(anti_rows)
        raw = {index[data.labels[k]]: (x[m + r], r) for r, k in enumerate(anti_rows)}
        for r, k in enumerate(anti_rows):
            spam[k] = x[r]
        for j, (fj, r) in raw.items():
            partner = ZZ_PARTNER[j]
            fu, ru = raw[partner]
            f[j] = symmetrized_fidelity(fj, fu)
            # gradient of sqrt(f_j f_u) with respect to the two fitted values
            g = np.zeros(2 * m + 1)
            g[m + r] += 0.5 * math.sqrt(fu / fj)
            g[m + ru] += 0.5 * math.sqrt(fj / fu)
            for j2, (fj2, r2) in raw.items():
                fu2, ru2 = raw[ZZ_PARTNER[j2]]
                g2 = np.zeros(2 * m + 1)
                g2[m + r2] += 0.5 * math.sqrt(fu2 / fj2)
                g2[m + ru2] += 0.5 * math.sqrt(fj2 / fu2)
                cov_f[j, j2] = g @ cov @ g2

        if excluded:
            raise FitFailure(f"cannot invert the spectrum without decays for {excluded}")

        raw_p = fidelities_to_probs(f, clip=False)
        cov_p = SIGNS @ cov_f @ SIGNS.T / 256.0
        sigma_p = np.sqrt(np.clip(np.diag(cov_p), 0.0, None))
        limit = -(NEGATIVE_PROB_TOL + self.negative_sigma * sigma_p)
        if np.any(raw_p < limit):
            worst = int(np.argmin(raw_p - limit))
            raise InconsistentSpectrumError(
                f"fitted probability for {TWO_QUBIT_LABELS[worst]} is {raw_p[worst]:.3g}, "
                f"significantly below zero"
            )
        p = np.clip(raw_p, 0.0, None)
        if np.any(raw_p < -NEGATIVE_PROB_TOL):
            warnings.warn("clipping negative fitted probabilities consistent with zero", RuntimeWarning, stacklevel=2)
        p /= p.sum()

        self.fidelities_ = f
        self.fidelity_errors_ = np.sqrt(np.clip(np.diag(cov_f), 0.0, None))
        self.raw_probs_ = raw_p
        self.prob_errors_ = sigma_p
        self.channel_ = PauliChannel(p)
        self.spam_ = spam
        self.theta_eps_ = float(x[-1])
        self.theta_eps_error_ = float(math.sqrt(max(cov[-1, -1], 0.0)))
        self.labels_ = tuple(data.labels)
        self.excluded_ = tuple(excluded)
        return self

    def predict(self, lengths) -> np.ndarray:
        """Model decays ``(15, len(lengths))`` for the fitted parameters."""
        check_is_fitted(self, "fidelities_")
        lengths = np.asarray(lengths, dtype=float)
        out = np.zeros((len(self.labels_), lengths.size))
        for k, lab in enumerate(self.labels_):
            j = TWO_QUBIT_LABELS.index(lab)
            curve = self.spam_[k] * self.fidelities_[j] ** lengths
            if ANTICOMMUTES_WITH_ZZ[j]:
                curve = curve * np.cos(self.theta_eps_ * lengths)
            out[k] = curve
        return out

    def result(self) -> CBResult:
        check_is_fitted(self, "fidelities_")
        return CBResult(
            self.channel_,
            self.fidelities_,
            self.fidelity_errors_,
            self.prob_errors_,
            self.raw_probs_,
            self.spam_,
            self.theta_eps_,
            self.theta_eps_error_,
            self.excluded_,
        )


def fit_cb(data: CBDecayData, **params) -> CBResult:
    return CycleBenchmarkFit(**params).fit(data).result()


def write_noise_model(path, channel: PauliChannel, *, theta_eps: float = 0.0, timestamp: str | None = None, **extra):
    """Write the key-value noise-model document consumed by amplification and simulation."""
    stamp = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    text = channel.to_json(theta_eps=theta_eps, timestamp=stamp, **extra)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def read_noise_model(path) -> tuple[PauliChannel, dict]:
    with open(path, encoding="utf-8") as fh:
        return PauliChannel.from_json(fh.read())
