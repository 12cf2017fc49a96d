"""Physics analyses: energy profiles, hydrodynamic fits, Floquet-Magnus terms, thermal values."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np
from scipy import linalg, sparse
from scipy.optimize import brentq, curve_fit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_random_state, check_real
from .circuit import QuenchSpec
from .exceptions import FitFailure, InputDomainError
from .lattice import Lattice
from .pauli import PauliString
from .series import ObservableSeries
from .simulator import ShotTable, StateVector, edge_correlations, estimate_from_shots

DENSE_CAP = 16


class MeanFieldAngle(NamedTuple):
    theta: float
    saturated: bool


def mean_field_angle(h: float, J: float, z: int = 4) -> MeanFieldAngle:
    """Polar angle of the lowest-energy product state, ``arcsin(h / (z J))``.

    Outside ``|h / (z J)| <= 1`` the field wins, and ``+-pi/2`` is returned
    with ``saturated=True``.
    """
    h, J = check_real(h, "h"), check_real(J, "J")
    check_int(z, "z", minimum=1)
    if J == 0:
        if h == 0:
            raise InputDomainError("mean-field angle is undefined for h = J = 0")
        return MeanFieldAngle(math.copysign(math.pi / 2, h), True)
    ratio = h / (z * J)
    if abs(ratio) > 1:
        return MeanFieldAngle(math.copysign(math.pi / 2, ratio), True)
    return MeanFieldAngle(math.asin(ratio), False)


def hydro_initial_angles(lattice: Lattice, h: float = 2.0, J: float = -1.0, delta_theta: float = 2 * math.pi / 9) -> np.ndarray:
    """Hot stripe: ``pi`` on column ``L_x / 2``, ``theta_min + delta_theta`` elsewhere."""
    base = mean_field_angle(h, J).theta + delta_theta
    theta = np.full(lattice.n_sites, base)
    theta[lattice.column_of() == lattice.nx // 2] = math.pi
    return theta


# ---------------------------------------------------------------------------
# energy density


@dataclass
class EnergyProfile:
    """Exchange energy per site and its y-average per column."""

    site: np.ndarray
    site_err: np.ndarray
    column: np.ndarray
    column_err: np.ndarray
    lattice: Lattice

    def to_dict(self) -> dict:
        return {"column": self.column.tolist(), "column_err": self.column_err.tolist(), "lattice": self.lattice.to_dict()}


def _columns(site, lattice):
    cols = lattice.column_of()
    return np.array([site[cols == x].mean() for x in range(lattice.nx)])


def energy_density(source, lattice: Lattice, J: float = -1.0) -> EnergyProfile:
    """``E_i = (J/4) sum_{j in nbr(i)} <Z_i Z_j>`` and its column average.

    ``source`` is a :class:`StateVector`, a :class:`ShotTable`, or an array of
    per-site product-state angles.
    """
    n = lattice.n_sites
    if isinstance(source, ShotTable):
        site_est = estimate_from_shots(source, "site_energy", lattice=lattice, J=J)
        col_est = estimate_from_shots(source, "column_energy", lattice=lattice, J=J)
        return EnergyProfile(site_est.mean, site_est.stderr, col_est.mean, col_est.stderr, lattice)
    if isinstance(source, StateVector):
        pairs = [(i, j) for i in range(n) for j in lattice.neighbors(i)]
        corr = edge_correlations(source.probabilities(), n, pairs)
        site = np.zeros(n)
        for (i, _), c in zip(pairs, corr):
            site[i] += c
    else:
        cz = np.cos(np.asarray(source, dtype=float))
        if cz.shape != (n,):
            raise InputDomainError(f"need {n} product-state angles")
        site = np.array([cz[i] * sum(cz[j] for j in lattice.neighbors(i)) for i in range(n)])
    site = 0.25 * J * site
    col = _columns(site, lattice)
    return EnergyProfile(site, np.zeros(n), col, np.zeros(lattice.nx), lattice)


@dataclass
class FourierSeries:
    """``E(q, s) = sum_x exp(i q x) E(x, s) / sqrt(L_x)`` at ``q_n = 2 pi n / L_x``.

    ``noise_var`` is the shot-noise variance of each complex amplitude.
    """

    s: np.ndarray
    n_modes: np.ndarray
    amplitudes: np.ndarray
    noise_var: np.ndarray
    length: int

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=int)
        self.n_modes = np.asarray(self.n_modes, dtype=int)
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        self.noise_var = np.broadcast_to(np.asarray(self.noise_var, dtype=float), self.amplitudes.shape).copy()
        if self.amplitudes.shape != (self.s.size, self.n_modes.size):
            raise InputDomainError("amplitudes must have shape (steps, modes)")

    @property
    def q(self) -> np.ndarray:
        return 2 * np.pi * self.n_modes / self.length

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @classmethod
    def from_profiles(cls, s, columns, column_err=None, n_modes=(0, 1, 2, 3)) -> "FourierSeries":
        """Transform ``(steps, L_x)`` column energies; errors are treated as independent."""
        columns = np.asarray(columns, dtype=float)
        length = columns.shape[1]
        n_modes = np.asarray(n_modes, dtype=int)
        x = np.arange(length)
        phases = np.exp(1j * np.outer(x, 2 * np.pi * n_modes / length)) / math.sqrt(length)
        amps = columns @ phases
        if column_err is None:
            var = np.zeros(amps.shape)
        else:
            var = np.repeat((np.asarray(column_err, float) ** 2).sum(axis=1, keepdims=True) / length, n_modes.size, axis=1)
        return cls(s, n_modes, amps, var, length)

    @classmethod
    def from_energy_profiles(cls, s, profiles: list[EnergyProfile], n_modes=(0, 1, 2, 3)) -> "FourierSeries":
        return cls.from_profiles(s, [p.column for p in profiles], [p.column_err for p in profiles], n_modes)


def parseval_gap(columns) -> float:
    """``|sum_q |E(q)|^2 - sum_x E(x)^2|`` over the full set of ``L_x`` modes."""
    columns = np.asarray(columns, dtype=float)
    fs = FourierSeries.from_profiles([0], columns[None], n_modes=range(columns.size))
    return abs(fs.power.sum() - np.sum(columns**2))


# ---------------------------------------------------------------------------
# hydrodynamic fit


@dataclass
class ModeFit:
    n: int
    q: float
    gamma: float
    gamma_err: float
    amplitude: float
    offset: float
    n_points: int
    model: str
    excluded_s: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _power_sigma(power, var, real=False):
    """Standard deviation of ``|E + noise|^2`` for noise of total variance ``var``.

    Real modes (``q = 0`` and ``q = pi``) carry all the noise in one quadrature.
    """
    if real:
        return np.sqrt(4 * np.maximum(power, 0) * var + 2 * var**2)
    return np.sqrt(2 * np.maximum(power, 0) * var + var**2)


def _fit_mode(s, power, var, n, q, with_offset, real=False):
    debiased = power - var
    sig_p = _power_sigma(power, var, real)
    if np.all(var == 0):
        sig_p = np.full_like(power, 1e-3) * np.maximum(power, 1e-300)
    if not with_offset:
        # log-linear start (exact for noiseless data), then refine on the power scale
        y = np.log(debiased)
        w = debiased / sig_p
        X = np.stack([np.ones_like(s, dtype=float), -s.astype(float)], axis=1)
        Xw = X * w[:, None]
        coef, *_ = np.linalg.lstsq(Xw, y * w, rcond=None)
        cov = np.linalg.pinv(Xw.T @ Xw)
        log_a, gamma = float(coef[0]), float(coef[1])
        if np.any(var > 0):
            t = s.astype(float)
            for _ in range(3):
                sigma = _power_sigma(np.exp(log_a - gamma * t), var, real)
                try:
                    popt, cov = curve_fit(
                        lambda tt, la, g: np.exp(la - g * tt), t, debiased,
                        p0=[log_a, gamma], sigma=sigma, absolute_sigma=True, maxfev=10000,
                    )
                except (RuntimeError, ValueError):
                    break
                log_a, gamma = float(popt[0]), float(popt[1])
        err = math.sqrt(max(cov[1, 1], 0.0)) if np.isfinite(cov[1, 1]) else math.inf
        return ModeFit(n, q, gamma, err, math.exp(log_a), 0.0, len(s), "exponential")

    def model(t, log_a, gamma, c):
        return np.log(np.exp(log_a) * np.exp(-gamma * t) + c)

    y = np.log(debiased)
    sig_y = sig_p / debiased
    c0 = float(debiased[-1]) * 0.9
    a0 = max(float(debiased[0] - c0), 1e-12)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            popt, pcov = curve_fit(model, s.astype(float), y, p0=[math.log(a0), 0.1, c0], sigma=sig_y, maxfev=20000)
    except (RuntimeError, ValueError):
        return None
    err = math.sqrt(pcov[1, 1]) if np.isfinite(pcov[1, 1]) and pcov[1, 1] >= 0 else math.inf
    a = math.exp(popt[0])
    a_err = a * math.sqrt(pcov[0, 0]) if np.isfinite(pcov[0, 0]) else math.inf
    if not math.isfinite(err) or not a > 2 * a_err:
        return None
    return ModeFit(n, q, float(popt[1]), float(err), a, float(popt[2]), len(s), "exponential+offset")


class HydroFit(BaseEstimator):
    """Per-mode decay rates ``Gamma_q`` of ``|E(q)|^2`` and the diffusion constant.

    The ``q = 0`` mode is fitted as ``a exp(-Gamma s) + c``; when the data
    show no significant transient it falls back to a plain exponential,
    which then measures any residual drift.  Nonzero modes use ``a exp(-Gamma s)``.
    ``D`` comes from a weighted fit of ``Gamma_q = D q^2`` through the origin
    over the nonzero modes.

    Parameters
    ----------
    s_min : int
        First step used (transient cutoff).
    snr : float
        Points with ``|E(q)|^2 < snr * noise variance`` are excluded.
    min_points : int
        Modes with fewer usable points are skipped with a warning.
    """

    def __init__(self, s_min: int = 5, snr: float = 3.0, min_points: int = 3):
        self.s_min = s_min
        self.snr = snr
        self.min_points = min_points

    def fit(self, series: FourierSeries, y=None):
        self.modes_ = []
        self.skipped_ = []
        power = series.power
        for k, n in enumerate(series.n_modes):
            p, var = power[:, k], series.noise_var[:, k]
            window = series.s >= self.s_min
            good = (p > self.snr * var) & (p - var > 0)
            # stop at the first point that fails the cut so that upward
            # fluctuations in the noise floor are not cherry-picked
            usable = window & (np.cumsum(window & ~good) == 0)
            excluded = series.s[window & ~usable].tolist()
            if usable.sum() < self.min_points:
                warnings.warn(f"mode n={n} has only {int(usable.sum())} usable points; skipped", RuntimeWarning, stacklevel=2)
                self.skipped_.append(int(n))
                continue
            s = series.s[usable]
            real = n == 0 or 2 * n == series.length
            fit = None
            if n == 0:
                fit = _fit_mode(s, p[usable], var[usable], int(n), 0.0, True, real)
            if fit is None:
                fit = _fit_mode(s, p[usable], var[usable], int(n), float(series.q[k]), False, real)
            fit.excluded_s = excluded
            self.modes_.append(fit)
        nonzero = [m for m in self.modes_ if m.n != 0]
        if not nonzero:
            raise FitFailure("no nonzero mode survived the signal-to-noise cut")
        q2 = np.array([m.q**2 for m in nonzero])
        g = np.array([m.gamma for m in nonzero])
        err = np.array([m.gamma_err for m in nonzero])
        w = 1.0 / np.maximum(err, 1e-300) ** 2 if np.all(err > 0) else np.ones_like(g)
        self.diffusion_ = float(np.sum(w * q2 * g) / np.sum(w * q2**2))
        self.diffusion_err_ = float(1.0 / math.sqrt(np.sum(w * q2**2))) if np.all(err > 0) else 0.0
        return self

    def predict(self, q) -> np.ndarray:
        """Decay rate ``D q^2``."""
        check_is_fitted(self, "diffusion_")
        return self.diffusion_ * np.asarray(q, dtype=float) ** 2

    def report(self) -> dict:
        check_is_fitted(self, "diffusion_")
        return {
            "modes": [m.to_dict() for m in self.modes_],
            "skipped_modes": self.skipped_,
            "D": self.diffusion_,
            "D_err": self.diffusion_err_,
            "s_min": self.s_min,
            "snr": self.snr,
        }


def fit_hydro(series: FourierSeries, s_min: int = 5, **params) -> dict:
    return HydroFit(s_min=s_min, **params).fit(series).report()


def synthetic_hydro_columns(
    diffusion: float = 0.38,
    length: int = 14,
    steps: int = 30,
    *,
    width: int = 4,
    shots: int | None = None,
    rng=None,
    column_std: float = 0.5,
):
    """Column energies whose Fourier power decays exactly as ``exp(-D q^2 s)``.

    The initial profile is the hot-stripe product state on a ``length x width``
    strip.  With ``shots`` set, Gaussian noise of standard deviation
    ``column_std / sqrt(shots)`` is added per column and step.  Returns
    ``(s, columns, column_err)``.
    """
    lattice = Lattice(length, width)
    e0 = energy_density(hydro_initial_angles(lattice), lattice).column
    k = np.fft.fftfreq(length, d=1.0 / length)
    q = 2 * np.pi * k / length
    s = np.arange(steps + 1)
    spectrum = np.fft.fft(e0)[None, :] * np.exp(-0.5 * diffusion * q[None, :] ** 2 * s[:, None])
    columns = np.fft.ifft(spectrum, axis=1).real
    err = np.zeros_like(columns)
    if shots is not None:
        rng = check_random_state(rng)
        sigma = column_std / math.sqrt(shots)
        columns = columns + rng.normal(0.0, sigma, columns.shape)
        err[:] = sigma
    return s, columns, err


# ---------------------------------------------------------------------------
# Hamiltonians


class HamiltonianPauliSum:
    """Real linear combination of Pauli strings, keyed by label."""

    def __init__(self, n: int, terms: dict | None = None):
        self.n = n
        self.terms: dict[PauliString, float] = {}
        for p, c in (terms or {}).items():
            self.add(p, c)

    def add(self, p: PauliString, coef: float) -> None:
        if p.n != self.n:
            raise InputDomainError("Pauli string has the wrong number of qubits")
        self.terms[p] = self.terms.get(p, 0.0) + float(coef)

    def __add__(self, other: "HamiltonianPauliSum") -> "HamiltonianPauliSum":
        out = HamiltonianPauliSum(self.n, self.terms)
        for p, c in other.terms.items():
            out.add(p, c)
        return out

    def scaled(self, factor: float) -> "HamiltonianPauliSum":
        return HamiltonianPauliSum(self.n, {p: c * factor for p, c in self.terms.items()})

    def count(self, pattern: str) -> int:
        """Number of terms whose non-identity letters, read in site order, spell ``pattern``."""
        return sum(1 for p in self.terms if p.label.replace("I", "") == pattern and abs(self.terms[p]) > 0)

    def to_sparse(self) -> sparse.csr_matrix:
        dim = 1 << self.n
        out = sparse.csr_matrix((dim, dim), dtype=complex)
        for p, c in self.terms.items():
            out = out + c * p.to_sparse()
        return out.tocsr()

    def to_matrix(self) -> np.ndarray:
        if self.n > DENSE_CAP:
            raise InputDomainError(f"dense matrices are limited to {DENSE_CAP} qubits")
        return self.to_sparse().toarray()

    def to_dict(self) -> dict:
        return {p.label: c for p, c in sorted(self.terms.items())}


def ising_hamiltonian(lattice: Lattice, J: float, h: float) -> tuple[HamiltonianPauliSum, HamiltonianPauliSum]:
    """``(J sum_<ij> Z_i Z_j, h sum_i X_i)``."""
    n = lattice.n_sites
    zz = HamiltonianPauliSum(n)
    for a, b in lattice.edges:
        zz.add(PauliString.from_sites(n, {a: "Z", b: "Z"}), J)
    x = HamiltonianPauliSum(n)
    for q in range(n):
        x.add(PauliString.single(n, q, "X"), h)
    return zz, x


def bond_paths(lattice: Lattice) -> list[tuple[int, int, int]]:
    """Unordered two-bond paths ``(i, m, j)`` with ``i < j``, straight and bent."""
    out = []
    for m in range(lattice.n_sites):
        nbrs = sorted(set(lattice.neighbors(m)) - {m})
        for i, j in combinations(nbrs, 2):
            out.append((i, m, j))
    return out


def magnus_h2(spec: QuenchSpec) -> tuple[HamiltonianPauliSum, HamiltonianPauliSum]:
    """``(H0, dt^2 H2)`` of the symmetric Trotter step, from nested commutators.

    ``dt^2 H2 = (dt^2 h^2 J / 3) sum ZZ - (dt^2 h^2 J / 3) sum YY
    - (4 dt^2 J^2 h / 3) sum X - (2 dt^2 h J^2 / 3) sum_<imj> Z_i X_m Z_j``.

    The ``X`` coefficient scales with the number of distinct bonds per site,
    which is 4 except on tori with an axis of length 2.
    """
    lattice, J, h, dt = spec.lattice, spec.J, spec.h, spec.dt
    n = lattice.n_sites
    zz, x = ising_hamiltonian(lattice, J, h)
    h2 = HamiltonianPauliSum(n)
    d2 = dt * dt
    for a, b in lattice.edges:
        h2.add(PauliString.from_sites(n, {a: "Z", b: "Z"}), d2 * h * h * J / 3)
        h2.add(PauliString.from_sites(n, {a: "Y", b: "Y"}), -d2 * h * h * J / 3)
    for q in range(n):
        # -(4/3) on the square lattice; a length-2 axis leaves fewer distinct bonds
        degree = len(set(lattice.neighbors(q)) - {q})
        h2.add(PauliString.single(n, q, "X"), -degree * d2 * J * J * h / 3)
    for i, m, j in bond_paths(lattice):
        h2.add(PauliString.from_sites(n, {i: "Z", m: "X", j: "Z"}), -2 * d2 * h * J * J / 3)
    return zz + x, h2


def floquet_unitary(spec: QuenchSpec) -> np.ndarray:
    """Dense one-step unitary ``exp(-i H_X dt/2) exp(-i H_ZZ dt) exp(-i H_X dt/2)``."""
    zz, x = ising_hamiltonian(spec.lattice, spec.J, spec.h)
    if spec.n_sites > DENSE_CAP:
        raise InputDomainError(f"dense matrices are limited to {DENSE_CAP} qubits")
    half = linalg.expm(-0.5j * spec.dt * x.to_matrix())
    diag = np.exp(-1j * spec.dt * np.real(zz.to_sparse().diagonal()))
    return half @ (diag[:, None] * half)


def eigenphase_mismatch(spec: QuenchSpec, include_h2: bool = True) -> float:
    """Largest quasi-energy error of ``H0 (+ dt^2 H2)`` against the exact step unitary.

    Computed as ``max |arg eig(U exp(i H_eff dt))| / dt``, which avoids
    matching levels across the quasi-energy zone boundary.
    """
    h0, h2 = magnus_h2(spec)
    h_eff = (h0 + h2) if include_h2 else h0
    u = floquet_unitary(spec)
    w = u @ linalg.expm(1j * spec.dt * h_eff.to_matrix())
    return float(np.max(np.abs(np.angle(np.linalg.eigvals(w)))) / spec.dt)


# ---------------------------------------------------------------------------
# thermal references


def ztot2_operator(n: int) -> np.ndarray:
    """Diagonal of ``Z_tot^2`` in the computational basis."""
    idx = np.arange(1 << n)
    w = np.bitwise_count(idx.astype(np.uint64)).astype(float)
    return (n - 2 * w) ** 2 / n**2


@dataclass
class ThermalState:
    """Spectral decomposition for canonical averages."""

    energies: np.ndarray
    vectors: np.ndarray

    @classmethod
    def from_hamiltonian(cls, hamiltonian) -> "ThermalState":
        mat = hamiltonian.to_matrix() if isinstance(hamiltonian, HamiltonianPauliSum) else np.asarray(hamiltonian)
        e, v = np.linalg.eigh(mat)
        return cls(e, v)

    def _weights(self, beta):
        x = -beta * (self.energies - (self.energies[0] if beta >= 0 else self.energies[-1]))
        w = np.exp(x - x.max())
        return w / w.sum()

    def energy(self, beta: float) -> float:
        return float(self._weights(beta) @ self.energies)

    def average(self, observable, beta: float) -> float:
        """``Tr(exp(-beta H) O) / Tr(exp(-beta H))``; a 1-D observable is read as a diagonal."""
        obs = np.asarray(observable)
        if obs.ndim == 1:
            diag = np.einsum("ik,i,ik->k", self.vectors.conj(), obs, self.vectors).real
        else:
            diag = np.einsum("ik,ij,jk->k", self.vectors.conj(), obs, self.vectors).real
        return float(self._weights(beta) @ diag)

    def solve_beta(self, energy_target: float) -> float:
        lo, hi = self.energies[0], self.energies[-1]
        if not lo < energy_target < hi:
            raise InputDomainError(f"energy {energy_target} lies outside the spectrum ({lo}, {hi})")
        bound = 1.0
        while self.energy(bound) > energy_target:
            bound *= 2
            if bound > 1e6:
                raise InputDomainError("energy target too close to the ground state")
        low = -1.0
        while self.energy(low) < energy_target:
            low *= 2
            if low < -1e6:
                raise InputDomainError("energy target too close to the top of the spectrum")
        return float(brentq(lambda b: self.energy(b) - energy_target, low, bound, xtol=1e-12))


def thermal_reference(hamiltonian, observable, *, beta: float | None = None, energy_target: float | None = None):
    """Canonical expectation at given ``beta``, or ``(beta_eff, value)`` for a given energy."""
    if (beta is None) == (energy_target is None):
        raise InputDomainError("give exactly one of beta and energy_target")
    ts = ThermalState.from_hamiltonian(hamiltonian)
    if beta is not None:
        return ts.average(observable, check_real(beta, "beta"))
    b = ts.solve_beta(check_real(energy_target, "energy_target"))
    return b, ts.average(observable, b)


def product_state_energy(hamiltonian: HamiltonianPauliSum, theta) -> float:
    """``<psi|H|psi>`` for the product state with polar angles ``theta`` (Bloch vector in the x-z plane)."""
    theta = np.asarray(theta, dtype=float)
    bloch = {"X": np.sin(theta), "Y": np.zeros_like(theta), "Z": np.cos(theta)}
    total = 0.0
    for p, c in hamiltonian.terms.items():
        val = c
        for q in range(p.n):
            letter = p.letter(q)
            if letter != "I":
                val *= bloch[letter][q]
        total += val
    return float(total)


# ---------------------------------------------------------------------------
# smoothing


def time_average(series: ObservableSeries, window: int) -> ObservableSeries:
    """Centred moving average over ``window`` steps, shrinking at the ends."""
    window = check_int(window, "window", minimum=1)
    left, right = (window - 1) // 2, window // 2
    n = len(series)
    mean = np.empty(n)
    err = np.empty(n)
    for k in range(n):
        lo, hi = max(0, k - left), min(n, k + right + 1)
        mean[k] = series.mean[lo:hi].mean()
        err[k] = math.sqrt(np.sum(series.stderr[lo:hi] ** 2)) / (hi - lo)
    return ObservableSeries(series.s.copy(), mean, err, series.tag)
