"""Zero-noise extrapolation (ZNE) and zero-noise regression (ZNR).

ZNE assumes an observable decays exponentially with the gate-noise level,
``O(p) = O(0) exp(-b p)``, measures it at the base level ``p0`` and at
``alpha * p0``, and extrapolates.  The shot split ``r`` and the amplification
``alpha`` are chosen to minimise the variance of the extrapolated value.

ZNR bins shots by the number ``m`` of heralded errors and fits
``a exp(-b m) + c`` across bins, reporting the value at ``m = 0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import curve_fit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_random_state, check_real
from .exceptions import ExtrapolationError, InputDomainError
from .simulator import ShotTable, ztot2_per_shot

INV_E = math.exp(-1.0)
DEFAULT_ALPHA_CAP = 10.0


def lambert_w0(x: float) -> float:
    """Principal branch of the Lambert W function by guarded Halley iteration."""
    x = float(x)
    if not math.isfinite(x):
        if x == math.inf:
            return math.inf
        raise InputDomainError("lambert_w0 needs a finite argument")
    if x < -INV_E:
        if x > -INV_E - 1e-15:
            return -1.0
        raise InputDomainError(f"lambert_w0 is undefined below -1/e, got {x}")
    if x == 0.0:
        return 0.0
    if x < -0.32:
        # series about the branch point
        p = math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    elif x < 3.0:
        lp = math.log1p(x)
        w = lp * (1.0 - math.log1p(lp) / (2.0 + lp))
    else:
        lx = math.log(x)
        w = lx - math.log(lx)
    lo, hi = -1.0, max(1.0, math.log(x) if x > 1 else 1.0)
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        if f > 0:
            hi = min(hi, w)
        else:
            lo = max(lo, w)
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom if denom != 0 else 0.0
        w_new = w - step
        if not (lo <= w_new <= hi) or not math.isfinite(w_new):
            w_new = 0.5 * (lo + hi)
        if abs(w_new - w) <= 1e-16 * (1.0 + abs(w_new)):
            w = w_new
            break
        w = w_new
    return w


def gamma_kappa(kappa: float) -> float:
    """``W(1 / (e sqrt(kappa)))``."""
    kappa = check_real(kappa, "kappa", minimum=0.0, strict_min=True)
    return lambert_w0(1.0 / (math.e * math.sqrt(kappa)))


def zne_variance_proxy(alpha: float, r: float, zeta: float, kappa: float = 1.0) -> float:
    """Variance of the two-point exponential extrapolation, up to a constant.

    With ``O1/O0 = exp(-zeta (alpha - 1))`` and shot fractions ``r`` and
    ``1 - r`` this is ``[alpha^2 e^{2 zeta} / r + kappa e^{2 alpha zeta} / (1 - r)] / (alpha - 1)^2``.
    """
    return (alpha**2 * math.exp(2 * zeta) / r + kappa * math.exp(2 * alpha * zeta) / (1 - r)) / (alpha - 1) ** 2


def optimal_r_fixed_alpha(alpha: float, zeta: float, kappa: float = 1.0) -> float:
    """Best shot fraction at the base noise level for a given ``alpha``."""
    a = alpha * math.exp(zeta)
    b = math.sqrt(kappa) * math.exp(alpha * zeta)
    return a / (a + b)


@dataclass(frozen=True)
class ZNEPlan:
    alpha: float
    r: float
    zeta: float
    kappa: float = 1.0
    alpha_cap: float = DEFAULT_ALPHA_CAP
    clamped: bool = False

    def __post_init__(self):
        if self.alpha < 1:
            raise InputDomainError("alpha must be >= 1")
        if not 0 < self.r < 1:
            raise InputDomainError("r must lie strictly between 0 and 1")
        if self.zeta <= 0:
            raise InputDomainError("zeta must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def shot_split(self, total_shots: int) -> tuple[int, int]:
        base = int(round(self.r * total_shots))
        return base, total_shots - base


def optimal_zne_params(zeta: float, kappa: float = 1.0, alpha_cap: float = DEFAULT_ALPHA_CAP) -> ZNEPlan:
    """Amplification and shot split minimising :func:`zne_variance_proxy`.

    ``alpha = (1 + gamma + zeta) / zeta`` and
    ``r = 1 - zeta / ((gamma + zeta) (1 + gamma))`` with
    ``gamma = W(1 / (e sqrt(kappa)))``.  If ``alpha`` exceeds ``alpha_cap`` it
    is clamped and ``r`` re-optimised for the clamped value.
    """
    zeta = check_real(zeta, "zeta", minimum=0.0, strict_min=True)
    kappa = check_real(kappa, "kappa", minimum=0.0, strict_min=True)
    gamma = gamma_kappa(kappa)
    alpha = (1.0 + gamma + zeta) / zeta
    r = 1.0 - zeta / ((gamma + zeta) * (1.0 + gamma))
    if alpha > alpha_cap:
        alpha = float(alpha_cap)
        r = optimal_r_fixed_alpha(alpha, zeta, kappa)
        return ZNEPlan(alpha, r, zeta, kappa, alpha_cap, clamped=True)
    return ZNEPlan(alpha, r, zeta, kappa, alpha_cap)


def optimal_ratio_R(kappa: float = 1.0) -> float:
    """Optimal ``O1 / O0`` between amplified and base estimates, ``exp(-(1 + gamma))``."""
    return math.exp(-(1.0 + gamma_kappa(kappa)))


def rescale_alpha(alpha: float, eta: float) -> float:
    """Effective amplification when the base error rate drifted by a factor ``eta``."""
    eta = check_real(eta, "eta", minimum=0.0, strict_min=True)
    return (alpha - 1.0) / eta + 1.0


@dataclass(frozen=True)
class ZNEEstimate:
    value: float
    stderr: float
    alpha_prime: float
    alpha_prime_err: float = 0.0


def _extrapolate(o0, o1, ap):
    return o0 * (o0 / o1) ** (1.0 / (ap - 1.0))


def _propagated_error(o0, o1, ap, e0, e1):
    val = _extrapolate(o0, o1, ap)
    d0 = ap / (ap - 1.0) * val / o0
    d1 = -1.0 / (ap - 1.0) * val / o1
    return math.sqrt((d0 * e0) ** 2 + (d1 * e1) ** 2)


def zne_extrapolate(
    obs0: float,
    obs1: float,
    alpha_prime: float,
    *,
    err0: float = 0.0,
    err1: float = 0.0,
    alpha_prime_err: float = 0.0,
    offset: float = 0.0,
) -> ZNEEstimate:
    """Two-point exponential extrapolation ``O(0) = O0 (O0 / O1)^(1 / (alpha' - 1))``.

    The error bar is first-order propagation of ``err0`` and ``err1``.  When
    ``alpha_prime_err`` is given it becomes the larger of
    ``sqrt(|O(a') - O(a' -+ da')|^2 + dO(a' -+ da')^2)`` over both signs.
    A nonzero ``offset`` extrapolates ``O - offset`` instead, for observables
    that decay towards a known infinite-noise value.
    """
    o0, o1 = float(obs0) - offset, float(obs1) - offset
    ap = float(alpha_prime)
    if ap <= 1.0:
        raise ExtrapolationError("alpha' must exceed 1 for extrapolation")
    if o0 == 0 or o1 == 0 or (o0 > 0) != (o1 > 0):
        raise ExtrapolationError(f"exponential model needs same-sign, nonzero inputs (got {o0}, {o1})")
    value = _extrapolate(o0, o1, ap)
    err = _propagated_error(o0, o1, ap, err0, err1)
    if alpha_prime_err > 0:
        cands = []
        for shifted in (ap - alpha_prime_err, ap + alpha_prime_err):
            if shifted <= 1.0:
                raise ExtrapolationError("alpha' uncertainty reaches alpha' <= 1")
            v = _extrapolate(o0, o1, shifted)
            e = _propagated_error(o0, o1, shifted, err0, err1)
            cands.append(math.sqrt((value - v) ** 2 + e**2))
        err = max(cands)
    return ZNEEstimate(value + offset, err, ap, float(alpha_prime_err))


def bootstrap(statistic, *samples, n_resamples: int = 100, rng=0) -> tuple[float, float]:
    """Resample every sample with replacement; return ``(statistic(samples), std over resamples)``."""
    rng = check_random_state(rng)
    check_int(n_resamples, "n_resamples", minimum=2)
    samples = [np.asarray(s) for s in samples]
    point = float(statistic(*samples))
    reps = np.empty(n_resamples)
    for k in range(n_resamples):
        reps[k] = statistic(*[s[rng.integers(0, len(s), len(s))] for s in samples])
    return point, float(np.std(reps, ddof=1))


def bootstrap_zne(values0, values1, alpha_prime: float, *, alpha_prime_err: float = 0.0, n_resamples: int = 100, rng=0) -> ZNEEstimate:
    """ZNE on per-shot values with bootstrap error bars and the alpha' max-rule."""

    def stat_at(ap):
        return lambda a, b: _extrapolate(a.mean(), b.mean(), ap)

    v0, v1 = np.asarray(values0, float), np.asarray(values1, float)
    seed = check_random_state(rng).integers(2**63)
    value, err = bootstrap(stat_at(alpha_prime), v0, v1, n_resamples=n_resamples, rng=seed)
    if alpha_prime_err > 0:
        cands = []
        for shifted in (alpha_prime - alpha_prime_err, alpha_prime + alpha_prime_err):
            v, e = bootstrap(stat_at(shifted), v0, v1, n_resamples=n_resamples, rng=seed)
            cands.append(math.sqrt((value - v) ** 2 + e**2))
        err = max(cands)
    return ZNEEstimate(value, err, alpha_prime, alpha_prime_err)


# ---------------------------------------------------------------------------
# ZNR


@dataclass
class ZNRBins:
    """Per-``m`` shot counts, means and standard errors, sorted by ``m``."""

    m: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=int)
        order = np.argsort(self.m)
        self.m = self.m[order]
        self.counts = np.asarray(self.counts, dtype=int)[order]
        self.means = np.asarray(self.means, dtype=float)[order]
        self.stderrs = np.asarray(self.stderrs, dtype=float)[order]
        if np.any(self.m < 0) or np.any(self.counts < 0):
            raise InputDomainError("bin keys and counts must be non-negative")
        if len(set(self.m.tolist())) != self.m.size:
            raise InputDomainError("duplicate m bins")

    @classmethod
    def from_shots(cls, values, m) -> "ZNRBins":
        values = np.asarray(values, dtype=float)
        m = np.asarray(m, dtype=int)
        if values.shape != m.shape or values.size == 0:
            raise InputDomainError("values and m must be non-empty and the same shape")
        keys = np.unique(m)
        counts, means, errs = [], [], []
        for k in keys:
            sel = values[m == k]
            counts.append(sel.size)
            means.append(sel.mean())
            errs.append(sel.std(ddof=1) / math.sqrt(sel.size) if sel.size > 1 else math.inf)
        return cls(keys, counts, means, errs)

    @property
    def n_bins(self) -> int:
        return int(self.m.size)

    def to_rows(self) -> list[dict]:
        return [
            {"m": int(k), "count": int(c), "mean": float(mu), "stderr": float(e)}
            for k, c, mu, e in zip(self.m, self.counts, self.means, self.stderrs)
        ]


def _decay(m, a, b, c):
    return a * np.exp(-b * m) + c


class ZeroNoiseRegressor(BaseEstimator):
    """Fit ``a exp(-b m) + c`` to binned means and predict the ``m = 0`` value.

    Parameters
    ----------
    min_shots : int
        Bins need more than this many shots to enter the fit.
    asymptote : float or None
        Value used for ``c`` when fewer than three bins are usable, or when
        the free fit is less precise than the lowest-``m`` bin alone (for
        ``Z_tot^2`` the infinite-temperature value ``1/N``).
    pin_offset : bool
        Always fix ``c`` to ``asymptote`` instead of fitting it.

    Attributes
    ----------
    estimate_, stderr_ : float
        Value and standard error at ``m = 0``.
    method_ : str
        ``"fit"``, ``"pinned_fit"``, ``"smallest_bin"`` or ``"pooled"``.
    coef_ : tuple of (a, b, c) or None
    """

    def __init__(self, min_shots: int = 20, asymptote: float | None = None, pin_offset: bool = False):
        self.min_shots = min_shots
        self.asymptote = asymptote
        self.pin_offset = pin_offset

    def fit(self, bins: ZNRBins, y=None):
        if bins.n_bins == 0:
            raise InputDomainError("ZNR needs at least one bin")
        use = (bins.counts > self.min_shots) & np.isfinite(bins.stderrs)
        self.coef_ = None
        self.n_used_ = int(use.sum())
        if not use.any():
            warnings.warn("no bin has enough shots for ZNR; returning the pooled mean", RuntimeWarning, stacklevel=2)
            n = bins.counts.astype(float)
            self.estimate_ = float(np.sum(n * bins.means) / n.sum())
            errs = np.where(np.isfinite(bins.stderrs), bins.stderrs, 0.0)
            self.stderr_ = float(math.sqrt(np.sum((n * errs) ** 2)) / n.sum())
            self.method_ = "pooled"
            return self
        m, mu, err = bins.m[use].astype(float), bins.means[use], np.maximum(bins.stderrs[use], 1e-12)
        if not (self.pin_offset or m.size < 3):
            free = self._try(self._fit_free, m, mu, err)
            # a near-degenerate free fit can be far less precise than the raw bins
            if free is not None and free[1] <= err[0] ** 2:
                return self._accept(free, "fit")
        if self.asymptote is None:
            return self._smallest(bins)
        pinned = self._try(self._fit_pinned, m, mu, err, float(self.asymptote)) if m.size > 1 else None
        if pinned is None:
            return self._smallest(bins)
        return self._accept(pinned, "pinned_fit")

    @staticmethod
    def _try(fitter, m, mu, err, *args):
        try:
            popt, pcov = fitter(m, mu, err, *args)
        except (RuntimeError, ValueError, np.linalg.LinAlgError):
            return None
        if len(popt) == 2:
            coef, var = (float(popt[0]), float(popt[1]), args[0]), pcov[0, 0]
        else:
            coef, var = tuple(float(v) for v in popt), pcov[0, 0] + pcov[2, 2] + 2 * pcov[0, 2]
        est = coef[0] + coef[2]
        if not (math.isfinite(est) and math.isfinite(var) and var >= 0):
            return None
        return coef, float(var)

    def _accept(self, result, method):
        self.coef_, var = result
        self.estimate_ = self.coef_[0] + self.coef_[2]
        self.stderr_ = math.sqrt(var)
        self.method_ = method
        return self

    def _smallest(self, bins):
        usable = np.flatnonzero(bins.counts > 0)
        k = usable[0]
        self.estimate_ = float(bins.means[k])
        self.stderr_ = float(bins.stderrs[k])
        self.method_ = "smallest_bin"
        self.coef_ = None
        return self

    @staticmethod
    def _fit_pinned(m, mu, err, c):
        shifted = mu - c
        pos = np.clip(shifted, 1e-9, None)
        b0 = -np.polyfit(m, np.log(pos), 1, w=pos / err)[0] if m.size > 1 else 0.1
        a0 = float(pos[0] * math.exp(b0 * m[0]))
        return curve_fit(
            lambda x, a, b: _decay(x, a, b, c), m, mu, p0=[a0, b0], sigma=err, absolute_sigma=True, maxfev=10000
        )

    @staticmethod
    def _fit_free(m, mu, err):
        c0 = float(mu.min() - 0.1 * abs(mu.max() - mu.min()))
        pos = np.clip(mu - c0, 1e-9, None)
        b0 = max(float(-np.polyfit(m, np.log(pos), 1, w=pos / err)[0]), 1e-3)
        a0 = float(pos[0] * math.exp(b0 * m[0]))
        return curve_fit(_decay, m, mu, p0=[a0, b0, c0], sigma=err, absolute_sigma=True, maxfev=20000)

    def predict(self, m) -> np.ndarray:
        check_is_fitted(self, "estimate_")
        m = np.asarray(m, dtype=float)
        if self.coef_ is None:
            return np.full(m.shape, self.estimate_)
        return _decay(m, *self.coef_)


def znr_fit(bins: ZNRBins, **params) -> tuple[float, float]:
    """ZNR estimate and standard error at ``m = 0``."""
    reg = ZeroNoiseRegressor(**params).fit(bins)
    return reg.estimate_, reg.stderr_


def post_selected(bins: ZNRBins) -> tuple[float, float]:
    """The ``m = 0`` bin alone (infinite error if it is empty)."""
    sel = np.flatnonzero(bins.m == 0)
    if sel.size == 0 or bins.counts[sel[0]] == 0:
        return math.nan, math.inf
    return float(bins.means[sel[0]]), float(bins.stderrs[sel[0]])


def znr_toy_dataset(s: int, rng, *, shots: int = 600, a: float = 0.53, b: float = 0.152, n_qubits: int = 56, rate: float = 6e-4):
    """Synthetic heralded data: ``m ~ Binomial(N, rate s)`` and values ``N(a e^{-b m} + 1/N, 2/sqrt(N))``."""
    rng = check_random_state(rng)
    m = rng.binomial(n_qubits, min(rate * s, 1.0), size=shots)
    values = rng.normal(a * np.exp(-b * m) + 1.0 / n_qubits, 2.0 / math.sqrt(n_qubits))
    return values, m


@dataclass
class MitigationReport:
    """Raw, noise-amplified, ZNR-only and ZNE+ZNR estimates at one step."""

    s: int
    raw: tuple[float, float]
    amplified: tuple[float, float] | None
    znr: tuple[float, float]
    znr_amplified: tuple[float, float] | None
    mitigated: tuple[float, float]
    alpha: float
    alpha_prime: float
    r: float
    eta: float
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def znr_from_table(table: ShotTable, *, asymptote: float | None = None, **params) -> tuple[float, float, ZNRBins]:
    """ZNR of per-shot ``Z_tot^2`` binned by herald count."""
    bins = ZNRBins.from_shots(ztot2_per_shot(table), table.m)
    if asymptote is None:
        asymptote = 1.0 / table.n_qubits
    reg = ZeroNoiseRegressor(asymptote=asymptote, **params).fit(bins)
    return reg.estimate_, reg.stderr_, bins


def _raw(table):
    v = ztot2_per_shot(table)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


def mitigate_tables(
    raw: list[ShotTable],
    amplified: list[ShotTable] | None,
    plan: ZNEPlan | None,
    *,
    eta: float = 1.0,
    offset: float = 0.0,
) -> list[MitigationReport]:
    """ZNR on each archive, then ZNE across the two noise levels, step by step.

    Without an amplified archive (or plan) the report carries the ZNR value
    as the mitigated estimate and says so in ``note``.
    """
    if amplified is not None and len(amplified) != len(raw):
        raise InputDomainError("raw and amplified archives cover different steps")
    if amplified is None or plan is None:
        warnings.warn("no noise-amplified archive; reporting ZNR-only estimates", RuntimeWarning, stacklevel=2)
    out = []
    for s, table in enumerate(raw):
        znr0, err0, _ = znr_from_table(table)
        if amplified is None or plan is None:
            out.append(MitigationReport(s, _raw(table), None, (znr0, err0), None, (znr0, err0), 1.0, 1.0, 1.0, eta, "znr-only"))
            continue
        znr1, err1, _ = znr_from_table(amplified[s])
        ap = rescale_alpha(plan.alpha, eta)
        note = ""
        if s == 0 or znr0 == znr1:
            mitigated = (znr0, err0)
            note = "no decay between noise levels"
        else:
            try:
                est = zne_extrapolate(znr0, znr1, ap, err0=err0, err1=err1, offset=offset)
                mitigated = (est.value, est.stderr)
            except ExtrapolationError as exc:
                mitigated = (znr0, err0)
                note = f"extrapolation skipped: {exc}"
        out.append(
            MitigationReport(
                s, _raw(table), _raw(amplified[s]), (znr0, err0), (znr1, err1), mitigated, plan.alpha, ap, plan.r, eta, note
            )
        )
    return out
