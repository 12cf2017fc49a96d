import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import lambertw

from conftest import quench
from floqising.circuit import build_trotter
from floqising.exceptions import ExtrapolationError, InputDomainError
from floqising.mitigation import (
    ZeroNoiseRegressor,
    ZNEPlan,
    ZNRBins,
    bootstrap_zne,
    lambert_w0,
    mitigate_tables,
    optimal_r_fixed_alpha,
    optimal_ratio_R,
    optimal_zne_params,
    post_selected,
    rescale_alpha,
    zne_extrapolate,
    zne_variance_proxy,
    znr_fit,
    znr_toy_dataset,
)
from floqising.simulator import NoiseConfig, run_noisy_shots


@given(st.floats(-1 / math.e + 1e-12, 1e6))
def test_lambert_matches_scipy(x):
    assert lambert_w0(x) == pytest.approx(float(lambertw(x).real), rel=1e-12, abs=1e-13)


def test_lambert_edges():
    assert lambert_w0(0.0) == 0.0
    assert lambert_w0(-1 / math.e) == pytest.approx(-1.0)
    assert lambert_w0(math.e) == pytest.approx(1.0)
    with pytest.raises(InputDomainError):
        lambert_w0(-0.5)


def _nelder_mead(zeta, kappa=1.0):
    def f(p):
        a, r = p
        if a <= 1 or not 0 < r < 1:
            return np.inf
        return zne_variance_proxy(a, r, zeta, kappa)

    plan = optimal_zne_params(zeta, kappa, alpha_cap=np.inf)
    res = minimize(f, [plan.alpha * 1.3, 0.5], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 5000})
    return res.x


@pytest.mark.parametrize("zeta", [0.1, 0.3, 1.0])
@pytest.mark.parametrize("kappa", [1.0, 2.5])
def test_plan_is_the_proxy_minimum(zeta, kappa):
    plan = optimal_zne_params(zeta, kappa, alpha_cap=np.inf)
    alpha, r = _nelder_mead(zeta, kappa)
    assert plan.alpha == pytest.approx(alpha, rel=1e-4)
    assert plan.r == pytest.approx(r, rel=1e-4)
    # the base and amplified signals sit at the optimal ratio
    assert math.exp(-zeta * (plan.alpha - 1)) == pytest.approx(optimal_ratio_R(kappa))


def test_plan_clamps_alpha():
    plan = optimal_zne_params(0.05)
    assert plan.clamped and plan.alpha == 10.0
    assert plan.r == pytest.approx(optimal_r_fixed_alpha(10.0, 0.05))
    rs = np.linspace(0.01, 0.99, 981)
    best = rs[np.argmin([zne_variance_proxy(10.0, r, 0.05) for r in rs])]
    assert plan.r == pytest.approx(best, abs=1e-3)
    assert plan.shot_split(1000) == (864, 136)


def test_plan_validation():
    with pytest.raises(InputDomainError):
        optimal_zne_params(0.0)
    with pytest.raises(InputDomainError):
        ZNEPlan(0.5, 0.5, 0.3)


def test_extrapolation_recovers_exponential():
    z0, zeta, alpha = 0.8, 0.2, 3.0
    o0, o1 = z0 * math.exp(-zeta), z0 * math.exp(-zeta * alpha)
    est = zne_extrapolate(o0, o1, alpha, err0=0.01, err1=0.01)
    assert est.value == pytest.approx(z0)
    assert est.stderr > 0
    widened = zne_extrapolate(o0, o1, alpha, err0=0.01, err1=0.01, alpha_prime_err=0.2)
    assert widened.stderr > est.stderr
    shifted = zne_extrapolate(o0 + 0.1, o1 + 0.1, alpha, offset=0.1)
    assert shifted.value == pytest.approx(z0 + 0.1)


def test_perturbation_invariance():
    # the extrapolated value depends only on (alpha - 1) / eta
    assert rescale_alpha(5.0, 2.0) == pytest.approx(3.0)
    o0, o1 = 0.5, 0.2
    a = zne_extrapolate(o0, o1, rescale_alpha(5.0, 2.0)).value
    b = zne_extrapolate(o0, o1, 3.0).value
    assert a == b


@pytest.mark.parametrize(("o0", "o1", "ap"), [(0.5, -0.1, 3.0), (0.0, 0.1, 3.0), (0.5, 0.2, 1.0)])
def test_extrapolation_errors(o0, o1, ap):
    with pytest.raises(ExtrapolationError):
        zne_extrapolate(o0, o1, ap)


def test_bootstrap_zne(rng):
    v0 = rng.normal(0.5, 0.1, 2000)
    v1 = rng.normal(0.2, 0.1, 2000)
    est = bootstrap_zne(v0, v1, 3.0, rng=1)
    ref = zne_extrapolate(v0.mean(), v1.mean(), 3.0, err0=v0.std() / math.sqrt(2000), err1=v1.std() / math.sqrt(2000))
    assert est.value == pytest.approx(ref.value)
    assert est.stderr == pytest.approx(ref.stderr, rel=0.3)


def test_znr_noiseless_bins_are_exact():
    m = np.arange(6)
    bins = ZNRBins(m, np.full(6, 1000), 0.5 * np.exp(-0.3 * m) + 0.1, np.full(6, 1e-4))
    reg = ZeroNoiseRegressor().fit(bins)
    assert reg.method_ == "fit"
    assert reg.estimate_ == pytest.approx(0.6, abs=1e-6)
    np.testing.assert_allclose(reg.predict(m), bins.means, atol=1e-6)


def test_znr_fallbacks():
    two = ZNRBins([0, 1], [100, 100], [0.5, 0.4], [0.01, 0.01])
    reg = ZeroNoiseRegressor(asymptote=0.1).fit(two)
    assert reg.method_ == "pinned_fit"
    assert reg.estimate_ == pytest.approx(0.5, abs=1e-6)
    assert ZeroNoiseRegressor().fit(two).method_ == "smallest_bin"
    one = ZNRBins([2], [100], [0.3], [0.01])
    assert znr_fit(one) == (0.3, 0.01)
    sparse = ZNRBins([0, 1], [3, 5], [0.5, 0.3], [0.1, 0.1])
    with pytest.warns(RuntimeWarning):
        reg = ZeroNoiseRegressor().fit(sparse)
    assert reg.method_ == "pooled"
    assert reg.estimate_ == pytest.approx((3 * 0.5 + 5 * 0.3) / 8)


def test_znr_degenerate_free_fit_falls_back_to_pinned():
    # nearly flat bins leave a, b and c unresolved by the three-parameter fit
    bins = ZNRBins([0, 1, 2], [500, 300, 100], [0.62, 0.61, 0.60], [0.01, 0.015, 0.03])
    reg = ZeroNoiseRegressor(asymptote=0.1).fit(bins)
    assert reg.method_ == "pinned_fit"
    assert reg.stderr_ < 0.02
    assert ZeroNoiseRegressor().fit(bins).method_ == "smallest_bin"


def test_znr_toy_recovers_truth():
    hits = 0
    for seed in range(30):
        values, m = znr_toy_dataset(20, seed, shots=2000)
        est, err = znr_fit(ZNRBins.from_shots(values, m), asymptote=1 / 56)
        hits += abs(est - (0.53 + 1 / 56)) < 2 * err
    assert hits >= 25


def test_post_selection():
    bins = ZNRBins([0, 1], [10, 20], [0.5, 0.4], [0.1, 0.1])
    assert post_selected(bins) == (0.5, 0.1)
    assert math.isnan(post_selected(ZNRBins([1], [10], [0.4], [0.1]))[0])


def test_mitigate_tables_pipeline():
    spec = quench(2, 2, 3, theta=0.0)
    c = build_trotter(spec)
    raw = run_noisy_shots(c, NoiseConfig(leak_prob_2q=0.02), spec, 200, seed=1)
    amp = run_noisy_shots(c, NoiseConfig(leak_prob_2q=0.06), spec, 200, seed=2)
    reports = mitigate_tables(raw, amp, optimal_zne_params(0.3))
    assert [r.s for r in reports] == [0, 1, 2, 3]
    assert reports[0].mitigated[0] == pytest.approx(1.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        only = mitigate_tables(raw, None, None)
    assert any("ZNR-only" in str(w.message) for w in caught)
    assert all(r.note == "znr-only" for r in only)
    with pytest.raises(InputDomainError):
        mitigate_tables(raw, amp[:2], optimal_zne_params(0.3))
