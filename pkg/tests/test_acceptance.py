"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line (visible with
``pytest -s`` or in ``-v`` output) before asserting.
"""

import json
import math
import time
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize, minimize_scalar

from conftest import INTERMEDIATE, THETA_MIN, quench
from floqising.analysis import (
    FourierSeries,
    HydroFit,
    eigenphase_mismatch,
    ising_hamiltonian,
    synthetic_hydro_columns,
    thermal_reference,
    time_average,
    ztot2_operator,
)
from floqising.channel import PauliChannel, fidelities_to_probs, probs_to_fidelities
from floqising.circuit import CircuitRecipe, apply_dynamical_decoupling, apply_randomized_compiling, build_trotter
from floqising.cli import main
from floqising.lattice import Lattice
from floqising.mitigation import (
    ZNRBins,
    optimal_zne_params,
    post_selected,
    zne_extrapolate,
    zne_variance_proxy,
    znr_fit,
    znr_toy_dataset,
)
from floqising.noise_learning import fit_cb, simulate_cb_experiment
from floqising.series import ObservableSeries
from floqising.simulator import (
    NoiseConfig,
    expectation_ztot2,
    ideal_states_by_step,
    infinite_temperature_state,
    product_state,
    run_ideal,
    trajectory_expectations,
)
from floqising.spd import run_spd


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


def _ideal_series(spec):
    return np.array([expectation_ztot2(st) for _, st in ideal_states_by_step(build_trotter(spec), spec)])


def test_criterion_01_trivial_limits(report):
    t0 = time.perf_counter()
    polarized = _ideal_series(quench(3, 3, 1, theta=0.0))[0]
    n = 12
    equator = expectation_ztot2(product_state(np.full(n, math.pi / 2)))
    mixed = expectation_ztot2(infinite_temperature_state(n))
    zz, x = ising_hamiltonian(Lattice(2, 3), -1.0, 2.0)
    hot = thermal_reference(zz + x, ztot2_operator(6), beta=0.0)
    elapsed = time.perf_counter() - t0
    ok = (
        polarized == 1.0
        and math.isclose(equator, 1 / n, abs_tol=1e-14)
        and math.isclose(mixed, 1 / n, abs_tol=1e-14)
        and math.isclose(hot, 1 / 6, abs_tol=1e-14)
        and elapsed < 1.0
    )
    report(1, ok, f"theta=0 -> {polarized}, theta=pi/2 -> {equator * n:.12f}/N, mixed -> {mixed * n:.12f}/N, {elapsed:.2f}s")
    assert ok


def test_criterion_02_transform_equivalence(report):
    t0 = time.perf_counter()
    worst = 0.0
    for nx, ny in ((3, 3), (3, 4)):
        spec = quench(nx, ny, 5)
        base = build_trotter(spec)
        ref = run_ideal(base, spec)
        dd = apply_dynamical_decoupling(base)
        worst = max(worst, 1 - abs(ref.overlap(run_ideal(dd, spec))))
        for seed in range(20):
            rc = apply_randomized_compiling(base, seed)
            both = apply_randomized_compiling(dd, seed)
            worst = max(worst, 1 - abs(ref.overlap(run_ideal(rc, spec))), 1 - abs(ref.overlap(run_ideal(both, spec))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 60
    report(2, ok, f"max 1 - |overlap| = {worst:.2e} over DD, RC, DD+RC (20 seeds, 3x3 and 3x4), {elapsed:.1f}s")
    assert ok


def test_criterion_03_prethermal_vs_heating(report):
    t0 = time.perf_counter()
    n = 16
    plateau = {}
    for dt in (0.25, 1.0):
        values = _ideal_series(quench(4, 4, 30, theta=THETA_MIN, dt=dt))
        series = ObservableSeries(np.arange(31), values, np.zeros(31))
        plateau[dt] = float(series.window(20, 30).mean.mean())
        # the centred smoother agrees with the plain window mean in the middle of the window
        assert time_average(series, 11).mean[25] == pytest.approx(plateau[dt])
    elapsed = time.perf_counter() - t0
    ok = plateau[0.25] > 5 / n and plateau[1.0] < 2 / n and elapsed < 600
    report(3, ok, f"N<Z_tot^2> over s in [20,30]: dt=0.25 -> {plateau[0.25] * n:.3f} (>5), dt=1.0 -> {plateau[1.0] * n:.3f} (<2), {elapsed:.1f}s")
    assert ok


def test_criterion_04_spd_against_exact(report):
    t0 = time.perf_counter()
    spec = quench(3, 3, 20, theta=INTERMEDIATE)
    exact = _ideal_series(spec)
    res = run_spd(spec, delta=2.0**-16)
    err = float(np.max(np.abs(res.values - exact)))
    elapsed = time.perf_counter() - t0
    ok = err <= 0.02 and res.max_terms <= 4119 and not res.saturated and elapsed < 600
    report(4, ok, f"max_s |SPD - exact| = {err:.2e}, peak terms = {res.max_terms}, {elapsed:.1f}s")
    assert ok


def test_criterion_05_cycle_benchmarking(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    true = PauliChannel.random_symmetric(6e-4, rng)
    data = simulate_cb_experiment(true, 0.01, 10_000, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = fit_cb(data)
    pulls = np.abs(res.raw_probs[1:] - true.probs[1:]) / res.prob_errors[1:]
    covered = int(np.sum(pulls <= 3))
    involution = 0.0
    for _ in range(200):
        p = rng.dirichlet(np.ones(16))
        involution = max(involution, float(np.max(np.abs(fidelities_to_probs(probs_to_fidelities(p), clip=False) - p))))
    elapsed = time.perf_counter() - t0
    ok = covered >= 14 and involution <= 1e-12 and elapsed < 300
    report(5, ok, f"{covered}/15 Paulis within 3 sigma, transform round trip {involution:.1e}, {elapsed:.1f}s")
    assert ok


def _minimize_proxy(zeta):
    def objective(p):
        a, r = p
        if a <= 1 or not 0 < r < 1:
            return np.inf
        return zne_variance_proxy(a, r, zeta)

    res = minimize(objective, [3.0 / zeta, 0.5], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 10_000})
    return res.x


def test_criterion_06_zne(report):
    t0 = time.perf_counter()
    plan = optimal_zne_params(0.3, 1.0)
    a_num, r_num = _minimize_proxy(0.3)
    rel = max(abs(plan.alpha / a_num - 1), abs(plan.r / r_num - 1))

    grid_rel = 0.0
    for zeta in np.linspace(0.05, 2.0, 40):
        free = optimal_zne_params(zeta, alpha_cap=np.inf)
        a, r = _minimize_proxy(zeta)
        grid_rel = max(grid_rel, abs(free.alpha / a - 1), abs(free.r / r - 1))
        capped = optimal_zne_params(zeta)
        if capped.clamped:
            best = minimize_scalar(lambda r: zne_variance_proxy(capped.alpha, r, zeta), bounds=(1e-6, 1 - 1e-6), method="bounded")
            grid_rel = max(grid_rel, abs(capped.r / best.x - 1))

    spec = quench(3, 4, 20, theta=THETA_MIN)
    circuit = build_trotter(spec)
    ideal = _ideal_series(spec)
    channel = PauliChannel.random_symmetric(1e-3, 1)
    noise = NoiseConfig(two_qubit_channel=channel)
    # enough trajectories that the statistical error (under 1% per step) stays well below the 5% bias budget
    n_traj = 3200
    base = trajectory_expectations(CircuitRecipe(circuit), noise, spec, n_traj, 11)[:, :, 0]
    amp_recipe = CircuitRecipe(circuit, alpha=plan.alpha, channel=channel)
    amplified = trajectory_expectations(amp_recipe, noise, spec, n_traj, 12)[:, :, 0]
    root = math.sqrt(n_traj)
    estimates = [
        zne_extrapolate(o0, o1, plan.alpha, err0=e0, err1=e1)
        for o0, o1, e0, e1 in zip(
            base.mean(0)[1:], amplified.mean(0)[1:], base.std(0)[1:] / root, amplified.std(0)[1:] / root
        )
    ]
    mitigated = np.array([e.value for e in estimates])
    stat = float(np.max([e.stderr for e in estimates] / ideal[1:]))
    bias = float(np.max(np.abs(mitigated - ideal[1:]) / ideal[1:]))
    raw_bias = float(np.max(np.abs(base.mean(0)[1:] - ideal[1:]) / ideal[1:]))
    elapsed = time.perf_counter() - t0
    ok = rel <= 5e-3 and grid_rel <= 5e-3 and bias <= 0.05 and elapsed < 900
    report(
        6,
        ok,
        f"plan (alpha={plan.alpha:.4f}, r={plan.r:.4f}) vs numerical {rel:.1e}, zeta grid {grid_rel:.1e}, "
        f"3x4 ZNE max relative bias {bias:.1%} (stat. error up to {stat:.1%}; unmitigated {raw_bias:.1%}), {elapsed:.1f}s",
    )
    assert ok


def test_criterion_07_znr_toy(report):
    t0 = time.perf_counter()
    truth = 0.53 + 1 / 56
    shots = 10_000
    within, pulls = 0, []
    n_runs = 100
    for seed in range(n_runs):
        values, m = znr_toy_dataset(100, seed, shots=shots)
        est, err = znr_fit(ZNRBins.from_shots(values, m), asymptote=1 / 56)
        within += abs(est - truth) <= err
        pulls.append((est - truth) / err)
    frac = within / n_runs
    mean_pull = float(np.mean(pulls))
    # standard error comparison wherever mean(m) >= 2
    steps = [s for s in range(0, 101, 10) if 56 * 6e-4 * s >= 2]
    beats = []
    for s in steps:
        for seed in range(20):
            values, m = znr_toy_dataset(s, 1000 + seed, shots=shots)
            bins = ZNRBins.from_shots(values, m)
            beats.append(znr_fit(bins, asymptote=1 / 56)[1] < post_selected(bins)[1])
    elapsed = time.perf_counter() - t0
    ok = frac >= 0.6 and abs(mean_pull) * math.sqrt(n_runs) < 3 and all(beats) and elapsed < 60
    report(
        7,
        ok,
        f"s=100: {frac:.0%} of {n_runs} runs within 1 sigma of a+1/N (mean pull {mean_pull:+.2f}); "
        f"ZNR stderr < post-selection in {sum(beats)}/{len(beats)} runs at s in {steps}, {elapsed:.1f}s",
    )
    assert ok


def test_criterion_08_magnus_scaling(report):
    t0 = time.perf_counter()
    coarse = eigenphase_mismatch(quench(2, 3, 1, dt=0.2))
    fine = eigenphase_mismatch(quench(2, 3, 1, dt=0.1))
    ratio = coarse / fine
    elapsed = time.perf_counter() - t0
    ok = ratio >= 7 and elapsed < 60
    report(8, ok, f"mismatch {coarse:.3e} -> {fine:.3e}, ratio {ratio:.2f}, {elapsed:.1f}s")
    assert ok


def test_criterion_09_hydro_fit(report):
    t0 = time.perf_counter()
    s, cols, _ = synthetic_hydro_columns(0.38, length=14)
    exact = HydroFit().fit(FourierSeries.from_profiles(s, cols))
    noiseless_err = abs(exact.diffusion_ - 0.38)

    s, cols, err = synthetic_hydro_columns(0.38, length=14, shots=2000, rng=0)
    fit = HydroFit().fit(FourierSeries.from_profiles(s, cols, err))
    pull = abs(fit.diffusion_ - 0.38) / fit.diffusion_err_

    # a single realization lands within 1 sigma only ~68% of the time, so the
    # conserved-mode check is made on the calibration over many realizations
    gamma0_pulls = []
    for seed in range(1, 61):
        s, cols, err = synthetic_hydro_columns(0.38, length=14, shots=2000, rng=seed)
        mode0 = next(m for m in HydroFit().fit(FourierSeries.from_profiles(s, cols, err)).modes_ if m.n == 0)
        gamma0_pulls.append(abs(mode0.gamma) / mode0.gamma_err)
    gamma0_pulls = np.array(gamma0_pulls)
    frac1 = float(np.mean(gamma0_pulls <= 1))
    elapsed = time.perf_counter() - t0
    ok = noiseless_err <= 1e-6 and pull <= 2 and frac1 >= 0.55 and np.mean(gamma0_pulls <= 3) >= 0.95 and elapsed < 60
    report(
        9,
        ok,
        f"noiseless |D - 0.38| = {noiseless_err:.1e}; 2000 shots D = {fit.diffusion_:.4f} +- {fit.diffusion_err_:.4f} ({pull:.2f} sigma); "
        f"Gamma_0 within 1 sigma of 0 in {frac1:.0%} of 60 runs, {elapsed:.1f}s",
    )
    assert ok


def test_criterion_10_determinism(report, tmp_path):
    t0 = time.perf_counter()
    cfg = {
        "lattice": {"nx": 3, "ny": 3},
        "J": -1.0,
        "h": 2.0,
        "dt": 0.25,
        "delta_theta": 0.0,
        "steps": 6,
        "mode": "shots",
        "shots": 200,
        "noise": {"depolarizing": 2e-3, "leak_prob_2q": 5e-3},
        "transforms": {"dynamical_decoupling": True, "randomized_compiling": True},
        "amplification": {"zeta": 0.3},
    }
    cfg_path = tmp_path / "quench.json"
    cfg_path.write_text(json.dumps(cfg))
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["quench", "--config", str(cfg_path), "--seed", "7", "--out-dir", str(out), "--workers", "1"]) == 0
        plan = json.loads((out / "plan.json").read_text())
        mit = {
            "lattice": cfg["lattice"],
            "raw_archive": str(out / "archive_raw.csv"),
            "amplified_archive": str(out / "archive_na.csv"),
            "plan": {k: plan[k] for k in ("alpha", "r", "zeta", "kappa")},
        }
        (tmp_path / f"{name}_mit.json").write_text(json.dumps(mit))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            code = main(["mitigate", "--config", str(tmp_path / f"{name}_mit.json"), "--out-dir", str(out / "mit")])
        assert code == 0
        files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
        runs.append({p.relative_to(out).as_posix(): p.read_bytes() for p in files})
    identical = runs[0] == runs[1] and len(runs[0]) >= 5
    elapsed = time.perf_counter() - t0
    ok = identical and elapsed < 300
    report(10, ok, f"{len(runs[0])} output files byte-identical across reruns: {identical}, {elapsed:.1f}s")
    assert ok
