import numpy as np
import pytest
from scipy.linalg import expm

from conftest import INTERMEDIATE, THETA_MIN, quench
from floqising.circuit import QuenchSpec, build_trotter
from floqising.exceptions import SaturationWarning
from floqising.lattice import Lattice
from floqising.pauli import PauliString
from floqising.simulator import expectation_ztot2, ideal_states_by_step
from floqising.spd import (
    PauliSum,
    Rotation,
    Truncation,
    apply_rotation,
    bloch_vectors,
    canonicalize,
    evolve_plain,
    expectation,
    orbit_size,
    rewrite_circuit,
    rotate_term,
    run_spd,
    ztot2_sum,
)


def _exact(spec):
    return np.array([expectation_ztot2(st) for _, st in ideal_states_by_step(build_trotter(spec), spec)])


def test_rotate_term_example():
    # X rotation on Z gives cos Z + sin Y
    out = rotate_term(PauliString.from_label("Z"), PauliString.from_label("X"), 0.3)
    d = {p.label: c for c, p in out}
    assert d["Z"] == pytest.approx(np.cos(0.3))
    assert d["Y"] == pytest.approx(np.sin(0.3))
    assert rotate_term(PauliString.from_label("ZI"), PauliString.from_label("ZZ"), 0.3) == [
        (1.0 + 0j, PauliString.from_label("ZI"))
    ]


@pytest.mark.parametrize(("kind", "sites", "gen"), [("X", (1,), "IXI"), ("ZZ", (0, 2), "ZIZ")])
def test_apply_rotation_is_heisenberg_conjugation(kind, sites, gen, rng):
    labels = ["XYZ", "ZZI", "IYX", "ZIX", "YYY"]
    coefs = rng.normal(size=5)
    ps = PauliSum.from_terms(3, [(c, PauliString.from_label(lab)) for c, lab in zip(coefs, labels)])
    dense = ps.to_matrix()
    theta = 0.7
    apply_rotation(ps, Rotation(kind, sites, theta))
    # labels read left to right as qubits 0, 1, 2
    sigma = PauliString.from_label(gen).to_matrix()
    u = expm(-0.5j * theta * sigma)
    np.testing.assert_allclose(ps.to_matrix(), u.conj().T @ dense @ u, atol=1e-12)


def test_truncation_drops_small_and_heavy_terms():
    ps = PauliSum.from_terms(3, [(1e-3, PauliString.from_label("ZII")), (1.0, PauliString.from_label("ZZZ"))])
    dropped = apply_rotation(ps, Rotation("X", (0,), 0.0), Truncation(delta=1e-2))
    assert dropped == pytest.approx(1e-3)
    assert list(ps.to_dict()) == ["ZZZ"]
    ps = PauliSum.from_terms(3, [(1.0, PauliString.from_label("ZZI"))])
    dropped = apply_rotation(ps, Rotation("X", (0,), 0.3), Truncation(max_weight=1))
    assert len(ps) == 0
    assert dropped == pytest.approx(np.cos(0.3) + np.sin(0.3))


def test_canonicalize_orbits():
    lat = Lattice(3, 3)
    z0 = PauliString.single(9, 0, "Z")
    assert orbit_size(z0, lat) == 9
    reps = {canonicalize(PauliString.single(9, q, "Z"), lat) for q in range(9)}
    assert len(reps) == 1
    horizontal = PauliString.from_sites(9, {0: "Z", 1: "Z"})
    vertical = PauliString.from_sites(9, {0: "Z", 3: "Z"})
    assert orbit_size(horizontal, lat) == 9
    assert canonicalize(horizontal, lat) != canonicalize(vertical, lat)


def test_bloch_vectors_and_product_expectation():
    b = bloch_vectors([0.0, np.pi / 2])
    np.testing.assert_allclose(b, [[0, 0, 1], [1, 0, 0]], atol=1e-15)
    ps = PauliSum.from_terms(2, [(2.0, PauliString.from_label("ZX"))])
    assert expectation(ps, b) == pytest.approx(2.0)


def test_ztot2_sum_matches_dense():
    ps = ztot2_sum(3)
    ztot = sum(PauliString.single(3, q, "Z").to_matrix() for q in range(3))
    np.testing.assert_allclose(ps.to_matrix(), ztot @ ztot / 9, atol=1e-14)


@pytest.mark.parametrize("symmetry", [True, False])
def test_exact_without_truncation(symmetry):
    spec = quench(2, 3, 5, theta=INTERMEDIATE)
    res = run_spd(spec, symmetry=symmetry)
    np.testing.assert_allclose(res.values, _exact(spec), atol=1e-12)
    assert res.symmetry_merged == symmetry


def test_symmetry_reduces_terms():
    spec = quench(2, 3, 5)
    assert run_spd(spec).max_terms < run_spd(spec, symmetry=False).max_terms


def test_unrewritten_sequence_agrees():
    spec = quench(3, 3, 2, theta=THETA_MIN)
    plan = rewrite_circuit(spec, rewrite=False)
    ps = evolve_plain(ztot2_sum(9), plan, 2)
    value = expectation(ps, bloch_vectors(spec.theta)).real
    rewritten = run_spd(spec).values[2]
    assert value == pytest.approx(rewritten, abs=1e-12)
    assert value == pytest.approx(_exact(spec)[2], abs=1e-12)


def test_non_uniform_state_disables_merging():
    lat = Lattice(2, 3)
    theta = np.linspace(-0.4, 0.8, 6)
    spec = QuenchSpec(lat, -1.0, 2.0, 0.25, tuple(theta), 3)
    res = run_spd(spec)
    assert not res.symmetry_merged
    np.testing.assert_allclose(res.values, _exact(spec), atol=1e-12)


def test_truncation_error_shrinks_with_delta():
    spec = quench(3, 3, 8, theta=INTERMEDIATE)
    exact = _exact(spec)
    errs = [np.max(np.abs(run_spd(spec, delta=d).values - exact)) for d in (2**-6, 2**-10, 2**-14)]
    assert errs[2] < errs[0]
    assert errs[2] < 1e-2


def test_saturation_flag(tmp_path):
    spec = quench(3, 3, 4)
    with pytest.warns(SaturationWarning):
        res = run_spd(spec, max_terms=50)
    assert res.saturated
    assert len(res.values) < 5
    path = tmp_path / "telemetry.csv"
    res.write_telemetry(path)
    assert path.read_text().splitlines()[0] == "s,M,wall_time,truncated_mass"
