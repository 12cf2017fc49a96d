import numpy as np
import pytest

from floqising.channel import PauliChannel
from floqising.exceptions import InconsistentSpectrumError, InputDomainError
from floqising.noise_learning import (
    CycleBenchmarkFit,
    fit_cb,
    read_noise_model,
    simulate_cb_experiment,
    symmetrized_fidelity,
    write_noise_model,
    zz_partner_label,
)


def test_zz_partner_labels():
    assert zz_partner_label("XI") == "YZ"
    assert zz_partner_label("ZZ") == "ZZ"
    assert zz_partner_label(zz_partner_label("XY")) == "XY"
    assert symmetrized_fidelity(0.81, 1.0) == pytest.approx(0.9)


def test_exact_decays_recover_channel():
    true = PauliChannel.random_symmetric(0.01, 2)
    data = simulate_cb_experiment(true, 0.005, None, None, spam=0.97)
    fit = CycleBenchmarkFit().fit(data)
    np.testing.assert_allclose(fit.fidelities_, true.fidelities, atol=1e-9)
    np.testing.assert_allclose(fit.channel_.probs, true.probs, atol=1e-9)
    assert fit.theta_eps_ == pytest.approx(0.005, abs=1e-9)
    np.testing.assert_allclose(fit.spam_, 0.97, atol=1e-8)
    np.testing.assert_allclose(fit.predict(data.lengths), data.means, atol=1e-9)


def test_sampled_decays_within_errors(rng):
    true = PauliChannel.random_symmetric(0.02, rng)
    res = fit_cb(simulate_cb_experiment(true, 0.0, 20000, rng))
    pull = np.abs(res.channel.probs[1:] - true.probs[1:]) / np.maximum(res.prob_errors[1:], 1e-12)
    assert np.mean(pull < 3) >= 13 / 15
    assert res.channel.total_error == pytest.approx(0.02, rel=0.2)


def test_needs_three_lengths():
    data = simulate_cb_experiment(PauliChannel.depolarizing(0.01), 0.0, None, None, lengths=(4, 80))
    with pytest.raises(InputDomainError):
        CycleBenchmarkFit().fit(data)


def test_strongly_negative_probability_is_rejected():
    data = simulate_cb_experiment(PauliChannel.depolarizing(0.01), 0.0, None, None)
    # a Pauli fidelity above one forces negative probabilities
    data.means[data.labels.index("ZI")] = 1.001**data.lengths
    with pytest.raises(InconsistentSpectrumError):
        CycleBenchmarkFit().fit(data)


def test_noise_model_file_round_trip(tmp_path):
    ch = PauliChannel.random_symmetric(0.005, 1)
    path = tmp_path / "noise.json"
    write_noise_model(path, ch, theta_eps=0.01, timestamp="2020-01-01T00:00:00+00:00")
    back, meta = read_noise_model(path)
    np.testing.assert_allclose(back.probs, ch.probs, atol=1e-15)
    assert meta["theta_eps"] == 0.01
