import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from floqising.channel import (
    LABEL_INDEX,
    ZZ_PARTNER,
    PauliChannel,
    fidelities_to_probs,
    probs_to_fidelities,
)
from floqising.exceptions import InconsistentSpectrumError, InputDomainError
from floqising.pauli import TWO_QUBIT_LABELS, PauliString


@given(st.lists(st.floats(0, 1), min_size=16, max_size=16).filter(lambda v: sum(v) > 0))
def test_hadamard_transform_is_an_involution(weights):
    p = np.array(weights) / sum(weights)
    back = fidelities_to_probs(probs_to_fidelities(p), clip=False)
    np.testing.assert_allclose(back, p, atol=1e-12)


def test_identity_and_depolarizing():
    np.testing.assert_allclose(PauliChannel.identity().fidelities, np.ones(16))
    ch = PauliChannel.depolarizing(0.015)
    f = ch.fidelities
    assert f[0] == pytest.approx(1.0)
    np.testing.assert_allclose(f[1:], 1 - 16 * 0.015 / 15, atol=1e-12)
    assert ch.average_infidelity == pytest.approx(0.8 * 0.015)


def test_single_pauli_flip():
    ch = PauliChannel.from_dict({"XX": 0.1})
    f = ch.fidelities
    for lab, k in LABEL_INDEX.items():
        anti = not PauliString.from_label(lab).commutes(PauliString.from_label("XX"))
        assert f[k] == pytest.approx(0.8 if anti else 1.0)


def test_zz_partner_examples():
    assert TWO_QUBIT_LABELS[ZZ_PARTNER[LABEL_INDEX["XI"]]] == "YZ"
    assert TWO_QUBIT_LABELS[ZZ_PARTNER[LABEL_INDEX["ZZ"]]] == "ZZ"
    assert all(ZZ_PARTNER[ZZ_PARTNER[k]] == k for k in range(16))


def test_random_symmetric_ties_partners(rng):
    ch = PauliChannel.random_symmetric(6e-4, rng)
    assert ch.total_error == pytest.approx(6e-4)
    np.testing.assert_allclose(ch.probs, ch.probs[list(ZZ_PARTNER)])


def test_negative_probability_detection():
    f = np.ones(16)
    f[1] = 0.5  # not a valid Pauli spectrum
    with pytest.raises(InconsistentSpectrumError):
        fidelities_to_probs(f)
    slightly_off = np.zeros(16)
    slightly_off[0], slightly_off[1], slightly_off[2] = 1.0, -1e-8, 1e-8
    tiny = probs_to_fidelities(slightly_off)
    with pytest.warns(RuntimeWarning):
        p = fidelities_to_probs(tiny)
    assert p.min() >= 0 and p.sum() == pytest.approx(1.0)


def test_scaling_and_insertion():
    ch = PauliChannel.depolarizing(0.01)
    assert ch.scaled(3).total_error == pytest.approx(0.03)
    q = ch.insertion_probs(3.0)
    assert q[0] == pytest.approx(1 - 0.02)
    with pytest.raises(InputDomainError):
        ch.insertion_probs(0.5)


def test_json_round_trip(rng):
    ch = PauliChannel.random_symmetric(1e-3, rng)
    back, meta = PauliChannel.from_json(ch.to_json(theta_eps=0.01))
    np.testing.assert_allclose(back.probs, ch.probs, atol=1e-15)
    assert meta["theta_eps"] == 0.01
    assert json.loads(ch.to_json())["metadata"]["total_infidelity"] == pytest.approx(0.8e-3)


def test_validation():
    with pytest.raises(InputDomainError):
        PauliChannel(np.ones(16))
    with pytest.raises(InputDomainError):
        PauliChannel.from_dict({"QQ": 0.1})
