import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aaptlink import channels as ch
from aaptlink.errors import DomainError
from aaptlink.qubit import (
    I2,
    PAULIS,
    SX,
    UnitaryParams,
    bell_state,
    product_ket,
    projector,
    random_unitary,
    unitary_from_params,
)

PHI = projector(bell_state("phi+"))
PSI = projector(bell_state("psi+"))
probs = st.floats(0.0, 1.0)


def brute_depol(p):
    # oracle: rho -> (1 - p) rho + p tr(rho) I/2, straight from the definition
    return lambda r: (1 - p) * r + p * np.trace(r) * I2 / 2


def test_constructor_validation():
    with pytest.raises(DomainError):
        ch.KrausChannel(np.array([[[1, 0], [0, 0.5]]]))
    with pytest.raises(DomainError):
        ch.depolarizing(1.5)


def test_apply_examples(rng):
    rho = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    assert np.allclose(ch.apply(ch.identity_channel(), rho), rho)
    assert np.allclose(ch.apply(ch.depolarizing(1.0), projector([1, 0])), I2 / 2)
    U = random_unitary(rng)
    assert np.allclose(ch.apply(ch.unitary_channel(U), rho), U @ rho @ U.conj().T)


def test_extend_apply_examples():
    assert np.allclose(ch.extend_apply(ch.identity_channel(), PSI), PSI)
    assert np.allclose(ch.extend_apply(ch.unitary_channel(SX), PSI), PHI)
    p = 0.3
    assert np.allclose(ch.extend_apply(ch.depolarizing(p), PHI), (1 - p) * PHI + p * np.eye(4) / 4)


def test_measurement_probability_examples():
    hh, hv = product_ket("HH"), product_ket("HV")
    assert ch.measurement_probability(ch.identity_channel(), PHI, hh) == pytest.approx(0.5)
    assert ch.measurement_probability(ch.identity_channel(), PSI, hh) == pytest.approx(0.0, abs=1e-15)
    p = 0.2
    assert ch.measurement_probability(ch.depolarizing(p), PSI, hv) == pytest.approx((1 - p) / 2 + p / 4)


@given(probs)
def test_depolarizing_choi_matches_brute_force(p):
    phi = ch.choi(ch.depolarizing(p))
    assert np.allclose(phi, (1 - p) * PHI + p * np.eye(4) / 4, atol=1e-12)
    assert np.allclose(phi, ch.choi_from_map(brute_depol(p)), atol=1e-12)
    assert ch.is_choi(phi)


def test_choi_special_cases():
    assert np.allclose(ch.choi(ch.identity_channel()), PHI)
    assert np.allclose(ch.choi(ch.depolarizing(1.0)), np.eye(4) / 4)


@pytest.mark.parametrize("p, fq, purity", [(0.0, 1.0, 1.0), (1.0, 0.25, 0.25), (0.0409, 0.969, 0.94)])
def test_depolarizing_fidelity_and_purity(p, fq, purity):
    c = ch.depolarizing(p)
    assert ch.process_fidelity_kraus(c) == pytest.approx(1 - 3 * p / 4, abs=1e-12)
    assert ch.process_fidelity_kraus(c) == pytest.approx(fq, abs=5e-4)
    assert ch.choi_purity(ch.choi(c)) == pytest.approx((1 - 3 * p / 4) ** 2 + 3 * p**2 / 16, abs=1e-12)
    assert ch.choi_purity(ch.choi(c)) == pytest.approx(purity, abs=5e-3)


def test_process_fidelity_unitary_examples(rng):
    U = random_unitary(rng)
    assert ch.process_fidelity_unitary(U, U) == pytest.approx(1.0)
    assert ch.process_fidelity_unitary(unitary_from_params(UnitaryParams(np.pi / 2, 0, 0))) == pytest.approx(0.5)
    assert ch.process_fidelity_unitary(SX) == pytest.approx(0.0)
    with pytest.raises(DomainError):
        ch.process_fidelity_unitary(np.ones((2, 2)))


def test_fidelity_forms_agree(rng):
    for _ in range(200):
        U, T = random_unitary(rng), random_unitary(rng)
        a = ch.process_fidelity_unitary(U, T)
        assert abs(a - ch.process_fidelity_kraus(ch.unitary_channel(U), T)) < 1e-12
        assert abs(a - ch.choi_fidelity(ch.choi(ch.unitary_channel(U)), T)) < 1e-12


def _random_channel(rng, k=3):
    G = rng.normal(size=(k, 2, 2)) + 1j * rng.normal(size=(k, 2, 2))
    S = np.einsum("kji,kjl->il", G.conj(), G)
    w, v = np.linalg.eigh(S)
    return ch.KrausChannel(G @ (v @ np.diag(w**-0.5) @ v.conj().T))


def test_kraus_fidelity_bounds(rng):
    for _ in range(50):
        c, T = _random_channel(rng), random_unitary(rng)
        f = ch.process_fidelity_kraus(c, T)
        assert 0.0 <= f <= 1.0
        assert abs(f - ch.choi_fidelity(ch.choi(c), T)) < 1e-12
    T = random_unitary(rng)
    assert ch.process_fidelity_kraus(ch.unitary_channel(T * np.exp(0.4j)), T) == pytest.approx(1.0)


def test_choi_roundtrip_through_kraus(rng):
    c = _random_channel(rng, 4)
    phi = ch.choi(c)
    assert np.allclose(ch.choi(ch.kraus_from_choi(phi)), phi, atol=1e-12)
    assert np.allclose(ch.partial_trace_output(phi), I2 / 2, atol=1e-12)


def test_compose_examples(rng):
    c = _random_channel(rng)
    U = random_unitary(rng)
    assert np.allclose(ch.choi(ch.compose(c, ch.identity_channel())), ch.choi(c), atol=1e-10)
    inv = ch.compose(ch.unitary_channel(U.conj().T), ch.unitary_channel(U))
    assert np.allclose(ch.choi(inv), PHI, atol=1e-10)
    p = 0.12
    comp = ch.compose(ch.depolarizing(p), ch.unitary_channel(U))
    assert ch.process_fidelity_kraus(comp, U) == pytest.approx(1 - 3 * p / 4, abs=1e-12)
    assert len(comp.ops) <= 4


def test_compose_matches_composed_map(rng):
    a, b = _random_channel(rng), _random_channel(rng)
    brute = ch.choi_from_map(lambda r: ch.apply(b, ch.apply(a, r)))
    assert np.allclose(ch.choi(ch.compose(b, a)), brute, atol=1e-10)


def test_composed_unitary_depol_matches_compose(rng):
    U = random_unitary(rng)
    a = ch.composed_unitary_depol(U, 0.2)
    b = ch.compose(ch.depolarizing(0.2), ch.unitary_channel(U))
    assert np.allclose(ch.choi(a), ch.choi(b), atol=1e-12)


def test_kraus_from_choi_rejects_negative():
    bad = PHI - 0.01 * np.eye(4)
    with pytest.raises(DomainError):
        ch.kraus_from_choi(bad)


def test_gauge_fix_identity_series():
    V, fixed = ch.gauge_fix([PHI, PHI])
    assert np.allclose(V * np.conj(V[0, 0]) / abs(V[0, 0]), I2, atol=1e-6)
    assert all(np.allclose(f, PHI, atol=1e-6) for f in fixed)


def test_gauge_fix_recovers_unitary(rng):
    U = random_unitary(rng)
    series = [ch.choi(ch.unitary_channel(random_unitary(rng))), ch.choi(ch.unitary_channel(U))]
    V, fixed = ch.gauge_fix(series)
    assert ch.choi_fidelity(fixed[-1]) == pytest.approx(1.0, abs=1e-6)
    for a, b in zip(series, fixed):
        assert ch.choi_purity(b) == pytest.approx(ch.choi_purity(a), abs=1e-12)


def test_gauge_fix_cannot_remove_depolarization(rng):
    p = 0.1
    U = random_unitary(rng)
    last = ch.choi(ch.compose(ch.depolarizing(p), ch.unitary_channel(U)))
    _, fixed = ch.gauge_fix([last])
    assert ch.choi_fidelity(fixed[0]) == pytest.approx(1 - 3 * p / 4, abs=1e-4)


def test_choi_record_roundtrip(rng):
    phi = ch.choi(_random_channel(rng))
    rec = ch.choi_record(phi, label="w3")
    assert len(rec["entries"]) == 16 and rec["metadata"]["label"] == "w3"
    assert np.array_equal(ch.choi_from_record(rec), phi)
    rec["entries"] = rec["entries"][:-1]
    with pytest.raises(DomainError):
        ch.choi_from_record(rec)


def test_depolarizing_kraus_set():
    c = ch.depolarizing(0.3)
    assert c.is_cptp()
    assert np.allclose(c.ops[1:], np.sqrt(0.3) / 2 * PAULIS)
