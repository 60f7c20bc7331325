import numpy as np
import pytest

from spinboson.hilbert import (TruncationWarning, basis_state, coherent_state,
                               fock_operators, ket_to_dm, pauli, product_state)
from spinboson.models import (LindbladModel, OscillatorMode, SpinParams, build_model,
                              build_oscillator_model)
from spinboson.propagate import (TimeGrid, adjoint_evolve, donor_population, lindblad_evolve,
                                 segment_unitary, spin_propagator, tcl2_evolve,
                                 unitary_evolve_piecewise)


def _spin_mode_ground(d):
    return ket_to_dm(product_state(basis_state(0, 2), basis_state(0, d)))


def test_trivial_generator_keeps_state():
    rho0 = np.diag([0.3, 0.7]).astype(complex)
    model = LindbladModel(None, np.zeros((2, 2)))
    res = lindblad_evolve(model, rho0, [0.0, 1.0, 5.0], keep_states=True)
    for rho in res.info["states"]:
        np.testing.assert_allclose(rho, rho0)


def test_free_spin_rabi_formula():
    model = build_model(SpinParams(0.0, 1.0), [OscillatorMode(1.0, 0.0, 0.0, 0.0, 3)], "none")
    grid = TimeGrid(10.0, 41)
    res = lindblad_evolve(model, _spin_mode_ground(3), grid)
    np.testing.assert_allclose(res.p0, np.cos(grid.times / 2) ** 2, atol=1e-9)


def test_number_dephasing_closed_form():
    nu, gamma, d = 1.0, 0.3, 14
    mode = OscillatorMode(nu, 0.0, gamma, 0.0, d)
    model = build_oscillator_model(mode, "dephased")
    rho0 = ket_to_dm(coherent_state(0.8, d))
    t = 2.5
    res = lindblad_evolve(model, rho0, [0.0, t], keep_states=True)
    m = np.arange(d)
    diff = m[:, None] - m[None, :]
    expected = rho0 * np.exp(-1j * nu * diff * t - 0.5 * gamma * diff ** 2 * t)
    np.testing.assert_allclose(res.info["states"][-1], expected, atol=1e-9)


def test_lindblad_trace_and_positivity():
    model = build_model(SpinParams(0.2, 1.0), [OscillatorMode(1.0, 0.1, 0.2, 0.0, 6)], "damped")
    res = lindblad_evolve(model, _spin_mode_ground(6), TimeGrid(10.0, 11), keep_states=True)
    for rho in res.info["states"]:
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-9)
        assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() > -1e-9


def test_fig2b_underdamped_dynamics():
    model = build_model(SpinParams(0.0, 1.0), [OscillatorMode(1.0, 0.1, 0.25, 0.0, 10)],
                        "dephased")
    res = lindblad_evolve(model, _spin_mode_ground(10), TimeGrid(2 * np.pi * 12, 241))
    assert res.p0.min() < 0.05
    assert 0.0 <= res.p0.min() and res.p0.max() <= 1.0 + 1e-9


def test_truncation_warning():
    model = build_model(SpinParams(0.0, 1.0), [OscillatorMode(1.0, 2.0, 0.0, 0.0, 3)], "none")
    with pytest.warns(TruncationWarning):
        res = lindblad_evolve(model, _spin_mode_ground(3), TimeGrid(5.0, 3))
    assert not res.truncation_ok


def test_segment_pi_pulse():
    p = pauli()
    U = segment_unitary(p["X"] * np.pi / 2, 1.0)
    assert abs((U @ basis_state(0, 2))[1]) ** 2 == pytest.approx(1.0)
    np.testing.assert_allclose(segment_unitary(p["X"], 0.0), np.eye(2))


def test_unitary_piecewise_zero_duration():
    p = pauli()
    psi0 = np.array([0.6, 0.8j])
    res = unitary_evolve_piecewise([(p["X"], 0.0), (p["Z"], 0.0)], psi0)
    np.testing.assert_allclose(res.final_state, psi0)


def test_adjoint_identity():
    model = build_oscillator_model(OscillatorMode(1.0, 0.1, 0.4, 0.0, 6), "damped")
    for X in adjoint_evolve(model, np.eye(6), [0.0, 1.0, 3.0]):
        np.testing.assert_allclose(X, np.eye(6), atol=1e-10)


@pytest.mark.parametrize("kind", ["damped", "dephased"])
def test_adjoint_annihilation_decays(kind):
    nu, gamma, d = 1.0, 0.4, 10
    model = build_oscillator_model(OscillatorMode(nu, 0.1, gamma, 0.0, d), kind)
    a, _, _ = fock_operators(d)
    t = 2.0
    X = adjoint_evolve(model, a, [t], tol=1e-10)[0]
    np.testing.assert_allclose(X[:-1, :], (np.exp((-1j * nu - gamma / 2) * t) * a)[:-1, :],
                               atol=1e-8)


def test_adjoint_number_differs_between_kinds():
    mode = OscillatorMode(1.0, 0.1, 0.4, 0.0, 8)
    _, _, n = fock_operators(8)
    damped = adjoint_evolve(build_oscillator_model(mode, "damped"), n, [1.0])[0]
    dephased = adjoint_evolve(build_oscillator_model(mode, "dephased"), n, [1.0])[0]
    np.testing.assert_allclose(dephased, n, atol=1e-10)
    assert np.max(np.abs(damped - dephased)) > 0.1


def test_spin_propagator_unitary():
    U = spin_propagator(SpinParams(0.4, 1.0), 1.7)
    np.testing.assert_allclose(U @ U.conj().T, np.eye(2), atol=1e-14)


def test_tcl2_zero_correlation_is_free_evolution():
    grid = TimeGrid(10.0, 21)
    res = tcl2_evolve(SpinParams(0.0, 1.0), lambda t: np.zeros_like(t, dtype=complex),
                      ket_to_dm(basis_state(0, 2)), grid)
    np.testing.assert_allclose(res.p0, np.cos(grid.times / 2) ** 2, atol=1e-10)


def test_donor_population():
    assert donor_population(_spin_mode_ground(4)) == pytest.approx(1.0)
    assert donor_population(np.kron(np.eye(2) / 2, np.diag([0.5, 0.5]))) == pytest.approx(0.5)
    assert donor_population(product_state(basis_state(1, 2), basis_state(0, 3))) == 0.0


def test_equilibrium_population_half():
    # a strongly damped unbiased spin relaxes to P0 = 1/2
    model = build_model(SpinParams(0.0, 1.0), [OscillatorMode(1.0, 0.3, 0.4, 0.0, 8)],
                        "damped")
    res = lindblad_evolve(model, _spin_mode_ground(8), [0.0, 300.0])
    assert res.p0[-1] == pytest.approx(0.5, abs=0.02)
