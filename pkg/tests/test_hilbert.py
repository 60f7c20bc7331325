import numpy as np
import pytest

from spinboson.hilbert import (HADAMARD, HilbertLayout, TruncationWarning, basis_state,
                               check_density_matrix, coherent_state, embed, embed_many, expect,
                               fidelity, fock_operators, ket_to_dm, partial_trace, pauli,
                               product_state, sigma_phi, spin_reduced_from_ket, tail_population,
                               thermal_populations, thermal_state, trace_distance)


def test_annihilation_d2():
    a, ad, n = fock_operators(2)
    np.testing.assert_array_equal(a, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(ad, a.T)


def test_annihilation_matrix_element_d3():
    a, _, _ = fock_operators(3)
    assert a[1, 2] == pytest.approx(np.sqrt(2))


def test_number_eigenrelation():
    d = 6
    _, _, n = fock_operators(d)
    for k in range(d):
        np.testing.assert_allclose(n @ basis_state(k, d), k * basis_state(k, d))


def test_commutator_away_from_cutoff():
    a, ad, _ = fock_operators(8)
    comm = a @ ad - ad @ a
    np.testing.assert_allclose(np.diag(comm)[:-1], 1.0)


@pytest.mark.parametrize("d", [0, 1, 2.5])
def test_invalid_fock_dimension(d):
    with pytest.raises(ValueError):
        fock_operators(d)


def test_spin_convention():
    p = pauli()
    zero = basis_state(0, 2)
    np.testing.assert_allclose(p["Z"] @ zero, zero)
    np.testing.assert_allclose(p["plus"] @ basis_state(1, 2), zero)
    np.testing.assert_allclose(sigma_phi(0.0), p["X"])
    np.testing.assert_allclose(sigma_phi(np.pi / 2), -p["Y"])
    np.testing.assert_allclose(HADAMARD @ HADAMARD, np.eye(2), atol=1e-15)


def test_embed_identity_and_trace():
    layout = HilbertLayout((3, 2))
    np.testing.assert_allclose(embed(np.eye(3), 1, layout), np.eye(layout.dim))
    assert np.trace(embed(pauli()["Z"], 0, HilbertLayout((3,)))) == pytest.approx(0)


def test_embed_disjoint_slots_commute():
    layout = HilbertLayout((2, 2))
    _, _, n = fock_operators(2)
    A, B = embed(n, 2, layout), embed(n, 1, layout)
    np.testing.assert_allclose(A @ B, B @ A)


def test_embed_errors():
    layout = HilbertLayout((3,))
    with pytest.raises(IndexError):
        embed(np.eye(2), 2, layout)
    with pytest.raises(ValueError):
        embed(np.eye(2), 1, layout)


def test_embed_many_matches_products():
    layout = HilbertLayout((3, 2))
    a3, _, _ = fock_operators(3)
    a2, _, _ = fock_operators(2)
    both = embed_many({1: a3, 2: a2}, layout)
    np.testing.assert_allclose(both, embed(a3, 1, layout) @ embed(a2, 2, layout))


def test_thermal_ground_state():
    rho = thermal_state(0.0, 5)
    np.testing.assert_allclose(rho, ket_to_dm(basis_state(0, 5)))


def test_thermal_geometric_distribution():
    p, tail = thermal_populations(1.0, 60)
    assert p[0] == pytest.approx(0.5)
    assert p[1] == pytest.approx(0.25)
    assert tail < 1e-15


def test_thermal_mean_nbar():
    _, _, n = fock_operators(10)
    assert np.real(np.trace(n @ thermal_state(0.036, 10))) == pytest.approx(0.036, abs=1e-6)


def test_thermal_truncation_warning():
    with pytest.warns(TruncationWarning):
        thermal_state(2.0, 5)
    with pytest.raises(ValueError):
        thermal_state(-0.1, 5)


def test_coherent_states():
    np.testing.assert_allclose(coherent_state(0.0, 6), basis_state(0, 6))
    psi = coherent_state(1.0, 20)
    _, _, n = fock_operators(20)
    assert np.real(expect(n, psi)) == pytest.approx(1.0, abs=1e-6)
    assert abs(np.vdot(psi, psi)) ** 2 == pytest.approx(1.0)
    with pytest.warns(TruncationWarning):
        coherent_state(3.0, 5)


def test_fidelity_cases():
    rho = thermal_state(0.5, 16)
    assert fidelity(rho, rho) == pytest.approx(1.0)
    assert fidelity(ket_to_dm(basis_state(0, 3)), ket_to_dm(basis_state(1, 3))) == pytest.approx(0)
    p, q = np.array([0.7, 0.2, 0.1]), np.array([0.2, 0.5, 0.3])
    expected = np.sum(np.sqrt(p * q)) ** 2
    assert fidelity(np.diag(p), np.diag(q)) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(ValueError):
        fidelity(np.eye(2) / 2, np.eye(3) / 3)


def test_trace_distance():
    a, b = ket_to_dm(basis_state(0, 2)), ket_to_dm(basis_state(1, 2))
    assert trace_distance(a, b) == pytest.approx(1.0)
    assert trace_distance(a, a) == pytest.approx(0.0)


def test_partial_trace_cases():
    layout = HilbertLayout((3,))
    rs = np.array([[0.7, 0.1j], [-0.1j, 0.3]])
    ro = np.diag([0.6, 0.3, 0.1]).astype(complex)
    red = partial_trace(np.kron(rs, ro), layout, [0])
    np.testing.assert_allclose(red, rs, atol=1e-14)
    assert np.trace(red) == pytest.approx(1.0)
    bell = (product_state(basis_state(0, 2), basis_state(0, 2))
            + product_state(basis_state(1, 2), basis_state(1, 2))) / np.sqrt(2)
    np.testing.assert_allclose(partial_trace(ket_to_dm(bell), HilbertLayout((2,)), [0]),
                               np.eye(2) / 2, atol=1e-15)
    with pytest.raises(IndexError):
        partial_trace(np.kron(rs, ro), layout, [2])


def test_spin_reduced_from_ket_matches_partial_trace():
    rng = np.random.default_rng(0)
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    np.testing.assert_allclose(spin_reduced_from_ket(psi),
                               partial_trace(ket_to_dm(psi), HilbertLayout((4,)), [0]),
                               atol=1e-14)


def test_check_density_matrix():
    check_density_matrix(thermal_state(0.2, 12))
    with pytest.raises(ValueError):
        check_density_matrix(np.diag([1.2, -0.2]))
    with pytest.raises(ValueError):
        check_density_matrix(np.array([[0.5, 0.5], [0.0, 0.5]]))


def test_tail_population():
    layout = HilbertLayout((4,))
    psi = product_state(basis_state(0, 2), basis_state(3, 4))
    assert tail_population(psi, layout) == pytest.approx(1.0)
    psi = product_state(basis_state(0, 2), basis_state(0, 4))
    assert tail_population(psi, layout) == pytest.approx(0.0)
