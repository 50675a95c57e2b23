# tests/test_many_body.py — product basis, Hamiltonian assembly, diagonalization, active space
from math import comb

import numpy as np
import pytest

from src.errors import ActiveSpaceError
from src.physics.many_body import (
    assemble_hamiltonian, build_model, build_product_basis, diagonalize_full, min_gap_by_polyad,
    polyad_census, select_active_space, truncation_audit,
)
from src.physics.random_potential import build_model_potentials, eval_potential


def test_small_census(rotor300):
    basis = build_product_basis(2, rotor300, E_tr=80.0)
    assert basis.dim == 10
    assert polyad_census(basis).tolist() == [[0, 1, 1], [1, 2, 3], [2, 3, 6], [3, 4, 10]]
    assert np.all(np.diff(basis.energies) >= 0)
    assert np.all(basis.energies < 80.0)


def test_polyad_cap_counts(rotor300):
    basis = build_product_basis(3, rotor300, polyad_cap=4)
    census = polyad_census(basis)
    assert census[:, 1].tolist() == [comb(P + 2, 2) for P in range(5)]


@pytest.mark.parametrize("E_tr, total, top", [(154.0, 924, 6), (171.0, 1716, 7)])
def test_six_rotor_census(rotor300, E_tr, total, top):
    basis = build_product_basis(6, rotor300, E_tr=E_tr)
    census = polyad_census(basis)
    assert basis.dim == total
    assert int(census[-1, 0]) == top
    assert census[:, 1].tolist() == [comb(P + 5, 5) for P in range(top + 1)]


def test_cutoff_must_admit_ground_state(rotor300):
    with pytest.raises(ValueError):
        build_product_basis(2, rotor300, E_tr=10.0)
    with pytest.raises(ValueError):
        build_product_basis(2, rotor300)


def test_hamiltonian_hermitian(two_rotor_model, rotor300):
    spectrum, pots = two_rotor_model
    H = assemble_hamiltonian(spectrum.basis, rotor300, pots)
    assert np.abs(H - H.conj().T).max() <= 1e-12
    assert np.allclose(assemble_hamiltonian(spectrum.basis, rotor300, pots, workers=2, block=3), H, atol=1e-14)


def test_matrix_elements_match_quadrature(two_rotor_model, rotor300):
    spectrum, pots = two_rotor_model
    basis = spectrum.basis
    H = assemble_hamiltonian(basis, rotor300, pots)
    K = 256
    q = (np.arange(K) + 0.5) * (2 * np.pi / K)
    phi, _ = rotor300.tables(q)
    q1, q2 = np.meshgrid(q, q, indexing="ij")
    V = (eval_potential(pots.one_body[0], q1) + eval_potential(pots.one_body[1], q2)
         + eval_potential(pots.pairs[(0, 1)], q1 - q2))
    w = (2 * np.pi / K) ** 2
    for r, c in [(0, 0), (0, 1), (1, 2), (3, 7), (9, 4)]:
        (a, b), (ap, bp) = basis.labels[r], basis.labels[c]
        bra = np.conj(np.outer(phi[:, a], phi[:, b]))
        ket = np.outer(phi[:, ap], phi[:, bp])
        expected = np.sum(bra * V * ket) * w + (basis.energies[r] if r == c else 0.0)
        assert abs(H[r, c] - expected) < 1e-10


def test_uncoupled_model_is_diagonal(rotor300):
    pots = build_model_potentials(2, 10, 0.0, master_seed=3)
    small = build_model(2, rotor300, pots, E_tr=80.0)
    large = build_model(2, rotor300, pots, E_tr=100.0)
    assert np.array_equal(small.energies, small.basis.energies)
    assert np.array_equal(np.abs(small.vectors), np.eye(small.dim))
    assert all(row["max_rel_shift"] == 0.0 for row in truncation_audit(small, large))


def test_weak_coupling_first_order(rotor300):
    pots = build_model_potentials(2, 20, 0.05, master_seed=7)
    basis = build_product_basis(2, rotor300, E_tr=80.0)
    H = assemble_hamiltonian(basis, rotor300, pots)
    spectrum = diagonalize_full(H, basis=basis, rotor=rotor300)
    assert spectrum.energies[0] == pytest.approx(H[0, 0].real, abs=2e-3)


def test_weak_coupling_second_order(rotor300):
    basis = build_product_basis(2, rotor300, E_tr=80.0)
    e0 = basis.energies

    def residual(sigma):
        H = assemble_hamiltonian(basis, rotor300, build_model_potentials(2, 20, sigma, master_seed=7))
        V = H - np.diag(e0)
        second = float(np.sum(np.abs(V[0, 1:]) ** 2 / (e0[0] - e0[1:])))
        exact = np.linalg.eigvalsh(H)[0]
        return abs(exact - (e0[0] + V[0, 0].real + second)), abs(second)

    err, second = residual(0.05)
    half, _ = residual(0.025)
    assert err < 0.1 * second
    # third order: halving sigma divides the residual by about 8
    assert half < 0.2 * err


def test_spectrum_validated(two_rotor_model):
    spectrum, _ = two_rotor_model
    U = spectrum.vectors
    assert np.abs(U.conj().T @ U - np.eye(spectrum.dim)).max() < 1e-10
    assert spectrum.distinct
    assert spectrum.min_gap > 0
    assert spectrum.polyads().tolist() == sorted(spectrum.polyads().tolist())
    gaps = min_gap_by_polyad(spectrum)
    assert set(gaps) == {0, 1, 2, 3}
    assert gaps[0] == np.inf


def test_permutation_invariance(rotor300):
    pots = build_model_potentials(3, 10, 1.0, master_seed=21)
    ref = build_model(3, rotor300, pots, E_tr=60.0)
    for perm in ([1, 0, 2], [2, 0, 1]):
        other = build_model(3, rotor300, pots.permuted(perm), E_tr=60.0)
        assert np.allclose(other.energies, ref.energies, atol=1e-10)


def test_non_hermitian_rejected():
    H = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        diagonalize_full(H)


def test_active_space_selection(two_rotor_model):
    spectrum, _ = two_rotor_model
    E = spectrum.energies
    active = select_active_space(spectrum, 0.5 * (E[2] + E[3]))
    assert active.N == 3
    assert active.indices.tolist() == [0, 1, 2]
    with pytest.raises(ActiveSpaceError):
        select_active_space(spectrum, E[0] - 1.0)
    with pytest.raises(ActiveSpaceError):
        select_active_space(spectrum, E[-1] + 1.0)
    with pytest.raises(ActiveSpaceError):
        select_active_space(spectrum, float(E[4]))


@pytest.mark.slow
def test_reference_active_space(rotor300):
    pots = build_model_potentials(6, 100, 1.0, master_seed=2015)
    spectrum = build_model(6, rotor300, pots, E_tr=154.0)
    assert spectrum.dim == 924
    assert select_active_space(spectrum, 139.0).N == 462


@pytest.mark.slow
def test_reference_truncation_audit(rotor300):
    pots = build_model_potentials(6, 100, 1.0, master_seed=2015)
    small = build_model(6, rotor300, pots, E_tr=154.0)
    large = build_model(6, rotor300, pots, E_tr=171.0)
    audit = truncation_audit(small, large)
    assert [row["polyad"] for row in audit] == list(range(7))
    for row in audit:
        limit = 4e-5 if row["polyad"] <= 5 else 1e-3
        assert row["max_rel_shift"] <= limit, row
