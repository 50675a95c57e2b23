# tests/test_reduced.py — reduced density matrices, marginals, canonical form, fluctuation bound
import numpy as np
import pytest

from src.dynamics.bohm import _field
from src.dynamics.pure_state import PureState, make_state
from src.dynamics.reduced import (
    active_matrix, canonical_column, canonical_rdm, default_grid, eigenstate_rdms, ensemble_average_rdm,
    equilibrium_rdm, expectation, fit_canonical_beta, fluctuation_bound_check, level_projector, marginal, rdm_at,
    rdm_convergence, spectral_variance_bound, time_averaged_rdm, window_averaged_rdm, window_observable,
)


def test_rdm_is_a_density_matrix(two_rotor_state):
    for t in (0.0, 0.3, 17.0):
        rdm = rdm_at(two_rotor_state, t)
        assert rdm.violations() == []
        assert rdm.M == 4
        assert rdm.time == t


def test_rdm_padding_and_rows(two_rotor_state):
    rdm = rdm_at(two_rotor_state, 0.2, M=8)
    assert rdm.M == 8
    assert not np.any(rdm.matrix[4:, :])
    rows = rdm.rows()
    assert rows.shape == (64, 5)
    assert np.all(rows[:, 0] == 0.2)


def test_marginal_matches_direct_integration(two_rotor_state):
    # p(q1) = int |Psi(q1, q2)|^2 dq2, midpoint rule exact for these trigonometric polynomials
    t = 0.41
    K = 256
    q2 = (np.arange(K) + 0.5) * (2 * np.pi / K)
    q1 = np.array([0.4, 2.0, np.pi, 3.9, 5.5])
    Q = np.stack(np.meshgrid(q1, q2, indexing="ij"), axis=-1).reshape(-1, 2)
    psi, _ = _field(two_rotor_state, Q, t)
    direct = (np.abs(psi) ** 2).reshape(len(q1), K).sum(axis=1) * (2 * np.pi / K)
    p = marginal(rdm_at(two_rotor_state, t), two_rotor_state.spectrum.rotor, q1)
    assert np.allclose(p.density, direct, atol=1e-10)


def test_marginals_normalized(two_rotor_state):
    rotor = two_rotor_state.spectrum.rotor
    for rdm in (rdm_at(two_rotor_state, 1.3), equilibrium_rdm(two_rotor_state)):
        p = marginal(rdm, rotor, default_grid(2000))
        assert p.normalization() == pytest.approx(1.0, abs=1e-8)
        assert np.all(p.density >= -1e-12)


def test_pure_level_marginal(one_rotor_model, level_state):
    state = level_state(one_rotor_model, level=1, N=2)
    rdm = rdm_at(state, 0.8)
    assert np.allclose(rdm.diagonal, [0.0, 1.0, 0.0], atol=1e-15)
    q = default_grid(500)
    phi, _ = one_rotor_model.rotor.tables(q, levels=2)
    assert np.allclose(marginal(rdm, one_rotor_model.rotor, q).density, np.abs(phi[:, 1]) ** 2, atol=1e-12)


def test_equilibrium_ignores_phases(two_rotor_state):
    a = equilibrium_rdm(two_rotor_state).matrix
    b = equilibrium_rdm(two_rotor_state.with_phases(np.linspace(0, 6, two_rotor_state.N))).matrix
    assert np.allclose(a, b, atol=1e-15)


def test_time_average_reaches_equilibrium(two_level_state):
    # one Bohr frequency: a uniform grid over one period cancels the coherence exactly
    E = two_level_state.energies
    period = 1.0 / (E[1] - E[0])
    times = np.arange(16) * period / 16
    avg = time_averaged_rdm(two_level_state, times).matrix
    assert np.allclose(avg, equilibrium_rdm(two_level_state).matrix, atol=1e-12)
    assert abs(rdm_at(two_level_state, 0.0).matrix[0, 1]) > 0.1


def test_rdm_convergence_report(two_level_state):
    report = rdm_convergence(two_level_state, windows=[0.01, 50.0])
    assert [r["window"] for r in report] == [0.01, 50.0]
    assert report[1]["frobenius"] < report[0]["frobenius"]


def test_rdm_convergence_monotone_under_doubling(two_level_state):
    report = rdm_convergence(two_level_state, windows=[0.1 * 2 ** k for k in range(10)])
    d = [r["frobenius"] for r in report]
    assert all(b <= a + 1e-14 for a, b in zip(d, d[1:]))
    assert d[-1] < 0.01 * d[0]


def test_window_average_matches_quadrature(two_level_state, two_rotor_state):
    W, K = 0.1, 8000
    times = (np.arange(K) + 0.5) * W / K
    for state in (two_level_state, two_rotor_state):
        exact = window_averaged_rdm(state, W).matrix
        assert np.allclose(exact, time_averaged_rdm(state, times).matrix, atol=1e-6)
    E = two_level_state.energies
    period = 1.0 / (E[1] - E[0])
    assert np.allclose(window_averaged_rdm(two_level_state, period).matrix,
                       equilibrium_rdm(two_level_state).matrix, atol=1e-12)
    with pytest.raises(ValueError):
        window_averaged_rdm(two_level_state, 0.0)


def test_equilibrium_scatters_around_ensemble_average(two_rotor_state):
    spectrum, active = two_rotor_state.spectrum, two_rotor_state.active
    S = eigenstate_rdms(spectrum, active.N)
    rng = np.random.default_rng(5)
    draws = np.array([equilibrium_rdm(make_state(spectrum, active, rng), S=S).matrix for _ in range(200)])
    mean = ensemble_average_rdm(spectrum, active, S=S).matrix
    for part in (np.real, np.imag):
        x = part(draws)
        se = x.std(axis=0, ddof=1) / np.sqrt(len(x))
        # four standard errors over every matrix element
        assert np.all(np.abs(x.mean(axis=0) - part(mean)) <= 4.0 * se + 1e-12)


def test_canonical_fit_undefined_for_inverted_populations(two_level_state, rotor300):
    inverted = PureState(spectrum=two_level_state.spectrum, active=two_level_state.active,
                         populations=np.array([0.3, 0.7]), phases=np.zeros(2))
    beta = fit_canonical_beta(equilibrium_rdm(inverted), rotor300)
    assert beta < 0
    assert canonical_column(rotor300, beta, 3, 8) is None
    assert canonical_column(rotor300, np.inf, 3, 8) is None
    assert canonical_column(rotor300, float("nan"), 3, 8) is None
    assert canonical_column(rotor300, 1e-15, 3, 8) is None
    col = canonical_column(rotor300, 0.0376, 3, 8)
    assert col.shape == (8,)
    assert col.sum() == pytest.approx(1.0)
    assert np.all(col[3:] == 0.0)

    ground = PureState(spectrum=two_level_state.spectrum, active=two_level_state.active,
                       populations=np.array([1.0, 0.0]), phases=np.zeros(2))
    assert np.isnan(fit_canonical_beta(equilibrium_rdm(ground), rotor300))


def test_ensemble_average_is_uniform_mixture(two_rotor_state):
    N = two_rotor_state.N
    flat = PureState(spectrum=two_rotor_state.spectrum, active=two_rotor_state.active,
                     populations=np.full(N, 1.0 / N), phases=np.zeros(N))
    assert np.allclose(ensemble_average_rdm(flat.spectrum, flat.active).matrix,
                       equilibrium_rdm(flat).matrix, atol=1e-14)


def test_canonical_reference_populations(rotor300):
    canon = canonical_rdm(rotor300, 0.0376, 7)
    assert np.allclose(canon.diagonal[:4], [0.475, 0.250, 0.133, 0.0712], atol=1e-3)
    assert canon.violations() == []
    assert fit_canonical_beta(canon, rotor300) == pytest.approx(0.0376, rel=1e-10)


def test_canonical_limits(rotor300):
    assert np.allclose(canonical_rdm(rotor300, 1e-12, 8).diagonal, 1 / 8, atol=1e-9)
    assert canonical_rdm(rotor300, 10.0, 8).diagonal[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        canonical_rdm(rotor300, 0.0)


def test_spectral_variance_bound_two_level():
    assert spectral_variance_bound([0.0, 1.0]) == pytest.approx(1 / 6)
    assert spectral_variance_bound([2.0, 2.0, 2.0]) == 0.0


def test_window_observable_measures_window_mass(two_rotor_state):
    rotor = two_rotor_state.spectrum.rotor
    rdm = rdm_at(two_rotor_state, 0.7)
    a = window_observable(rotor, rdm.M, 2.5, 3.5, points=4000)
    q = np.linspace(2.5, 3.5, 4001)
    q = 0.5 * (q[1:] + q[:-1])
    mass = marginal(rdm, rotor, q).density.sum() * (1.0 / 4000)
    assert expectation(a, rdm) == pytest.approx(mass, abs=1e-12)
    full = window_observable(rotor, rdm.M, 0.0, 2 * np.pi)
    assert np.allclose(full, np.eye(rdm.M), atol=1e-10)


def test_active_matrix_gives_level_populations(two_rotor_state):
    N = two_rotor_state.N
    A = active_matrix(two_rotor_state.spectrum, N, level_projector(4, 0))
    assert np.allclose(A, A.conj().T, atol=1e-14)
    eq = equilibrium_rdm(two_rotor_state, M=4)
    assert np.dot(two_rotor_state.populations, A.diagonal().real) == pytest.approx(eq.diagonal[0], abs=1e-13)


def test_identity_observable_saturates_trivially(two_rotor_state):
    report = fluctuation_bound_check(two_rotor_state, np.eye(4, dtype=complex), [0.0, 0.5])
    assert report["passed"]
    assert report["bound"] == pytest.approx(0.0, abs=1e-14)
    assert report["equilibrium_value"] == pytest.approx(1.0)


@pytest.mark.parametrize("observable", ["level0", "window"])
def test_fluctuation_bound_holds(two_rotor_state, observable):
    rotor = two_rotor_state.spectrum.rotor
    a = level_projector(4, 0) if observable == "level0" else window_observable(rotor, 4, np.pi - 0.5, np.pi + 0.5)
    times = np.linspace(0.0, 50.0, 300)
    report = fluctuation_bound_check(two_rotor_state, a, times)
    assert report["passed"]
    assert report["lhs"] == pytest.approx(report["temporal_variance"] + report["typicality_variance"])
    assert report["temporal_variance_this_state"] >= 0.0
    assert report["N"] == two_rotor_state.N


def test_fluctuation_bound_attained_without_environment(two_level_state):
    # no environment and an observable confined to the active levels: lhs equals the bound
    a = np.diag([0.0, 1.0, 0.0]).astype(complex)
    report = fluctuation_bound_check(two_level_state, a, [0.0, 0.1])
    assert report["lhs"] == pytest.approx(1 / 12, rel=1e-10)
    assert report["bound"] == pytest.approx(1 / 12, rel=1e-10)
    assert report["passed"]


def test_fluctuation_rejects_non_hermitian(two_rotor_state):
    a = np.zeros((4, 4), dtype=complex)
    a[0, 1] = 1.0
    with pytest.raises(ValueError):
        fluctuation_bound_check(two_rotor_state, a, [0.0])
