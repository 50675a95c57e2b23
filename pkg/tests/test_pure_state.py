# tests/test_pure_state.py — RPSE sampling and exact evolution on the active space
import numpy as np
import pytest
from scipy import stats
from scipy.integrate import solve_ivp

from src.dynamics.pure_state import (
    PureState, coefficients_at, evolve, make_state, population_diagnostics, product_amplitudes_at,
    rpse_ensemble_values, sample_rpse, state_from_dict,
)
from src.errors import ArtifactMismatchError
from src.physics.many_body import assemble_hamiltonian, select_active_space


def test_rpse_moments():
    rng = np.random.default_rng(0)
    draws = [sample_rpse(5, rng) for _ in range(20000)]
    P = np.array([d[0] for d in draws])
    alpha = np.array([d[1] for d in draws])
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(P >= 0)
    assert np.allclose(P.mean(axis=0), 0.2, atol=0.01)
    # flat simplex: Var(P_k) = (N - 1) / (N^2 (N + 1))
    assert np.allclose(P.var(axis=0), 4 / 150, rtol=0.05)
    assert np.all((alpha >= 0) & (alpha < 2 * np.pi))
    assert abs(np.cos(alpha).mean()) < 0.02


def test_sample_rejects_empty_space():
    with pytest.raises(ValueError):
        sample_rpse(0, 1)


def test_same_seed_same_state(two_rotor_state):
    again = make_state(two_rotor_state.spectrum, two_rotor_state.active, seed=3)
    assert np.array_equal(again.populations, two_rotor_state.populations)
    assert np.array_equal(again.phases, two_rotor_state.phases)


def test_norm_conserved(two_rotor_state):
    for t in (0.0, 0.37, 12.5, 1000.0):
        d = product_amplitudes_at(two_rotor_state, t)
        assert abs(np.vdot(d, d).real - 1.0) <= 1e-12


def test_time_reversal(two_rotor_state):
    c0 = coefficients_at(two_rotor_state, 0.0)
    back = evolve(coefficients_at(two_rotor_state, 3.7), two_rotor_state.energies, -3.7)
    assert np.abs(back - c0).max() <= 1e-13


def test_populations_constant(two_rotor_state):
    c = coefficients_at(two_rotor_state, 5.1)
    assert np.allclose(np.abs(c) ** 2, two_rotor_state.populations, atol=1e-15)


def test_invalid_populations(two_rotor_model):
    spectrum, _ = two_rotor_model
    active = select_active_space(spectrum, 0.5 * (spectrum.energies[1] + spectrum.energies[2]))
    with pytest.raises(ValueError):
        PureState(spectrum=spectrum, active=active, populations=np.array([0.7, 0.7]), phases=np.zeros(2))
    with pytest.raises(ValueError):
        PureState(spectrum=spectrum, active=active, populations=np.array([1.0]), phases=np.zeros(1))


def test_state_round_trip(two_rotor_state):
    data = two_rotor_state.to_dict()
    back = state_from_dict(two_rotor_state.spectrum, two_rotor_state.active, data)
    assert np.array_equal(back.populations, two_rotor_state.populations)
    assert back.seed == 3
    with pytest.raises(ArtifactMismatchError):
        state_from_dict(two_rotor_state.spectrum, two_rotor_state.active, dict(data, active_hash="0" * 16))


def test_with_phases_keeps_populations(two_rotor_state):
    other = two_rotor_state.with_phases(np.zeros(two_rotor_state.N))
    assert np.array_equal(other.populations, two_rotor_state.populations)
    assert not np.any(other.phases)


def test_population_diagnostics(one_rotor_model):
    active = select_active_space(one_rotor_model, 30.0)
    state = PureState(spectrum=one_rotor_model, active=active, populations=np.array([0.5, 0.5]),
                      phases=np.zeros(2))
    diag = population_diagnostics(state)
    assert diag["entropy"] == pytest.approx(np.log(2))
    assert diag["participation_ratio"] == pytest.approx(2.0)
    assert diag["equilibrium_energy"] == pytest.approx(state.energies.mean())
    ens = rpse_ensemble_values(one_rotor_model, active)
    assert ens["entropy"] == pytest.approx(0.5)


def test_population_marginals_are_beta():
    rng = np.random.default_rng(11)
    N = 5
    P = np.array([sample_rpse(N, rng)[0] for _ in range(10_000)])
    for k in (0, N - 1):
        assert stats.kstest(P[:, k], "beta", args=(1, N - 1)).pvalue > 0.01


def test_amplitudes_solve_schrodinger(two_rotor_model, two_rotor_state):
    spectrum, pots = two_rotor_model
    H = assemble_hamiltonian(spectrum.basis, spectrum.rotor, pots)
    d0 = product_amplitudes_at(two_rotor_state, 0.0)
    tau = 0.3
    sol = solve_ivp(lambda t, y: -2j * np.pi * (H @ y), (0.0, tau), d0, method="DOP853",
                    rtol=1e-12, atol=1e-12, t_eval=[tau])
    assert sol.success
    assert np.abs(sol.y[:, -1] - product_amplitudes_at(two_rotor_state, tau)).max() < 1e-8
