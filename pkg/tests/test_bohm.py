# tests/test_bohm.py — pilot field, velocities, RK4 integrator, node guard, equivariance
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from src.analysis.trajectory import histogram, sup_distance
from src.dynamics.bohm import (
    Configuration, density_at, equivariance_check, eval_field, integrate, node_threshold, velocity, wrap,
)
from src.dynamics.pure_state import PureState, make_state, product_amplitudes_at
from src.errors import NodeProximity, NodeUnresolvable
from src.physics.many_body import build_model, select_active_space
from src.physics.random_potential import build_model_potentials
from src.physics.single_rotor import FourierBasis, RotorSpectrum
from src.seeds import stream_rng


def _angle_gap(a, b):
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))


@pytest.fixture(scope="module")
def free_rotor_state():
    """Free rotor in the plane wave exp(i q): uniform rotation at 4 pi rad per time unit."""
    order = np.array([0, 1, -1, 2, -2, 3, -3])
    spec = RotorSpectrum(u=0.0, basis=FourierBasis(3), energies=(order ** 2).astype(float),
                         coefficients=np.eye(7, dtype=complex)[order + 3], parity=np.zeros(7, dtype=int), kept=7)
    pots = build_model_potentials(1, 3, 0.0, master_seed=1)
    spectrum = build_model(1, spec, pots, E_tr=5.0)
    active = select_active_space(spectrum, 2.0)
    return PureState(spectrum=spectrum, active=active, populations=np.array([0.0, 1.0, 0.0]), phases=np.zeros(3))


@pytest.fixture(scope="module")
def ground_heavy_state(one_rotor_model):
    active = select_active_space(one_rotor_model, 30.0)
    return PureState(spectrum=one_rotor_model, active=active, populations=np.array([0.9, 0.1]),
                     phases=np.array([0.0, 1.0]))


def test_wrap_and_configuration():
    assert np.allclose(wrap([-0.5, 7.0]), [2 * np.pi - 0.5, 7.0 - 2 * np.pi])
    assert np.all(wrap(-1e-18) < 2 * np.pi)
    assert Configuration.minimum(3).Q == (np.pi,) * 3
    assert Configuration.at([7.0], 1.5).Q[0] == pytest.approx(7.0 - 2 * np.pi)
    assert node_threshold(2) == pytest.approx(1e-12 / (2 * np.pi) ** 2)


def test_density_matches_product_expansion(two_rotor_state):
    Q, t = np.array([2.7, 3.4]), 0.9
    rotor, basis = two_rotor_state.spectrum.rotor, two_rotor_state.spectrum.basis
    phi, _ = rotor.tables(Q, levels=basis.levels)
    d = product_amplitudes_at(two_rotor_state, t)
    psi = np.sum(d * phi[0, basis.labels[:, 0]] * phi[1, basis.labels[:, 1]])
    assert density_at(two_rotor_state, Q, t) == pytest.approx(abs(psi) ** 2, rel=1e-12)


def test_gradient_matches_finite_difference(two_rotor_state):
    Q, t, h = np.array([2.2, 3.9]), 0.35, 1e-6
    sample = eval_field(two_rotor_state, Q, t)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (eval_field(two_rotor_state, Q + e, t).psi - eval_field(two_rotor_state, Q - e, t).psi) / (2 * h)
        assert abs(sample.gradient[i] - fd) < 1e-6


def test_eval_field_checks_dimension(two_rotor_state):
    with pytest.raises(ValueError):
        eval_field(two_rotor_state, [1.0, 2.0, 3.0], 0.0)


def test_free_rotor_rotates_uniformly(free_rotor_state):
    sample = eval_field(free_rotor_state, [0.5], 0.0)
    assert velocity(sample)[0] == pytest.approx(4 * np.pi, rel=1e-12)
    traj = integrate(free_rotor_state, [0.5], tau_end=10.0, step=0.01)
    assert np.all(_angle_gap(traj.coordinate(0), 0.5 + 4 * np.pi * traj.times) < 1e-10)


def test_eigenstate_trajectory_is_frozen(one_rotor_model, level_state):
    for level in (0, 1):
        traj = integrate(level_state(one_rotor_model, level=level, N=2, phase=0.7), [2.0], tau_end=1.0, step=0.01)
        assert np.abs(traj.coordinate(0) - 2.0).max() < 1e-12


def test_uniform_grid_and_stride(two_rotor_state):
    traj = integrate(two_rotor_state, None, tau_end=0.1, step=0.01, stride=2)
    assert len(traj) == 6
    assert np.allclose(traj.times, np.arange(6) * 0.02)
    assert traj.step == pytest.approx(0.02)
    assert np.allclose(traj.positions[0], np.pi)
    assert traj.rows().shape == (6, 3)
    assert traj.diagnostics["steps"] == 10
    assert traj.diagnostics["min_density"] > traj.diagnostics["node_threshold"]
    assert np.all((traj.positions >= 0) & (traj.positions < 2 * np.pi))


def test_invalid_integration_arguments(two_rotor_state):
    with pytest.raises(ValueError):
        integrate(two_rotor_state, None, 1.0, step=0.0)
    with pytest.raises(ValueError):
        integrate(two_rotor_state, None, 1.0, stride=0)
    with pytest.raises(ValueError):
        integrate(two_rotor_state, [1.0], 1.0)


def test_zero_length_trajectory(two_rotor_state):
    traj = integrate(two_rotor_state, [1.0, 2.0], tau_end=0.0)
    assert len(traj) == 1
    assert traj.diagnostics["steps"] == 0


def test_rk4_fourth_order(ground_heavy_state):
    tau_end = 0.05

    def rhs(t, Q):
        return eval_field(ground_heavy_state, Q, t).velocities

    ref = solve_ivp(rhs, (0.0, tau_end), [np.pi], method="DOP853", rtol=1e-12, atol=1e-12).y[0, -1]
    errs = [_angle_gap(integrate(ground_heavy_state, [np.pi], tau_end, h).positions[-1, 0], ref)
            for h in (1e-3, 5e-4)]
    assert errs[1] < 1e-4
    assert errs[1] < errs[0] / 10


def test_node_proximity_raised(two_level_state):
    sample = eval_field(two_level_state, [np.pi], 0.0)
    with pytest.raises(NodeProximity) as info:
        velocity(sample, threshold=1e6)
    assert info.value.density == pytest.approx(sample.density)


def test_unresolvable_node_after_twenty_halvings(two_level_state):
    with pytest.raises(NodeUnresolvable) as info:
        integrate(two_level_state, [1.0], tau_end=0.01, step=0.01, threshold=1e6)
    assert info.value.depth == 20


def test_equivariance_swarm(two_level_state):
    report = equivariance_check(two_level_state, points=1000, tau_end=0.1, step=1e-3, seed=0)
    assert report["points"] == 1000
    assert report["ks_statistic"] < 0.07


def test_equivariance_needs_one_rotor(two_rotor_state):
    with pytest.raises(ValueError):
        equivariance_check(two_rotor_state, points=10)


def test_velocity_ignores_global_phase(two_rotor_state):
    Q = [2.9, 3.3]
    shifted = two_rotor_state.with_phases(two_rotor_state.phases + 1.234)
    v0 = eval_field(two_rotor_state, Q, 0.6).velocities
    v1 = eval_field(shifted, Q, 0.6).velocities
    # exp(i phi) changes the rounding of every amplitude, so agreement is to a few ulps, not bitwise
    np.testing.assert_allclose(v1, v0, rtol=1e-12, atol=1e-12)
    assert np.array_equal(eval_field(two_rotor_state, Q, 0.6).velocities, v0)


def test_trajectory_is_deterministic(two_rotor_state):
    a = integrate(two_rotor_state, None, tau_end=0.2)
    b = integrate(two_rotor_state, None, tau_end=0.2)
    assert np.array_equal(a.positions, b.positions)


@pytest.mark.slow
def test_equivariance_to_unit_time(two_level_state):
    assert equivariance_check(two_level_state, points=1000, tau_end=1.0, step=1e-3, seed=0)["passed"]


def _bin_fractions(traj, bins):
    h = histogram(traj, 0, bins)
    return h.counts / h.samples


def test_step_halving_keeps_histogram(ground_heavy_state):
    coarse = integrate(ground_heavy_state, None, tau_end=2.0, step=2e-3)
    fine = integrate(ground_heavy_state, None, tau_end=2.0, step=1e-3, stride=2)
    assert np.allclose(coarse.times, fine.times, atol=1e-12)
    assert _angle_gap(coarse.positions[:, 0], fine.positions[:, 0]).max() < 0.05
    assert sup_distance(_bin_fractions(coarse, 50), _bin_fractions(fine, 50)) <= 0.05


@pytest.mark.slow
def test_reference_step_halving(rotor300):
    pots = build_model_potentials(6, 100, 1.0, master_seed=2015)
    spectrum = build_model(6, rotor300, pots, E_tr=154.0)
    state = make_state(spectrum, select_active_space(spectrum, 139.0), stream_rng(2015, "rpse"))
    coarse = integrate(state, None, tau_end=50.0, step=0.01)
    fine = integrate(state, None, tau_end=50.0, step=0.005, stride=2)
    assert coarse.positions.shape == fine.positions.shape
    # the two records may decorrelate pointwise; their occupation statistics must not
    assert sup_distance(_bin_fractions(coarse, 200), _bin_fractions(fine, 200)) <= 0.1
