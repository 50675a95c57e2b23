# tests/conftest.py — shared rotor spectra, tiny models and an isolated workspace
from __future__ import annotations

import numpy as np
import pytest

from src.dynamics.pure_state import PureState, make_state
from src.physics.many_body import build_model, select_active_space
from src.physics.random_potential import build_model_potentials
from src.physics.single_rotor import solve_rotor
from src.service.commands import Workspace
from src.service.config import ExperimentConfig, Settings


@pytest.fixture(scope="session")
def rotor300():
    return solve_rotor(300.0, 20, 10)


@pytest.fixture(scope="session")
def two_rotor_model(rotor300):
    """Two coupled rotors, sigma_V = 1, basis E^(0) < 80 (a few polyads)."""
    pots = build_model_potentials(2, L=20, sigma_V=1.0, master_seed=7)
    return build_model(2, rotor300, pots, E_tr=80.0), pots


@pytest.fixture(scope="session")
def two_rotor_state(two_rotor_model):
    spectrum, _ = two_rotor_model
    E_max = 0.5 * (spectrum.energies[5] + spectrum.energies[6])
    return make_state(spectrum, select_active_space(spectrum, E_max), seed=3)


@pytest.fixture(scope="session")
def one_rotor_model(rotor300):
    """Isolated rotor without random potential: H is diagonal, three levels below 50."""
    pots = build_model_potentials(1, L=10, sigma_V=0.0, master_seed=1)
    return build_model(1, rotor300, pots, E_tr=50.0)


def single_level_state(spectrum, level: int, N: int, phase: float = 0.0) -> PureState:
    active = select_active_space(spectrum, 0.5 * (spectrum.energies[N - 1] + spectrum.energies[N]))
    P = np.zeros(N)
    P[level] = 1.0
    return PureState(spectrum=spectrum, active=active, populations=P, phases=np.full(N, phase))


@pytest.fixture
def level_state():
    return single_level_state


@pytest.fixture(scope="session")
def two_level_state(one_rotor_model):
    """One rotor, N = 2 (E_max = 30), populations near one half."""
    active = select_active_space(one_rotor_model, 30.0)
    return PureState(spectrum=one_rotor_model, active=active, populations=np.array([0.55, 0.45]),
                     phases=np.array([0.3, 1.9]))


@pytest.fixture
def workspace(tmp_path):
    settings = Settings(output_dir=str(tmp_path / "runs"), db_path=str(tmp_path / "rotors.db"),
                        cache_dir=str(tmp_path / "cache"), log_level="INFO")
    ws = Workspace.open(settings)
    yield ws
    ws.conn.close()


@pytest.fixture
def tiny_config(tmp_path):
    """Two rotors, short trajectory, coarse analysis grid."""
    return ExperimentConfig(n=2, L=20, master_seed=7, E_tr=80.0, audit_E_tr=100.0, E_max=60.0,
                            tau_end=4.0, bins=200, max_lag=1.0, source_bins=10, target_bins=20,
                            snapshot_times="0,0.5", output_dir=str(tmp_path / "out"))
