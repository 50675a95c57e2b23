# src/dynamics/pure_state.py — RPSE pure states on the active space and their exact time evolution
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from ..physics.many_body import ActiveSpace, ManyBodySpectrum
from ..physics.single_rotor import PHASE_FACTOR


def sample_rpse(N: int, seed) -> Tuple[np.ndarray, np.ndarray]:
    """Populations flat on the (N-1)-simplex, phases uniform on [0, 2 pi).

    Exponential trick: g_k ~ Exp(1), P_k = g_k / sum g.
    """
    if N < 1:
        raise ValueError(f"active space dimension must be >= 1, got {N}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.exponential(scale=1.0, size=N)
    P = g / g.sum()
    alpha = rng.uniform(0.0, 2.0 * np.pi, size=N)
    return P, alpha


def evolve(c: np.ndarray, energies: np.ndarray, dtau: float) -> np.ndarray:
    """Advance eigenbasis amplitudes by dtau (negative dtau runs backwards)."""
    return c * np.exp(-1j * PHASE_FACTOR * energies * dtau)


def active_space_hash(spectrum: ManyBodySpectrum, active: ActiveSpace) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(spectrum.energies[:active.N]).tobytes())
    h.update(str(spectrum.dim).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class PureState:
    spectrum: ManyBodySpectrum
    active: ActiveSpace
    populations: np.ndarray
    phases: np.ndarray          # alpha_k(0)
    seed: object = None
    _amp0: np.ndarray = field(init=False, repr=False)
    _U: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        N = self.active.N
        if self.populations.shape != (N,) or self.phases.shape != (N,):
            raise ValueError(f"populations/phases must have length N={N}")
        if np.any(self.populations < 0) or abs(self.populations.sum() - 1.0) > 1e-12:
            raise ValueError("populations must be non-negative and sum to 1")
        self.populations.setflags(write=False)
        self.phases.setflags(write=False)
        object.__setattr__(self, "_amp0", np.sqrt(self.populations) * np.exp(-1j * self.phases))
        object.__setattr__(self, "_U", np.ascontiguousarray(self.spectrum.vectors[:, :N]))

    @property
    def N(self) -> int:
        return self.active.N

    @property
    def energies(self) -> np.ndarray:
        return self.spectrum.energies[:self.active.N]

    @property
    def transform(self) -> np.ndarray:
        """<l|E_k> restricted to the active columns."""
        return self._U

    def with_phases(self, phases: np.ndarray) -> "PureState":
        return replace(self, phases=np.array(phases, dtype=float))

    def to_dict(self) -> Dict:
        return {
            "active_hash": active_space_hash(self.spectrum, self.active),
            "N": self.N,
            "E_max": self.active.E_max,
            "seed": self.seed,
            "populations": self.populations.tolist(),
            "phases": self.phases.tolist(),
        }


def make_state(spectrum: ManyBodySpectrum, active: ActiveSpace, seed) -> PureState:
    P, alpha = sample_rpse(active.N, seed)
    prov = None if isinstance(seed, np.random.Generator) else seed
    return PureState(spectrum=spectrum, active=active, populations=P, phases=alpha, seed=prov)


def state_from_dict(spectrum: ManyBodySpectrum, active: ActiveSpace, data: Dict) -> PureState:
    from ..errors import ArtifactMismatchError

    want = active_space_hash(spectrum, active)
    if data.get("active_hash") != want:
        raise ArtifactMismatchError(f"state file active-space hash {data.get('active_hash')} != {want}")
    return PureState(spectrum=spectrum, active=active,
                     populations=np.asarray(data["populations"], dtype=float),
                     phases=np.asarray(data["phases"], dtype=float), seed=data.get("seed"))


def coefficients_at(state: PureState, tau: float) -> np.ndarray:
    """c_k(tau) = sqrt(P_k) exp(-i alpha_k(tau)), alpha_k(tau) = alpha_k(0) + 2 pi E_k tau."""
    return evolve(state._amp0, state.energies, tau)


def product_amplitudes_at(state: PureState, tau: float) -> np.ndarray:
    """d_l(tau) = sum_k <l|E_k> c_k(tau)."""
    return state._U @ coefficients_at(state, tau)


# ---------- population diagnostics ----------
def population_diagnostics(state: PureState) -> Dict[str, float]:
    P = state.populations
    nz = P[P > 0]
    return {
        "equilibrium_energy": float(np.dot(P, state.energies)),
        "entropy": float(-np.sum(nz * np.log(nz))),
        "participation_ratio": float(1.0 / np.sum(P ** 2)),
    }


def rpse_ensemble_values(spectrum: ManyBodySpectrum, active: ActiveSpace) -> Dict[str, float]:
    """RPSE averages: <P_k> = 1/N, <S^P> = H_N - 1."""
    N = active.N
    return {
        "internal_energy": float(spectrum.energies[:N].mean()),
        "entropy": float(np.sum(1.0 / np.arange(1, N + 1)) - 1.0),
    }
