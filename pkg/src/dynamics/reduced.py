# src/dynamics/reduced.py — subsystem reduced density matrices, marginals, fluctuation bounds
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..physics.many_body import ActiveSpace, ManyBodySpectrum
from ..physics.single_rotor import PHASE_FACTOR, RotorSpectrum
from .pure_state import PureState, coefficients_at, product_amplitudes_at

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
GRID_POINTS = 10_000
BETA_FLOOR = 1e-9          # below this sigma_00 and sigma_11 agree to rounding: no temperature


@dataclass(frozen=True, eq=False)
class ReducedDensityMatrix:
    matrix: np.ndarray
    tag: str                        # "t=<tau>", "equilibrium", "ensemble-average", "canonical(<beta>)"
    time: Optional[float] = None

    @property
    def M(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()

    def violations(self) -> List[str]:
        out = []
        s = self.matrix
        herm = np.abs(s - s.conj().T).max()
        if herm > HERMITIAN_TOL:
            out.append(f"non-Hermitian ({herm:.2e})")
        tr = abs(np.trace(s) - 1.0)
        if tr > TRACE_TOL:
            out.append(f"trace off by {tr:.2e}")
        lam = np.linalg.eigvalsh(0.5 * (s + s.conj().T)).min()
        if lam < -PSD_TOL:
            out.append(f"negative eigenvalue {lam:.2e}")
        return out

    def rows(self) -> np.ndarray:
        """(tau, m, m', Re, Im); tau is NaN for untimed matrices."""
        m, mp = np.meshgrid(np.arange(self.M), np.arange(self.M), indexing="ij")
        t = np.full(m.size, np.nan if self.time is None else self.time)
        return np.column_stack([t, m.ravel(), mp.ravel(), self.matrix.real.ravel(), self.matrix.imag.ravel()])


# ---------- partial traces ----------
def _levels(spectrum: ManyBodySpectrum, rotor: int, M: Optional[int]) -> int:
    present = int(spectrum.basis.labels[:, rotor].max()) + 1
    if M is None:
        return present
    if M < present:
        logger.warning("subsystem truncated to %d levels; basis occupies %d", M, present)
    return M


def _scatter(spectrum: ManyBodySpectrum, rotor: int, M: int, amplitudes: np.ndarray) -> np.ndarray:
    """Rows of `amplitudes` (indexed by product state) -> array (M, n_env, ...)."""
    m, env, n_env = spectrum.basis.subsystem_layout(rotor)
    keep = m < M
    X = np.zeros((M, n_env) + amplitudes.shape[1:], dtype=complex)
    X[m[keep], env[keep]] = amplitudes[keep]
    return X


def rdm_from_amplitudes(spectrum: ManyBodySpectrum, d: np.ndarray, rotor: int = 0,
                        M: Optional[int] = None) -> np.ndarray:
    M = _levels(spectrum, rotor, M)
    X = _scatter(spectrum, rotor, M, d)
    return X @ X.conj().T


def rdm_at(state: PureState, tau: float, rotor: int = 0, M: Optional[int] = None) -> ReducedDensityMatrix:
    """sigma_{mm'}(tau) = sum_e d_(m,e) conj(d_(m',e))."""
    s = rdm_from_amplitudes(state.spectrum, product_amplitudes_at(state, tau), rotor, M)
    return ReducedDensityMatrix(matrix=s, tag=f"t={tau:g}", time=float(tau))


def eigenstate_rdms(spectrum: ManyBodySpectrum, N: int, rotor: int = 0, M: Optional[int] = None) -> np.ndarray:
    """S[k] = Tr_E |E_k><E_k| for k < N, shape (N, M, M)."""
    M = _levels(spectrum, rotor, M)
    X = _scatter(spectrum, rotor, M, spectrum.vectors[:, :N])
    return np.einsum("aek,bek->kab", X, X.conj(), optimize=True)


def equilibrium_rdm(state: PureState, rotor: int = 0, M: Optional[int] = None,
                    S: Optional[np.ndarray] = None) -> ReducedDensityMatrix:
    """sigma-bar = sum_k P_k Tr_E |E_k><E_k|; phases never enter."""
    if not state.spectrum.distinct:
        logger.warning("eigenvalues not distinct: the diagonal equilibrium form is not the time average")
    S = eigenstate_rdms(state.spectrum, state.N, rotor, M) if S is None else S
    return ReducedDensityMatrix(matrix=np.tensordot(state.populations, S, axes=(0, 0)), tag="equilibrium")


def ensemble_average_rdm(spectrum: ManyBodySpectrum, active: ActiveSpace, rotor: int = 0,
                         M: Optional[int] = None, S: Optional[np.ndarray] = None) -> ReducedDensityMatrix:
    """RPSE average with <P_k> = 1/N."""
    S = eigenstate_rdms(spectrum, active.N, rotor, M) if S is None else S
    return ReducedDensityMatrix(matrix=S.mean(axis=0), tag="ensemble-average")


def canonical_rdm(spec: RotorSpectrum, beta: float, M: int = 8) -> ReducedDensityMatrix:
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    eps = spec.energies[:M]
    w = np.exp(-beta * (eps - eps[0]))
    return ReducedDensityMatrix(matrix=np.diag(w / w.sum()).astype(complex), tag=f"canonical({beta:g})")


def fit_canonical_beta(rdm: ReducedDensityMatrix, spec: RotorSpectrum) -> float:
    """beta from sigma_11 / sigma_00 = exp(-beta (eps_1 - eps_0)); NaN when either population is empty.

    The result may be zero or negative (inverted populations); see `canonical_column`.
    """
    d = rdm.diagonal
    if rdm.M < 2 or d[0] <= 0 or d[1] <= 0:
        return float("nan")
    return float(np.log(d[0] / d[1]) / (spec.energies[1] - spec.energies[0]))


def canonical_column(spec: RotorSpectrum, beta: float, levels: int, M: int) -> Optional[np.ndarray]:
    """Canonical populations over `levels` single-rotor states, padded to M; None unless BETA_FLOOR < beta < inf."""
    if not np.isfinite(beta) or beta <= BETA_FLOOR:
        return None
    col = np.zeros(M)
    k = min(levels, M)
    col[:k] = canonical_rdm(spec, beta, levels).diagonal[:k]
    return col


def time_averaged_rdm(state: PureState, times: Sequence[float], rotor: int = 0,
                      M: Optional[int] = None) -> ReducedDensityMatrix:
    acc = sum(rdm_at(state, t, rotor, M).matrix for t in times)
    return ReducedDensityMatrix(matrix=acc / len(times), tag="time-average")


def window_averaged_rdm(state: PureState, window: float, rotor: int = 0,
                        M: Optional[int] = None) -> ReducedDensityMatrix:
    """Exact average of sigma(tau) over [0, W].

    Coherence c_k conj(c_l) is weighted by (1 - exp(-i w W)) / (i w W), w = 2 pi (E_k - E_l).
    """
    if window <= 0:
        raise ValueError(f"window must be > 0, got {window}")
    M = _levels(state.spectrum, rotor, M)
    c = coefficients_at(state, 0.0)
    x = PHASE_FACTOR * np.subtract.outer(state.energies, state.energies) * window
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(np.abs(x) > 1e-12, (1.0 - np.exp(-1j * x)) / (1j * x), 1.0)
    X = _scatter(state.spectrum, rotor, M, state.transform)
    s = np.einsum("aek,kl,bel->ab", X, np.outer(c, c.conj()) * g, X.conj(), optimize=True)
    return ReducedDensityMatrix(matrix=s, tag=f"window={window:g}")


def rdm_convergence(state: PureState, windows: Sequence[float], rotor: int = 0,
                    M: Optional[int] = None) -> List[Dict[str, float]]:
    """Frobenius distance of the window average over [0, W] to sigma-bar, per window W."""
    eq = equilibrium_rdm(state, rotor, M).matrix
    out = []
    for W in windows:
        avg = window_averaged_rdm(state, W, rotor, M).matrix
        out.append({"window": float(W), "frobenius": float(np.linalg.norm(avg - eq))})
    return out


# ---------- marginal distributions ----------
@dataclass(frozen=True, eq=False)
class MarginalDistribution:
    grid: np.ndarray
    density: np.ndarray
    tag: str

    @property
    def width(self) -> float:
        return 2.0 * np.pi / len(self.grid)

    def normalization(self) -> float:
        return float(self.density.sum() * self.width)


def default_grid(points: int = GRID_POINTS) -> np.ndarray:
    """Bin centres of `points` equal intervals on [0, 2 pi)."""
    return (np.arange(points) + 0.5) * (2.0 * np.pi / points)


def marginal(rdm: ReducedDensityMatrix, spec: RotorSpectrum, grid: Optional[np.ndarray] = None) -> MarginalDistribution:
    """p(q) = sum_{mm'} sigma_{mm'} phi_m(q) conj(phi_m'(q))."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    phi, _ = spec.tables(grid, levels=rdm.M)
    p = np.einsum("qm,mn,qn->q", phi, rdm.matrix, phi.conj(), optimize=True)
    if np.abs(p.imag).max(initial=0.0) > 1e-12:
        logger.warning("marginal has imaginary residue %.2e", np.abs(p.imag).max())
    return MarginalDistribution(grid=grid, density=p.real, tag=rdm.tag)


# ---------- fluctuation bounds ----------
def level_projector(M: int, m: int = 0) -> np.ndarray:
    a = np.zeros((M, M), dtype=complex)
    a[m, m] = 1.0
    return a


def window_observable(spec: RotorSpectrum, M: int, q_lo: float, q_hi: float, points: int = 4000) -> np.ndarray:
    """a_{mm'} = int_{q_lo}^{q_hi} conj(phi_m) phi_m' dq (midpoint rule), so Tr(a sigma) is the window mass."""
    h = (q_hi - q_lo) / points
    q = q_lo + (np.arange(points) + 0.5) * h
    phi, _ = spec.tables(q, levels=M)
    return (phi.conj().T @ phi) * h


def spectral_variance_bound(eigenvalues: Sequence[float], N: Optional[int] = None) -> float:
    """D2(A)/(N+1) with D2 = sum_k (lambda_k - D1)^2 over the active-space spectrum of A."""
    lam = np.asarray(eigenvalues, dtype=float)
    N = len(lam) if N is None else N
    return float(np.sum((lam - lam.mean()) ** 2) / (N + 1))


def expectation(a: np.ndarray, rdm: ReducedDensityMatrix) -> float:
    return float(np.real(np.trace(a @ rdm.matrix)))


def active_matrix(spectrum: ManyBodySpectrum, N: int, a: np.ndarray, rotor: int = 0) -> np.ndarray:
    """<E_k| a (x) 1_E |E_l> for k, l < N."""
    X = _scatter(spectrum, rotor, a.shape[0], spectrum.vectors[:, :N])
    return np.einsum("aek,ab,bel->kl", X.conj(), a, X, optimize=True)


def fluctuation_bound_check(state: PureState, a: np.ndarray, times: Sequence[float], rotor: int = 0,
                            S: Optional[np.ndarray] = None) -> Dict[str, float]:
    """RPSE-averaged temporal variance of a(tau) plus the typicality variance of its equilibrium
    value, against [Tr(a^2 <sigma>) - Tr(a <sigma>)^2] / (N + 1).

    The variance along this state's own evolution (sampled at `times`) is reported alongside.
    """
    if np.abs(a - a.conj().T).max() > HERMITIAN_TOL:
        raise ValueError("observable must be Hermitian")
    M = a.shape[0]
    N = state.N
    S = eigenstate_rdms(state.spectrum, N, rotor, M) if S is None else S
    A = active_matrix(state.spectrum, N, a, rotor)
    a_k = A.diagonal().real
    a_eq = float(np.dot(state.populations, a_k))
    # flat Dirichlet: <P_k P_l> = 1 / (N (N + 1)) for k != l
    off = float(np.sum(np.abs(A) ** 2) - np.sum(a_k ** 2))
    temporal_avg = off / (N * (N + 1))
    typicality = float(np.sum((a_k - a_k.mean()) ** 2) / (N * (N + 1)))
    series = np.array([expectation(a, rdm_at(state, t, rotor, M)) for t in times])
    temporal_state = float(np.mean((series - a_eq) ** 2)) if series.size else float("nan")

    avg = S.mean(axis=0)
    tr1 = float(np.real(np.trace(a @ avg)))
    tr2 = float(np.real(np.trace(a @ a @ avg)))
    bound = (tr2 - tr1 ** 2) / (N + 1)
    lhs = temporal_avg + typicality
    report = {
        "N": N,
        "equilibrium_value": a_eq,
        "temporal_variance": temporal_avg,
        "temporal_variance_this_state": temporal_state,
        "typicality_variance": typicality,
        "lhs": lhs,
        "bound": float(bound),
        "passed": bool(lhs <= bound * (1.0 + 1e-10) + 1e-15),
    }
    logger.info("fluctuation bound: lhs=%.3e bound=%.3e passed=%s", lhs, bound, report["passed"])
    return report
