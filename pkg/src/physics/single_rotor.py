# src/physics/single_rotor.py — confined planar rotor on the Fourier basis
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from ..errors import EigenSolverError

logger = logging.getLogger(__name__)

# ---------- unit system ----------
# energy in hbar^2/2I, time in 4*pi*I/hbar; only these two factors survive
PHASE_FACTOR = 2.0 * np.pi
VELOCITY_FACTOR = 4.0 * np.pi
SQRT_2PI = np.sqrt(2.0 * np.pi)

RESIDUAL_TOL = 1e-8
ORTHO_TOL = 1e-10


def phase_advance(energy, tau):
    """Phase accumulated by an eigenstate of scaled energy `energy` over scaled time `tau`."""
    return PHASE_FACTOR * np.asarray(energy) * tau


def energy_from_phase(phase, tau):
    return np.asarray(phase) / (PHASE_FACTOR * tau)


@dataclass(frozen=True)
class FourierBasis:
    """chi_j(q) = exp(i j q)/sqrt(2 pi), |j| <= j_max."""

    j_max: int = 20

    def __post_init__(self):
        if self.j_max < 1:
            raise ValueError(f"j_max must be >= 1, got {self.j_max}")

    @property
    def dim(self) -> int:
        return 2 * self.j_max + 1

    @property
    def js(self) -> np.ndarray:
        return np.arange(-self.j_max, self.j_max + 1)

    def functions(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return np.exp(1j * np.outer(q, self.js)) / SQRT_2PI


# ---------- Hamiltonian ----------
def build_rotor_hamiltonian(u: float, basis: FourierBasis) -> np.ndarray:
    """-d^2/dq^2 + (u/2)(1 + cos q) on the chi_j basis (real symmetric)."""
    if u < 0:
        raise ValueError(f"barrier height must be >= 0, got {u}")
    js = basis.js.astype(float)
    H = np.diag(js ** 2 + 0.5 * u)
    # <chi_j|cos q|chi_{j±1}> = 1/2
    off = np.full(basis.dim - 1, 0.25 * u)
    H += np.diag(off, 1) + np.diag(off, -1)
    return H


def harmonic_reference(u: float, m) -> np.ndarray:
    """Parabolic approximation u(q-pi)^2/4 -> (m + 1/2) sqrt(u)."""
    return (np.asarray(m, dtype=float) + 0.5) * np.sqrt(u)


def potential_profile(u: float, q) -> np.ndarray:
    return 0.5 * u * (1.0 + np.cos(np.asarray(q, dtype=float)))


# ---------- spectrum ----------
@dataclass(frozen=True, eq=False)
class RotorSpectrum:
    u: float
    basis: FourierBasis
    energies: np.ndarray          # all 2*j_max+1 levels, ascending
    coefficients: np.ndarray      # row m -> c_{m,j}, j = -j_max..j_max
    parity: np.ndarray            # +1 even, -1 odd, 0 indefinite (degenerate levels)
    kept: int = 10
    _half: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.kept <= len(self.energies):
            raise ValueError(f"kept levels must be in [1, {len(self.energies)}], got {self.kept}")
        for arr in (self.energies, self.coefficients, self.parity):
            arr.setflags(write=False)
        # c_j for j >= 0, used by the parity-definite evaluation path
        object.__setattr__(self, "_half", self.coefficients[:, self.basis.j_max:].real.copy())

    @property
    def levels(self) -> int:
        return self.kept

    def with_kept(self, kept: int) -> "RotorSpectrum":
        return RotorSpectrum(self.u, self.basis, self.energies, self.coefficients, self.parity, kept)

    def tables(self, q, levels: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """phi_m(q) and dphi_m/dq for m < levels; arrays of shape (len(q), levels)."""
        levels = self.kept if levels is None else levels
        q = np.atleast_1d(np.asarray(q, dtype=float))
        jp = np.arange(self.basis.j_max + 1, dtype=float)
        val = np.empty((q.size, levels), dtype=complex)
        der = np.empty((q.size, levels), dtype=complex)

        par = self.parity[:levels]
        even = np.flatnonzero(par == 1)
        odd = np.flatnonzero(par == -1)
        other = np.flatnonzero(par == 0)

        if even.size or odd.size:
            cos = np.cos(np.outer(q, jp))
            sin = np.sin(np.outer(q, jp))
        if even.size:
            h = self._half[even]
            w = np.where(jp == 0, 1.0, 2.0)
            val[:, even] = cos @ (h * w).T / SQRT_2PI
            der[:, even] = -(sin @ (2.0 * jp * h).T) / SQRT_2PI
        if odd.size:
            h = self._half[odd]
            val[:, odd] = 1j * (sin @ (2.0 * h).T) / SQRT_2PI
            der[:, odd] = 1j * (cos @ (2.0 * jp * h).T) / SQRT_2PI
        if other.size:
            E = self.basis.functions(q)
            c = self.coefficients[other]
            val[:, other] = E @ c.T
            der[:, other] = E @ (1j * self.basis.js * c).T
        return val, der

    def table_rows(self) -> np.ndarray:
        """(m, eps_m, harmonic reference) for the kept levels."""
        m = np.arange(self.kept)
        return np.column_stack([m, self.energies[:self.kept], harmonic_reference(self.u, m)])

    def coefficient_rows(self) -> np.ndarray:
        """(m, j, Re c, Im c) for the kept levels."""
        m, j = np.meshgrid(np.arange(self.kept), self.basis.js, indexing="ij")
        c = self.coefficients[:self.kept]
        return np.column_stack([m.ravel(), j.ravel(), c.real.ravel(), c.imag.ravel()])


def _fix_phase(vecs: np.ndarray) -> np.ndarray:
    # 最大模系数取为正实数
    idx = np.argmax(np.abs(vecs), axis=0)
    lead = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.conj(lead) / np.abs(lead))


def _symmetrize_parity(vals: np.ndarray, vecs: np.ndarray, gap_tol: float = 1e-9):
    parity = np.zeros(vecs.shape[1], dtype=int)
    gaps = np.diff(vals)
    for k in range(vecs.shape[1]):
        lo = gaps[k - 1] if k > 0 else np.inf
        hi = gaps[k] if k < len(gaps) else np.inf
        if min(lo, hi) < gap_tol:
            continue  # degenerate pair: no definite parity
        v = vecs[:, k]
        overlap = float(np.real(np.vdot(v, v[::-1])))
        if abs(overlap) < 1.0 - 1e-8:
            continue
        p = 1 if overlap > 0 else -1
        w = 0.5 * (v + p * v[::-1])
        vecs[:, k] = w / np.linalg.norm(w)
        parity[k] = p
    return vecs, parity


def diagonalize_rotor(H: np.ndarray, kept: int = 10) -> RotorSpectrum:
    dim = H.shape[0]
    if H.shape != (dim, dim) or dim % 2 == 0:
        raise ValueError(f"expected an odd square matrix over j = -j_max..j_max, got shape {H.shape}")
    if not np.allclose(H, H.conj().T, atol=1e-12):
        raise ValueError("rotor Hamiltonian is not Hermitian")
    try:
        vals, vecs = linalg.eigh(H)
    except (linalg.LinAlgError, ValueError) as e:
        raise EigenSolverError(dim, str(e)) from e

    vecs = np.array(vecs, dtype=complex)
    vecs, parity = _symmetrize_parity(vals, vecs)
    vecs = _fix_phase(vecs)
    if np.isrealobj(H):
        # 实对称矩阵：相位约定后系数为实数
        vecs = vecs.real.astype(complex)

    resid = np.linalg.norm(H @ vecs - vecs * vals, axis=0)
    if resid.max() > RESIDUAL_TOL:
        raise EigenSolverError(dim, f"residual {resid.max():.2e} exceeds {RESIDUAL_TOL}")
    ortho = np.abs(vecs.conj().T @ vecs - np.eye(dim)).max()
    if ortho > ORTHO_TOL:
        raise EigenSolverError(dim, f"orthonormality defect {ortho:.2e}")

    j_max = (dim - 1) // 2
    u = 2.0 * float(np.real(H[j_max, j_max]))
    logger.debug("rotor spectrum u=%.3f j_max=%d eps_0=%.6f", u, j_max, vals[0])
    return RotorSpectrum(u=u, basis=FourierBasis(j_max), energies=np.asarray(vals, dtype=float),
                         coefficients=vecs.T.copy(), parity=parity, kept=min(kept, dim))


def solve_rotor(u: float = 300.0, j_max: int = 20, kept: int = 10) -> RotorSpectrum:
    return diagonalize_rotor(build_rotor_hamiltonian(u, FourierBasis(j_max)), kept=kept)


def eval_eigenfunction(spec: RotorSpectrum, m: int, q) -> Tuple[complex, complex]:
    """phi_m(q) and dphi_m/dq(q); array inputs return arrays."""
    if not 0 <= m < spec.kept:
        raise ValueError(f"level {m} outside kept range [0, {spec.kept})")
    scalar = np.ndim(q) == 0
    val, der = spec.tables(np.mod(q, 2.0 * np.pi), levels=m + 1)
    if scalar:
        return complex(val[0, m]), complex(der[0, m])
    return val[:, m], der[:, m]


def probability_profiles(spec: RotorSpectrum, q, levels: Optional[int] = None) -> np.ndarray:
    """|phi_m(q)|^2 offset by eps_m, columns m < levels."""
    levels = spec.kept if levels is None else levels
    val, _ = spec.tables(q, levels=levels)
    return np.abs(val) ** 2 + spec.energies[:levels]
