# src/physics/many_body.py — product basis, coupled-rotor Hamiltonian, dense diagonalization
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from ..errors import ActiveSpaceError, EigenSolverError
from .random_potential import ModelPotentials
from .single_rotor import RotorSpectrum

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
ORTHO_TOL = 1e-10
DISTINCT_TOL = 1e-10


# ---------- product basis ----------
@dataclass(frozen=True, eq=False)
class ProductBasis:
    n: int
    levels: int                 # single-rotor levels available to each factor
    labels: np.ndarray          # (dim, n) level indices l_i, rows ascending in E^(0)
    energies: np.ndarray        # E_l^(0) = sum_i eps_{l_i}
    polyads: np.ndarray         # P(l) = sum_i l_i
    cutoff: Optional[float] = None
    polyad_cap: Optional[int] = None

    def __post_init__(self):
        for arr in (self.labels, self.energies, self.polyads):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return len(self.energies)

    def index(self) -> Dict[Tuple[int, ...], int]:
        return {tuple(int(x) for x in row): k for k, row in enumerate(self.labels)}

    def subsystem_layout(self, rotor: int = 0) -> Tuple[np.ndarray, np.ndarray, int]:
        """Row k -> (subsystem level, environment slot); the partial trace is then a dense
        (levels x n_env) reduction with the subsystem level as the slow key."""
        if not 0 <= rotor < self.n:
            raise ValueError(f"subsystem rotor {rotor} outside [0, {self.n})")
        if self.n == 1:
            return self.labels[:, 0].copy(), np.zeros(self.dim, dtype=int), 1
        others = np.delete(self.labels, rotor, axis=1)
        _, env = np.unique(others, axis=0, return_inverse=True)
        env = np.asarray(env).reshape(-1)
        return self.labels[:, rotor].copy(), env, int(env.max()) + 1


def build_product_basis(n: int, spec: RotorSpectrum, E_tr: Optional[float] = None,
                        polyad_cap: Optional[int] = None) -> ProductBasis:
    """All l with E_l^(0) < E_tr (and/or P(l) <= polyad_cap) over the kept rotor levels."""
    if n < 1:
        raise ValueError(f"rotor count must be >= 1, got {n}")
    if E_tr is None and polyad_cap is None:
        raise ValueError("need an energy cutoff E_tr or a polyad cap")
    K = spec.kept
    eps = spec.energies[:K]
    ceiling = np.inf if E_tr is None else float(E_tr)
    cap = K * n if polyad_cap is None else int(polyad_cap)
    if n * eps[0] >= ceiling or cap < 0:
        raise ValueError(f"cutoff E_tr={E_tr} does not admit the ground product state ({n * eps[0]:.3f})")
    if E_tr is not None and eps[K - 1] + (n - 1) * eps[0] < ceiling:
        logger.warning("kept levels (%d) truncate the product basis below E_tr=%.3f", K, ceiling)
    if polyad_cap is not None and polyad_cap > K - 1:
        logger.warning("polyad cap %d needs levels beyond the %d kept", polyad_cap, K)

    found: List[Tuple[int, ...]] = []

    def walk(prefix: List[int], energy: float, pol: int):
        if len(prefix) == n:
            found.append(tuple(prefix))
            return
        rest = n - len(prefix) - 1
        for m in range(K):
            # remaining rotors contribute at least eps_0 each
            if energy + eps[m] + rest * eps[0] >= ceiling or pol + m > cap:
                break
            walk(prefix + [m], energy + eps[m], pol + m)

    walk([], 0.0, 0)
    # fsum: permutation-invariant zero-order energies
    e0 = np.array([math.fsum(eps[list(l)]) for l in found])
    order = sorted(range(len(found)), key=lambda k: (e0[k], found[k]))
    labels = np.array([found[k] for k in order], dtype=int).reshape(len(found), n)
    return ProductBasis(n=n, levels=K, labels=labels, energies=e0[order],
                        polyads=labels.sum(axis=1), cutoff=E_tr, polyad_cap=polyad_cap)


def polyad_census(basis: ProductBasis) -> np.ndarray:
    """Rows (P, count, cumulative count)."""
    ps, counts = np.unique(basis.polyads, return_counts=True)
    return np.column_stack([ps, counts, np.cumsum(counts)])


# ---------- matrix elements ----------
def fourier_shift_matrices(spec: RotorSpectrum, levels: int) -> np.ndarray:
    """A[l + l_max][m, m'] = <phi_m| e^{i l q} |phi_m'>, l_max = 2 j_max.

    Shifts beyond 2 j_max vanish inside the truncated Fourier basis.
    """
    C = spec.coefficients[:levels]
    dim = C.shape[1]
    l_max = dim - 1
    A = np.zeros((2 * l_max + 1, levels, levels), dtype=complex)
    for l in range(-l_max, l_max + 1):
        # sum_j conj(c_{m,j}) c_{m',j-l}
        if l >= 0:
            A[l + l_max] = np.conj(C[:, l:]) @ C[:, :dim - l].T
        else:
            A[l + l_max] = np.conj(C[:, :dim + l]) @ C[:, -l:].T
    return A


def one_body_matrix(A: np.ndarray, pot) -> np.ndarray:
    l_max = (A.shape[0] - 1) // 2
    return np.tensordot(pot.window(l_max), A, axes=(0, 0))


def pair_tensor(A: np.ndarray, pot) -> np.ndarray:
    """W[a, b, a', b'] = <a b| V(q_i - q_j) |a' b'> with e^{ilq_i} e^{-ilq_j} factors."""
    l_max = (A.shape[0] - 1) // 2
    return np.einsum("l,lac,lbd->abcd", pot.window(l_max), A, A[::-1], optimize=True)


def assemble_hamiltonian(basis: ProductBasis, spec: RotorSpectrum, pots: ModelPotentials,
                         workers: int = 1, block: int = 256) -> np.ndarray:
    """H = diag(E^(0)) + sum_i V_i(q_i) + sum_{i<j} V_ij(q_i - q_j) on the product basis."""
    pots.check(basis.n)
    n, D = basis.n, basis.dim
    A = fourier_shift_matrices(spec, basis.levels)
    one = [one_body_matrix(A, p) for p in pots.one_body]
    pairs = {key: pair_tensor(A, p) for key, p in pots.pairs.items()}
    labels = basis.labels

    def rows(r0: int, r1: int) -> np.ndarray:
        Lr = labels[r0:r1]
        diff = Lr[:, None, :] != labels[None, :, :]
        ndiff = diff.sum(axis=-1)
        out = np.zeros((r1 - r0, D), dtype=complex)
        out[np.arange(r1 - r0), np.arange(r0, r1)] = basis.energies[r0:r1]
        for i in range(n):
            mask = (ndiff - diff[..., i]) == 0
            out += np.where(mask, one[i][Lr[:, None, i], labels[None, :, i]], 0.0)
        for (i, j), W in pairs.items():
            mask = (ndiff - diff[..., i] - diff[..., j]) == 0
            vals = W[Lr[:, None, i], Lr[:, None, j], labels[None, :, i], labels[None, :, j]]
            out += np.where(mask, vals, 0.0)
        return out

    bounds = [(r, min(r + block, D)) for r in range(0, D, block)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: rows(*b), bounds))
    else:
        parts = [rows(*b) for b in bounds]
    H = np.vstack(parts) if parts else np.zeros((0, 0), dtype=complex)
    return 0.5 * (H + H.conj().T)


# ---------- spectrum ----------
@dataclass(frozen=True, eq=False)
class ManyBodySpectrum:
    energies: np.ndarray        # E_k ascending
    vectors: np.ndarray         # columns <l|E_k>
    basis: Optional[ProductBasis] = None
    rotor: Optional[RotorSpectrum] = None  # single-rotor factors of the basis
    meta: dict = field(default_factory=dict)
    min_gap: float = np.inf
    distinct: bool = True

    def __post_init__(self):
        self.energies.setflags(write=False)
        self.vectors.setflags(write=False)

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def cutoff(self) -> Optional[float]:
        return None if self.basis is None else self.basis.cutoff

    def polyads(self) -> np.ndarray:
        """Polyad of the dominant product component of each eigenstate."""
        if self.basis is None:
            raise ValueError("spectrum carries no product basis")
        return self.basis.polyads[np.argmax(np.abs(self.vectors), axis=0)]


def _fix_phase(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    lead = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.conj(lead) / np.abs(lead))


def diagonalize_full(H: np.ndarray, basis: Optional[ProductBasis] = None,
                     meta: Optional[dict] = None, rotor: Optional[RotorSpectrum] = None) -> ManyBodySpectrum:
    D = H.shape[0]
    if np.abs(H - H.conj().T).max(initial=0.0) > 1e-12:
        raise ValueError("Hamiltonian is not Hermitian")
    off = H - np.diag(np.diag(H))
    if not np.any(off):
        # 无耦合：本征态即坐标向量
        diag = np.diag(H).real
        order = np.argsort(diag, kind="stable")
        vals = diag[order]
        vecs = np.eye(D, dtype=complex)[:, order]
    else:
        try:
            vals, vecs = linalg.eigh(H)
        except (linalg.LinAlgError, ValueError) as e:
            raise EigenSolverError(D, str(e)) from e
        vecs = _fix_phase(np.asarray(vecs, dtype=complex))
        resid = np.linalg.norm(H @ vecs - vecs * vals, axis=0).max(initial=0.0)
        if resid > RESIDUAL_TOL:
            raise EigenSolverError(D, f"residual {resid:.2e} exceeds {RESIDUAL_TOL}")
        ortho = np.abs(vecs.conj().T @ vecs - np.eye(D)).max(initial=0.0)
        if ortho > ORTHO_TOL:
            raise EigenSolverError(D, f"orthonormality defect {ortho:.2e}")

    gaps = np.diff(vals)
    min_gap = float(gaps.min()) if gaps.size else np.inf
    distinct = bool(min_gap > DISTINCT_TOL)
    if not distinct:
        logger.warning("eigenvalues not distinct: minimum gap %.3e (rational independence fails)", min_gap)
    logger.info("diagonalized %dx%d Hamiltonian, E_0=%.6f, min gap %.3e", D, D, vals[0] if D else np.nan, min_gap)
    return ManyBodySpectrum(energies=np.asarray(vals, dtype=float), vectors=vecs, basis=basis,
                            rotor=rotor, meta=dict(meta or {}), min_gap=min_gap, distinct=distinct)


def min_gap_by_polyad(spec: ManyBodySpectrum) -> Dict[int, float]:
    pol = spec.polyads()
    out = {}
    for P in np.unique(pol):
        e = np.sort(spec.energies[pol == P])
        out[int(P)] = float(np.diff(e).min()) if e.size > 1 else np.inf
    return out


def truncation_audit(spec_small: ManyBodySpectrum, spec_large: ManyBodySpectrum) -> List[dict]:
    """Per-polyad max |dE/E| matching eigenvalues by order inside each polyad."""
    ps, pl = spec_small.polyads(), spec_large.polyads()
    report = []
    for P in np.unique(ps):
        es = np.sort(spec_small.energies[ps == P])
        el = np.sort(spec_large.energies[pl == P])
        m = min(len(es), len(el))
        if m == 0:
            continue
        shift = np.abs(el[:m] - es[:m]) / np.abs(es[:m])
        report.append({"polyad": int(P), "count": int(m), "max_rel_shift": float(shift.max())})
    return report


# ---------- active space ----------
@dataclass(frozen=True)
class ActiveSpace:
    E_max: float
    N: int

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.N)


def select_active_space(spec: ManyBodySpectrum, E_max: float) -> ActiveSpace:
    E = spec.energies
    if np.any(np.abs(E - E_max) <= DISTINCT_TOL):
        raise ActiveSpaceError(f"E_max={E_max} collides with an eigenvalue")
    N = int(np.searchsorted(E, E_max))
    if N == 0:
        raise ActiveSpaceError(f"E_max={E_max} lies below the ground energy {E[0]:.6f}")
    if N == len(E):
        raise ActiveSpaceError(f"E_max={E_max} lies above the truncated spectrum (max {E[-1]:.6f}); raise E_tr")
    return ActiveSpace(E_max=float(E_max), N=N)


def build_model(n: int, spec: RotorSpectrum, pots: ModelPotentials, E_tr: Optional[float] = None,
                polyad_cap: Optional[int] = None, workers: int = 1,
                meta: Optional[dict] = None) -> ManyBodySpectrum:
    basis = build_product_basis(n, spec, E_tr=E_tr, polyad_cap=polyad_cap)
    H = assemble_hamiltonian(basis, spec, pots, workers=workers)
    return diagonalize_full(H, basis=basis, meta=meta, rotor=spec)
