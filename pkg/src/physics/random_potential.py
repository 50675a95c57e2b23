# src/physics/random_potential.py — Gaussian random periodic profiles as truncated Fourier series
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..seeds import stream_rng


@dataclass(frozen=True, eq=False)
class RandomPotential:
    L: int
    sigma_V: float
    components: np.ndarray              # V~_l for l = -L..L at index l + L
    seed: object = None                 # provenance only (int, stream name, ...)
    kind: str = "one-body/0"
    samples: Optional[np.ndarray] = None  # raw draws V_k when generated here

    def __post_init__(self):
        if self.components.shape != (2 * self.L + 1,):
            raise ValueError(f"expected {2 * self.L + 1} components, got {self.components.shape}")
        self.components.setflags(write=False)

    @property
    def ls(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    @property
    def nodes(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(2 * self.L + 1) / (2 * self.L + 1)

    def window(self, l_max: int) -> np.ndarray:
        """Components for l = -l_max..l_max (zero outside |l| <= L)."""
        out = np.zeros(2 * l_max + 1, dtype=complex)
        k = min(l_max, self.L)
        out[l_max - k:l_max + k + 1] = self.components[self.L - k:self.L + k + 1]
        return out

    def reflected(self) -> "RandomPotential":
        """V(-theta): V~_l -> V~_{-l}."""
        return replace(self, components=self.components[::-1].copy(),
                       samples=None, kind=self.kind + "/reflected")


def generate_profile(L: int, sigma_V: float, seed, kind: str = "one-body/0") -> RandomPotential:
    """2L+1 Gaussian node values -> Fourier components with V~_0 = 0.

    `seed` may be an int, a SeedSequence or a ready Generator.
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if sigma_V < 0:
        raise ValueError(f"sigma_V must be >= 0, got {sigma_V}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    size = 2 * L + 1
    V = rng.normal(0.0, 1.0, size) * sigma_V
    X = np.fft.fft(V) / size  # X[l] = (1/(2L+1)) sum_k V_k exp(-i l theta_k)
    pos = X[1:L + 1]
    # conjugate symmetry imposed exactly, V~_0 dropped
    comps = np.concatenate([np.conj(pos[::-1]), [0.0], pos]).astype(complex)
    prov = None if isinstance(seed, np.random.Generator) else seed
    return RandomPotential(L=L, sigma_V=float(sigma_V), components=comps, seed=prov, kind=kind, samples=V)


def eval_potential(pot: RandomPotential, theta) -> np.ndarray:
    theta = np.mod(np.asarray(theta, dtype=float), 2.0 * np.pi)
    ls = np.arange(1, pot.L + 1)
    phase = np.exp(1j * np.multiply.outer(theta, ls))
    # V = 2 Re sum_{l>0} V~_l e^{i l theta}
    out = 2.0 * np.real(phase @ pot.components[pot.L + 1:])
    return out if np.ndim(out) else float(out)


# ---------- model families ----------
@dataclass(frozen=True, eq=False)
class ModelPotentials:
    one_body: Tuple[RandomPotential, ...]
    pairs: Dict[Tuple[int, int], RandomPotential]  # keys i < j, term V_ij(q_i - q_j)

    @property
    def n(self) -> int:
        return len(self.one_body)

    def check(self, n: int) -> None:
        from ..errors import PotentialMismatchError

        if len(self.one_body) != n:
            raise PotentialMismatchError(f"{len(self.one_body)} one-body potentials for {n} rotors")
        want = {(i, j) for i in range(n) for j in range(i + 1, n)}
        if set(self.pairs) != want:
            raise PotentialMismatchError(f"pair potentials {sorted(self.pairs)} do not cover {n} rotors")

    def permuted(self, perm: Sequence[int]) -> "ModelPotentials":
        """Relabel rotors: new rotor i is old rotor perm[i]."""
        inv = {old: new for new, old in enumerate(perm)}
        one = tuple(self.one_body[perm[i]] for i in range(self.n))
        pairs = {}
        for (a, b), pot in self.pairs.items():
            i, j = inv[a], inv[b]
            pairs[(i, j) if i < j else (j, i)] = pot if i < j else pot.reflected()
        return ModelPotentials(one_body=one, pairs=pairs)

    def all(self) -> List[RandomPotential]:
        return list(self.one_body) + [self.pairs[k] for k in sorted(self.pairs)]


def one_body_name(i: int) -> str:
    return f"one-body/{i}"


def pair_name(i: int, j: int) -> str:
    return f"pair/{i},{j}"


def build_model_potentials(n: int, L: int, sigma_V: float, master_seed: int,
                           overrides: Optional[Dict[str, int]] = None) -> ModelPotentials:
    """One independent realization per one-body and pair term, each on its own named stream.

    `overrides` maps a stream name to a replacement master seed for that stream only.
    """
    overrides = overrides or {}
    one = []
    for i in range(n):
        name = one_body_name(i)
        seed = overrides.get(name, master_seed)
        one.append(replace(generate_profile(L, sigma_V, stream_rng(seed, name), kind=name), seed=seed))
    pairs = {}
    for i in range(n):
        for j in range(i + 1, n):
            name = pair_name(i, j)
            seed = overrides.get(name, master_seed)
            pairs[(i, j)] = replace(generate_profile(L, sigma_V, stream_rng(seed, name), kind=name), seed=seed)
    return ModelPotentials(one_body=tuple(one), pairs=pairs)


def potential_rows(pot: RandomPotential) -> np.ndarray:
    """(l, Re V~_l, Im V~_l)."""
    return np.column_stack([pot.ls, pot.components.real, pot.components.imag])


def potential_from_rows(rows: np.ndarray, sigma_V: float, kind: str = "one-body/0", seed=None) -> RandomPotential:
    rows = np.atleast_2d(rows)
    ls = rows[:, 0].astype(int)
    L = int(ls.max())
    comps = np.zeros(2 * L + 1, dtype=complex)
    comps[ls + L] = rows[:, 1] + 1j * rows[:, 2]
    return RandomPotential(L=L, sigma_V=float(sigma_V), components=comps, seed=seed, kind=kind)


def model_rows(pots: ModelPotentials) -> np.ndarray:
    """(family, l, Re V~_l, Im V~_l); family = index into `ModelPotentials.all()`."""
    return np.vstack([np.column_stack([np.full(2 * p.L + 1, f), potential_rows(p)])
                      for f, p in enumerate(pots.all())])


def model_from_rows(rows: np.ndarray, n: int, sigma_V: float) -> ModelPotentials:
    """Inverse of `model_rows` for an n-rotor model."""
    from ..errors import PotentialMismatchError

    rows = np.atleast_2d(rows)
    fam = rows[:, 0].astype(int)
    names = [one_body_name(i) for i in range(n)] + [pair_name(i, j) for i in range(n) for j in range(i + 1, n)]
    if sorted(set(fam.tolist())) != list(range(len(names))):
        raise PotentialMismatchError(f"potential table holds families {sorted(set(fam.tolist()))}, "
                                     f"an {n}-rotor model needs {len(names)}")
    built = [potential_from_rows(rows[fam == f, 1:], sigma_V, kind=name, seed="file")
             for f, name in enumerate(names)]
    pairs = {}
    f = n
    for i in range(n):
        for j in range(i + 1, n):
            pairs[(i, j)] = built[f]
            f += 1
    return ModelPotentials(one_body=tuple(built[:n]), pairs=pairs)
