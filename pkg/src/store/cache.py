# src/store/cache.py — .npz archive of a many-body spectrum, keyed by its content hash
from __future__ import annotations

import json
import logging
import os
from typing import Optional, Tuple

import numpy as np

from ..errors import ArtifactMismatchError, MissingArtifactError
from ..physics.many_body import ManyBodySpectrum, ProductBasis
from ..physics.random_potential import ModelPotentials, RandomPotential
from ..physics.single_rotor import FourierBasis, RotorSpectrum

logger = logging.getLogger(__name__)


def cache_path(cache_dir: str, key: str) -> str:
    return os.path.join(cache_dir, f"spectrum_{key}.npz")


def save_spectrum(path: str, key: str, spectrum: ManyBodySpectrum, pots: ModelPotentials) -> str:
    basis, rotor = spectrum.basis, spectrum.rotor
    if basis is None or rotor is None:
        raise ValueError("only spectra built on a product basis can be cached")
    meta = dict(spectrum.meta, key=key, n=basis.n, levels=basis.levels, cutoff=basis.cutoff,
                polyad_cap=basis.polyad_cap, u=rotor.u, j_max=rotor.basis.j_max, kept=rotor.kept,
                min_gap=spectrum.min_gap, distinct=spectrum.distinct,
                potentials=[{"kind": p.kind, "L": p.L, "sigma_V": p.sigma_V, "seed": p.seed} for p in pots.all()])
    arrays = {
        "energies": spectrum.energies,
        "vectors": spectrum.vectors,
        "labels": basis.labels,
        "zero_order": basis.energies,
        "rotor_energies": rotor.energies,
        "rotor_coefficients": rotor.coefficients,
        "rotor_parity": rotor.parity,
        "potentials": np.stack([p.components for p in pots.all()]),
        "meta": np.array(json.dumps(meta, sort_keys=True, default=float)),
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)
    logger.info("cached spectrum %s (%d states) -> %s", key, spectrum.dim, path)
    return path


def load_spectrum(path: str, key: Optional[str] = None) -> Tuple[ManyBodySpectrum, ModelPotentials]:
    """Raises ArtifactMismatchError when the stored key differs from `key`."""
    if not os.path.isfile(path):
        raise MissingArtifactError(f"no cached spectrum at {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if key is not None and meta.get("key") != key:
            raise ArtifactMismatchError(f"cache {path} holds key {meta.get('key')}, expected {key}")
        rotor = RotorSpectrum(u=float(meta["u"]), basis=FourierBasis(int(meta["j_max"])),
                              energies=z["rotor_energies"].copy(), coefficients=z["rotor_coefficients"].copy(),
                              parity=z["rotor_parity"].copy(), kept=int(meta["kept"]))
        labels = z["labels"].copy()
        basis = ProductBasis(n=int(meta["n"]), levels=int(meta["levels"]), labels=labels,
                             energies=z["zero_order"].copy(), polyads=labels.sum(axis=1),
                             cutoff=meta.get("cutoff"), polyad_cap=meta.get("polyad_cap"))
        comps = z["potentials"].copy()
        pots_meta = meta["potentials"]
        spectrum = ManyBodySpectrum(energies=z["energies"].copy(), vectors=z["vectors"].copy(), basis=basis,
                                    rotor=rotor, meta={k: meta[k] for k in ("key",) if k in meta},
                                    min_gap=float(meta["min_gap"]), distinct=bool(meta["distinct"]))
    potentials = [RandomPotential(L=int(p["L"]), sigma_V=float(p["sigma_V"]), components=comps[i].copy(),
                                  seed=p.get("seed"), kind=p["kind"]) for i, p in enumerate(pots_meta)]
    n = basis.n
    one = tuple(potentials[:n])
    keys = [(i, j) for i in range(n) for j in range(i + 1, n)]
    pots = ModelPotentials(one_body=one, pairs=dict(zip(keys, potentials[n:])))
    logger.debug("loaded cached spectrum %s from %s", meta.get("key"), path)
    return spectrum, pots
