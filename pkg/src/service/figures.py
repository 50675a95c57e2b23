# src/service/figures.py — canned configurations and data bundles for each figure / table
from __future__ import annotations

import logging
import os
from dataclasses import replace
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from ..dynamics.bohm import integrate
from ..dynamics.reduced import (
    canonical_column, default_grid, eigenstate_rdms, ensemble_average_rdm, equilibrium_rdm, fit_canonical_beta,
    marginal, rdm_at,
)
from ..errors import ConfigError
from ..physics.random_potential import build_model_potentials, eval_potential, one_body_name, potential_rows
from ..physics.single_rotor import potential_profile, probability_profiles, solve_rotor
from ..seeds import stream_seed
from .commands import (
    REFERENCE_LEVELS, Workspace, cmd_analyze, cmd_run, cmd_spectrum, obtain_model, passed, prepare_state,
)
from .config import ExperimentConfig, config_hash, spectrum_key
from .io import write_csv, write_json

logger = logging.getLogger(__name__)

FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "table1", "table2")


def canned_config(figure: str, **overrides) -> ExperimentConfig:
    base = ExperimentConfig()
    if figure == "fig5":
        base = replace(base, tau_end=5.0)
    elif figure == "fig7":
        # isolated rotor, N = 2, P pinned at (1/2, 1/2); beat period 1/(eps_1 - eps_0) ~ 0.059
        base = replace(base, n=1, sigma_V=0.0, E_tr=50.0, audit_E_tr=None, E_max=30.0,
                       populations="0.5,0.5", step=1e-3, tau_end=200.0)
    elif figure not in FIGURES:
        raise ConfigError(f"unknown figure id {figure!r}; choose from {', '.join(FIGURES)}")
    return base.with_overrides(**overrides)


# ---------- per-artifact builders ----------
def _table1(config: ExperimentConfig, ws: Workspace, out: str, h: str) -> Dict[str, Any]:
    rotor = solve_rotor(config.u, config.j_max, config.levels)
    write_csv(os.path.join(out, "table1.csv"), rotor.table_rows(), ["m", "eps", "harmonic"], h)
    checks = {}
    if config.u == 300.0 and config.j_max == 20 and rotor.kept >= len(REFERENCE_LEVELS):
        dev = float(np.abs(rotor.energies[:len(REFERENCE_LEVELS)] - np.array(REFERENCE_LEVELS)).max())
        checks["reference_levels"] = dev <= 1e-3
    return {"files": ["table1.csv"], "checks": checks}


def _table2(config: ExperimentConfig, ws: Workspace, out: str, h: str) -> Dict[str, Any]:
    spectrum, _, _ = obtain_model(config, ws)
    state = prepare_state(config, spectrum)
    M = config.rdm_levels
    S = eigenstate_rdms(spectrum, state.N, config.subsystem, M)
    sigma = equilibrium_rdm(state, config.subsystem, M, S=S)
    ensemble = ensemble_average_rdm(spectrum, state.active, config.subsystem, M, S=S)
    occupied = int(spectrum.basis.labels[:, config.subsystem].max()) + 1
    beta_fit = fit_canonical_beta(sigma, spectrum.rotor)
    canon = canonical_column(spectrum.rotor, config.beta, occupied, M)
    canon = np.full(M, np.nan) if canon is None else canon
    fit = canonical_column(spectrum.rotor, beta_fit, occupied, M)
    if fit is None:
        logger.warning("sigma_11/sigma_00 gives beta=%s; no canonical fit", beta_fit)
        fit, beta_fit = np.full(M, np.nan), None
    label = "undefined" if beta_fit is None else f"{beta_fit:.6g}"
    write_csv(os.path.join(out, "table2.csv"),
              np.column_stack([np.arange(M), sigma.diagonal, ensemble.diagonal, canon, fit]),
              ["m", "sigma_eq", "sigma_ensemble", "canonical_beta", "canonical_fit"], h,
              note=f"beta={config.beta:g}, beta_fit={label}, state_seed={config.rpse_seed}")
    return {"files": ["table2.csv"], "beta_fit": beta_fit, "checks": {"rdm_valid": not sigma.violations()}}


def _fig1(config: ExperimentConfig, ws: Workspace, out: str, h: str) -> Dict[str, Any]:
    pots = build_model_potentials(1, config.L, config.sigma_V, config.master_seed)
    pot = pots.one_body[0]
    theta = np.linspace(0.0, 2.0 * np.pi, 2001)
    write_csv(os.path.join(out, "potential_profile.csv"), np.column_stack([theta, eval_potential(pot, theta)]),
              ["theta", "V"], h)
    write_csv(os.path.join(out, "potential_components.csv"), potential_rows(pot), ["l", "re", "im"], h)
    write_csv(os.path.join(out, "potential_nodes.csv"), np.column_stack([pot.nodes, pot.samples]),
              ["theta_k", "V_k"], h)
    name = one_body_name(0)
    return {
        "files": ["potential_profile.csv", "potential_components.csv", "potential_nodes.csv"],
        "stream": name,
        "stream_entropy": [int(x) for x in stream_seed(config.master_seed, name).entropy],
        "checks": {},
    }


def _fig2(config: ExperimentConfig, ws: Workspace, out: str, h: str) -> Dict[str, Any]:
    rotor = solve_rotor(config.u, config.j_max, config.levels)
    q = np.linspace(0.0, 2.0 * np.pi, 1001)
    prof = probability_profiles(rotor, q)
    cols = ["q", "V"] + [f"m{m}" for m in range(prof.shape[1])]
    write_csv(os.path.join(out, "eigenfunctions.csv"), np.column_stack([q, potential_profile(config.u, q), prof]),
              cols, h, note="|phi_m(q)|^2 offset by eps_m")
    return {"files": ["eigenfunctions.csv"], "checks": {}}


def _fig3(config: ExperimentConfig, ws: Workspace, out: str, h: str) -> Dict[str, Any]:
    files: List[str] = []
    cutoffs = [config.E_tr] + ([config.audit_E_tr] if config.audit_E_tr else [])
    for E_tr in cutoffs:
        spectrum, _, _ = obtain_model(replace(config, E_tr=E_tr, polyad_cap=None), ws)
        name = f"levels_Etr{E_tr:g}.csv"
        write_csv(os.path.join(out, name),
                  np.column_stack([np.arange(spectrum.dim), spectrum.energies, spectrum.polyads()]),
                  ["k", "E", "polyad"], h)
        files.append(name)
    summary = cmd_spectrum(replace(config, output_dir=out), ws)
    return {"files": files + ["truncation_audit.csv", "polyad_census.csv"], "checks": summary["checks"]}


def _fig4(config: ExperimentConfig, ws: Workspace, out: str, h: str) -> Dict[str, Any]:
    spectrum, _, _ = obtain_model(config, ws)
    state = prepare_state(config, spectrum)
    M, rotor = config.rdm_levels, spectrum.rotor
    grid = default_grid(2000)
    p_eq = marginal(equilibrium_rdm(state, config.subsystem, M), rotor, grid)
    snaps = [marginal(rdm_at(state, t, config.subsystem, M), rotor, grid) for t in config.snapshots]
    write_csv(os.path.join(out, "marginals.csv"), np.column_stack([grid, p_eq.density] + [s.density for s in snaps]),
              ["q", "p_eq"] + [f"p_t{t:g}" for t in config.snapshots], h)
    norms = [p_eq.normalization()] + [s.normalization() for s in snaps]
    return {"files": ["marginals.csv"], "checks": {"marginals_normalized": max(abs(x - 1) for x in norms) <= 1e-8}}


def _fig5(config: ExperimentConfig, ws: Workspace, out: str, h: str) -> Dict[str, Any]:
    spectrum, _, _ = obtain_model(config, ws)
    state = prepare_state(config, spectrum)
    traj = integrate(state, None, config.tau_end, config.step, config.stride)
    cols = ["tau"] + [f"Q{i + 1}" for i in range(traj.n)]
    write_csv(os.path.join(out, "trajectory.csv"), traj.rows(), cols, h)
    write_json(os.path.join(out, "diagnostics.json"), traj.diagnostics, h)
    return {"files": ["trajectory.csv", "diagnostics.json"], "checks": {}}


def _pipeline(config: ExperimentConfig, ws: Workspace, out: str, h: str) -> Dict[str, Any]:
    cfg = replace(config, output_dir=out)
    parts = [cmd_spectrum(cfg, ws), cmd_run(cfg, ws), cmd_analyze(cfg, ws)]
    checks = {f"{p['command']}_{k}": v for p in parts for k, v in p["checks"].items()}
    return {"files": ["histogram.csv", "correlation.csv", "analysis.json", "trajectory.csv", "state.json"],
            "tv_distance": parts[2]["tv_distance"], "tv_distance_coarse": parts[2]["tv_distance_coarse"],
            "beta_fit": parts[2]["beta_fit"], "acceptance": parts[2]["acceptance"], "checks": checks}


BUILDERS: Dict[str, Callable[..., Dict[str, Any]]] = {
    "table1": _table1, "table2": _table2,
    "fig1": _fig1, "fig2": _fig2, "fig3": _fig3, "fig4": _fig4, "fig5": _fig5,
    "fig6": _pipeline, "fig7": _pipeline,
}


def cmd_reproduce(figure: str, ws: Workspace, overrides: Optional[Dict[str, Any]] = None,
                  out: Optional[str] = None) -> Dict[str, Any]:
    """Plot-ready CSVs for one figure or table plus a provenance manifest."""
    if figure not in BUILDERS:
        raise ConfigError(f"unknown figure id {figure!r}; choose from {', '.join(FIGURES)}")
    config = canned_config(figure, **(overrides or {}))
    out = out or os.path.join(ws.settings.output_dir, "reproduce", figure)
    os.makedirs(out, exist_ok=True)
    h = config_hash(config)
    logger.info("reproducing %s into %s (config %s)", figure, out, h)
    result = BUILDERS[figure](config, ws, out, h)
    manifest = {
        "figure": figure,
        "config": config.to_dict(),
        "spectrum_key": spectrum_key(config),
        "files": result.get("files", []),
        "details": {k: v for k, v in result.items() if k not in ("files", "checks")},
        "checks": result.get("checks", {}),
    }
    write_json(os.path.join(out, "manifest.json"), manifest, h)
    return {"command": "reproduce", "figure": figure, "output_dir": out, "checks": manifest["checks"],
            "passed": passed(manifest)}
