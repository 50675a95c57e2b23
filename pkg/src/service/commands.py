# src/service/commands.py — spectrum / run / analyze / sweep pipelines behind the CLI
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..analysis.trajectory import (
    autocorrelation, burn_in_samples, chapman_kolmogorov_check, conditional_distribution,
    histogram, total_variation, wrap_detector,
)
from ..dynamics.bohm import BohmTrajectory, integrate
from ..dynamics.pure_state import (
    PureState, make_state, population_diagnostics, product_amplitudes_at, rpse_ensemble_values, state_from_dict,
)
from ..dynamics.reduced import (
    canonical_column, canonical_rdm, eigenstate_rdms, ensemble_average_rdm, equilibrium_rdm, fit_canonical_beta,
    fluctuation_bound_check, level_projector, marginal, rdm_at, window_observable,
)
from ..errors import ArtifactMismatchError, ConfigError, EmptyTrajectoryError, MissingArtifactError
from ..physics.many_body import (
    ManyBodySpectrum, build_model, min_gap_by_polyad, polyad_census, select_active_space, truncation_audit,
)
from ..physics.random_potential import ModelPotentials, build_model_potentials, model_from_rows, model_rows
from ..physics.single_rotor import solve_rotor
from ..seeds import stream_rng
from ..store.cache import cache_path, load_spectrum, save_spectrum
from ..store.db import get_conn, init_db
from .config import ExperimentConfig, Settings, config_hash, spectrum_key
from .io import read_csv, read_json, write_csv, write_json
from .runs import find_spectrum, record_run, register_spectrum, update_run_status

logger = logging.getLogger(__name__)

# u = 300, j_max = 20, lowest ten levels
REFERENCE_LEVELS = (8.597, 25.664, 42.472, 59.015, 75.286, 91.278, 106.982, 122.390, 137.491, 152.275)
NORM_TOL = 1e-12
MARGINAL_TOL = 1e-8
FLUCTUATION_TIMES = 400
# time-averaged sigma_mm, rotor 0 of the reference model
REFERENCE_RDM_DIAGONAL = (0.536, 0.282, 0.127, 0.0431, 0.0122, 5.15e-4, 3.61e-7)
TV_BINS = 200
OFFDIAG_LIMIT = 1e-3
TV_LIMIT = 0.1
DIAGONAL_LIMIT = 0.1
DECAY_LAG = 10.0
DECAY_LIMIT = 0.2
RELAXATION_LIMIT = 0.1


@dataclass
class Workspace:
    settings: Settings
    conn: Any

    @classmethod
    def open(cls, settings: Optional[Settings] = None) -> "Workspace":
        settings = settings or Settings.from_env()
        conn = get_conn(settings.db_path)
        init_db(conn)
        return cls(settings=settings, conn=conn)

    def output_dir(self, config: ExperimentConfig) -> str:
        out = config.output_dir or os.path.join(self.settings.output_dir, config_hash(config))
        os.makedirs(out, exist_ok=True)
        return out


def passed(summary: Dict[str, Any]) -> bool:
    return all(bool(v) for v in summary.get("checks", {}).values())


def _finish(ws: Workspace, run_id: int, t0: float, summary: Dict[str, Any]) -> Dict[str, Any]:
    status = "ok" if passed(summary) else "checks_failed"
    update_run_status(ws.conn, run_id, status, time.perf_counter() - t0, summary)
    return summary


def _tracked(ws: Workspace, command: str, config: ExperimentConfig, out: str, body):
    """Registry bookkeeping around one command body."""
    t0 = time.perf_counter()
    run_id = record_run(ws.conn, command, config_hash(config), out)
    try:
        summary = body()
    except Exception as e:
        update_run_status(ws.conn, run_id, "error", time.perf_counter() - t0, {"error": str(e)})
        raise
    logger.info("%s finished in %.2f s -> %s", command, time.perf_counter() - t0, out)
    return _finish(ws, run_id, t0, summary)


# ---------- model ----------
def model_potentials(config: ExperimentConfig) -> ModelPotentials:
    """Fresh draws on the master seed, or a realization replayed from `potentials_file`."""
    if not config.potentials_file:
        return build_model_potentials(config.n, config.L, config.sigma_V, config.master_seed)
    rows, _ = read_csv(config.potentials_file)
    pots = model_from_rows(rows, config.n, config.sigma_V)
    pots.check(config.n)
    logger.info("replaying %d potential families from %s", len(pots.all()), config.potentials_file)
    return pots


def obtain_model(config: ExperimentConfig, ws: Workspace) -> Tuple[ManyBodySpectrum, ModelPotentials, bool]:
    """Cached spectrum for the config's model, built and registered on a miss."""
    key = spectrum_key(config)
    path = cache_path(ws.settings.cache_dir, key)
    if os.path.isfile(path):
        try:
            spectrum, pots = load_spectrum(path, key)
            logger.info("spectrum cache hit %s (%d states)", key, spectrum.dim)
            return spectrum, pots, True
        except (ArtifactMismatchError, KeyError, ValueError, OSError) as e:
            logger.warning("spectrum cache %s unusable (%s); rebuilding", path, e)
    else:
        logger.info("spectrum cache miss %s", key)

    t0 = time.perf_counter()
    rotor = solve_rotor(config.u, config.j_max, config.levels)
    pots = model_potentials(config)
    spectrum = build_model(config.n, rotor, pots, E_tr=config.E_tr, polyad_cap=config.polyad_cap,
                           workers=config.workers, meta={"key": key})
    elapsed = time.perf_counter() - t0
    logger.info("built %d-state spectrum in %.2f s", spectrum.dim, elapsed)
    save_spectrum(path, key, spectrum, pots)
    register_spectrum(ws.conn, key, path, {
        "n": config.n, "u": config.u, "j_max": config.j_max, "levels": config.levels, "E_tr": config.E_tr,
        "dimension": spectrum.dim, "min_gap": spectrum.min_gap if np.isfinite(spectrum.min_gap) else None,
    }, elapsed)
    return spectrum, pots, False


def cached_model(config: ExperimentConfig, ws: Workspace) -> ManyBodySpectrum:
    key = spectrum_key(config)
    path = cache_path(ws.settings.cache_dir, key)
    if not os.path.isfile(path):
        row = find_spectrum(ws.conn, key)
        path = row["path"] if row else path
    if not os.path.isfile(path):
        raise MissingArtifactError(f"no cached spectrum for key {key}; run the `spectrum` command first")
    spectrum, _ = load_spectrum(path, key)
    return spectrum


def _occupied_levels(spectrum: ManyBodySpectrum, rotor: int) -> int:
    return int(spectrum.basis.labels[:, rotor].max()) + 1


# ---------- spectrum ----------
def cmd_spectrum(config: ExperimentConfig, ws: Workspace) -> Dict[str, Any]:
    out = ws.output_dir(config)
    h = config_hash(config)

    def body():
        spectrum, pots, hit = obtain_model(config, ws)
        rotor, basis = spectrum.rotor, spectrum.basis
        write_csv(os.path.join(out, "rotor_levels.csv"), rotor.table_rows(), ["m", "eps", "harmonic"], h)
        write_csv(os.path.join(out, "rotor_coefficients.csv"), rotor.coefficient_rows(),
                  ["m", "j", "re", "im"], h)
        write_csv(os.path.join(out, "potentials.csv"), model_rows(pots), ["family", "l", "re", "im"], h,
                  note="family order: one-body 0..n-1, then pairs (i<j) row-major")
        census = polyad_census(basis)
        write_csv(os.path.join(out, "polyad_census.csv"), census, ["P", "count", "cumulative"], h, fmt="%d")
        write_csv(os.path.join(out, "eigenvalues.csv"),
                  np.column_stack([np.arange(spectrum.dim), spectrum.energies, spectrum.polyads()]),
                  ["k", "E", "polyad"], h)

        M = _occupied_levels(spectrum, config.subsystem)
        canon = np.zeros(config.rdm_levels)
        c = canonical_rdm(rotor, config.beta, M).diagonal
        canon[:min(M, config.rdm_levels)] = c[:config.rdm_levels]
        write_csv(os.path.join(out, "canonical_rdm.csv"),
                  np.column_stack([np.arange(config.rdm_levels), canon]), ["m", "sigma_canonical"], h,
                  note=f"beta={config.beta:g}, levels={M}")

        audit: List[Dict[str, Any]] = []
        if config.audit_E_tr and (config.E_tr is None or config.audit_E_tr > config.E_tr):
            larger, _, _ = obtain_model(replace(config, E_tr=config.audit_E_tr, polyad_cap=None), ws)
            audit = truncation_audit(spectrum, larger)
            write_csv(os.path.join(out, "truncation_audit.csv"),
                      np.array([[a["polyad"], a["count"], a["max_rel_shift"]] for a in audit]).reshape(-1, 3),
                      ["polyad", "count", "max_rel_shift"], h, note=f"E_tr={config.E_tr} vs {config.audit_E_tr}")

        checks = {}
        if config.u == 300.0 and config.j_max == 20 and rotor.kept >= len(REFERENCE_LEVELS):
            dev = np.abs(rotor.energies[:len(REFERENCE_LEVELS)] - np.array(REFERENCE_LEVELS)).max()
            checks["reference_levels"] = bool(dev <= 1e-3)
        summary = {
            "command": "spectrum",
            "spectrum_key": spectrum_key(config),
            "cache_hit": hit,
            "dimension": spectrum.dim,
            "ground_energy": float(spectrum.energies[0]),
            "min_gap": float(spectrum.min_gap),
            "distinct": spectrum.distinct,
            "census": census.tolist(),
            "min_gap_by_polyad": {str(k): v for k, v in min_gap_by_polyad(spectrum).items()},
            "truncation_audit": audit,
            "checks": checks,
        }
        write_json(os.path.join(out, "spectrum_summary.json"), summary, h)
        return summary

    return _tracked(ws, "spectrum", config, out, body)


# ---------- run ----------
def prepare_state(config: ExperimentConfig, spectrum: ManyBodySpectrum) -> PureState:
    active = select_active_space(spectrum, config.E_max)
    state = replace(make_state(spectrum, active, stream_rng(config.rpse_seed, "rpse")), seed=config.rpse_seed)
    pinned = config.pinned_populations
    if pinned is None:
        return state
    if len(pinned) != active.N:
        raise ConfigError(f"{len(pinned)} pinned populations for an active space of N={active.N}")
    P = np.asarray(pinned, dtype=float)
    return replace(state, populations=P / P.sum())


def norm_defect(state: PureState, times: Sequence[float]) -> float:
    return float(max(abs(np.sum(np.abs(product_amplitudes_at(state, t)) ** 2) - 1.0) for t in times))


def cmd_run(config: ExperimentConfig, ws: Workspace) -> Dict[str, Any]:
    out = ws.output_dir(config)
    h = config_hash(config)

    def body():
        spectrum = cached_model(config, ws)
        state = prepare_state(config, spectrum)
        traj = integrate(state, None, config.tau_end, config.step, config.stride)
        defect = norm_defect(state, np.linspace(0.0, config.tau_end, 11))
        diag = dict(traj.diagnostics, norm_defect=defect)

        # outputs only after the trajectory completed
        cols = ["tau"] + [f"Q{i + 1}" for i in range(traj.n)]
        write_csv(os.path.join(out, "trajectory.csv"), traj.rows(), cols, h)
        payload = dict(state.to_dict(), diagnostics=population_diagnostics(state),
                       ensemble=rpse_ensemble_values(spectrum, state.active))
        write_json(os.path.join(out, "state.json"), payload, h)
        write_json(os.path.join(out, "diagnostics.json"), diag, h)
        return {
            "command": "run",
            "N": state.N,
            "samples": len(traj),
            "min_density": diag["min_density"],
            "substep_events": diag["substep_events"],
            "checks": {"norm_conserved": bool(defect <= NORM_TOL)},
        }

    return _tracked(ws, "run", config, out, body)


# ---------- analyze ----------
def load_trajectory(path: str, expected_hash: Optional[str], step: float) -> BohmTrajectory:
    rows, _ = read_csv(path, expected_hash)
    if rows.shape[0] == 0:
        raise EmptyTrajectoryError(f"{path} holds no samples")
    dt = float(rows[1, 0] - rows[0, 0]) if rows.shape[0] > 1 else step
    return BohmTrajectory(step=dt, times=rows[:, 0].copy(), positions=rows[:, 1:].copy())


def cmd_analyze(config: ExperimentConfig, ws: Workspace, trajectory_path: Optional[str] = None,
                state_path: Optional[str] = None) -> Dict[str, Any]:
    out = ws.output_dir(config)
    h = config_hash(config)
    trajectory_path = trajectory_path or os.path.join(out, "trajectory.csv")
    state_path = state_path or os.path.join(out, "state.json")

    def body():
        traj = load_trajectory(trajectory_path, h, config.step * config.stride)
        if len(traj) < 2:
            raise EmptyTrajectoryError("analysis needs at least two trajectory samples")
        data = read_json(state_path, h)
        spectrum = cached_model(config, ws)
        active = select_active_space(spectrum, config.E_max)
        state = state_from_dict(spectrum, active, data)
        return analyze(config, state, traj, out, h)

    return _tracked(ws, "analyze", config, out, body)


def is_reference_model(config: ExperimentConfig) -> bool:
    return (config.n, config.u, config.L, config.sigma_V, config.E_max, config.subsystem) == (6, 300.0, 100, 1.0, 139.0, 0)


def acceptance_block(config: ExperimentConfig, sigma, rel: np.ndarray, tv_coarse: float,
                     curve, relaxation: Optional[float]) -> Dict[str, Optional[bool]]:
    """Thermalization verdicts of one run; None where the record cannot decide.

    Unlike `checks`, these never set the exit code: a non-thermalizing model
    (one rotor) is expected to fail them.
    """
    late = curve.values[curve.lags >= DECAY_LAG - 1e-12]
    decay = None
    if late.size and curve.G0 > 0:
        decay = bool(np.abs(late).max() / curve.G0 < DECAY_LIMIT)
    relaxed = None
    if relaxation is not None and np.isfinite(relaxation):
        relaxed = bool(relaxation <= RELAXATION_LIMIT)
    block: Dict[str, Optional[bool]] = {
        "rdm_offdiag": bool(rel.max(initial=0.0) <= OFFDIAG_LIMIT),
        "histogram_tv": bool(tv_coarse <= TV_LIMIT),
        "correlation_decay": decay,
        "conditional_relaxation": relaxed,
        "table2_diagonals": None,
    }
    if is_reference_model(config):
        ref = np.array(REFERENCE_RDM_DIAGONAL)
        k = min(ref.size, sigma.M)
        block["table2_diagonals"] = bool(np.abs(sigma.diagonal[:k] - ref[:k]).max() <= DIAGONAL_LIMIT)
    return block


def analyze(config: ExperimentConfig, state: PureState, traj: BohmTrajectory, out: str, h: str) -> Dict[str, Any]:
    """Every statistic of the run; all files are written at the end."""
    S_idx, rotor = config.subsystem, state.spectrum.rotor
    M = config.rdm_levels

    # correlation and burn-in
    k_cap = (len(traj) - 1) // 2
    max_lag = min(config.max_lag, k_cap * traj.step)
    if max_lag < config.max_lag:
        logger.warning("max lag clipped to %g by the record length", max_lag)
    curve = autocorrelation(traj, S_idx, max_lag, fraction=config.correlation_fraction)
    tau_c = curve.correlation_time
    burn = min(burn_in_samples(tau_c, traj.step), len(traj) // 2)
    hist = histogram(traj, S_idx, config.bins, skip=burn)

    # quantum side
    S = eigenstate_rdms(state.spectrum, state.N, S_idx, M)
    sigma = equilibrium_rdm(state, S_idx, M, S=S)
    p_eq = marginal(sigma, rotor, hist.centers)
    snaps = [marginal(rdm_at(state, t, S_idx, M), rotor, hist.centers) for t in config.snapshots]
    norms = [p_eq.normalization()] + [s.normalization() for s in snaps]
    tv = total_variation(hist.density, p_eq.density)

    d = sigma.diagonal
    off = np.abs(sigma.matrix - np.diag(np.diag(sigma.matrix)))
    scale = np.sqrt(np.outer(d, d))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, off / scale, 0.0)
    ensemble = ensemble_average_rdm(state.spectrum, state.active, S_idx, M, S=S)
    beta_fit = fit_canonical_beta(sigma, rotor)
    occupied = _occupied_levels(state.spectrum, S_idx)
    canon_cfg = canonical_column(rotor, config.beta, occupied, M)
    canon_cfg = np.full(M, np.nan) if canon_cfg is None else canon_cfg
    canon_fit = canonical_column(rotor, beta_fit, occupied, M)
    if canon_fit is None:
        logger.warning("sigma_11/sigma_00 gives beta=%s; no canonical fit", beta_fit)
        canon_fit = np.full(M, np.nan)
        beta_fit = None

    coarse = histogram(traj, S_idx, min(TV_BINS, config.bins), skip=burn)
    tv_coarse = total_variation(coarse.density, marginal(sigma, rotor, coarse.centers).density)

    # Markov tests
    ck_lag = tau_c if np.isfinite(tau_c) and tau_c > 0 else traj.step
    ck = chapman_kolmogorov_check(traj, S_idx, ck_lag, bins=config.source_bins, skip=burn)
    relax_lag = 5.0 * ck_lag
    relaxation = None
    if relax_lag < (len(traj) - burn) * traj.step:
        fam = conditional_distribution(traj, S_idx, relax_lag, config.source_bins, config.target_bins, skip=burn)
        relaxation = fam.relaxation()

    # fluctuation bounds
    pick = np.unique(np.linspace(0, len(traj) - 1, min(FLUCTUATION_TIMES, len(traj))).astype(int))
    times = traj.times[pick]
    q_lo, q_hi = np.pi - 0.5, np.pi + 0.5
    fluct = {
        "level0": fluctuation_bound_check(state, level_projector(M, 0), times, S_idx, S=S),
        "window": fluctuation_bound_check(state, window_observable(rotor, M, q_lo, q_hi), times, S_idx, S=S),
    }

    wraps = wrap_detector(traj, S_idx)
    if not wraps["linear_ok"]:
        logger.warning("rotor %d crosses the 0/2pi seam %d times; linear G(tau) is unreliable", S_idx, wraps["wraps"])

    write_csv(os.path.join(out, "histogram.csv"), np.column_stack([hist.centers, hist.density, p_eq.density]),
              ["q", "w_eq", "p_eq"], h, note=f"burn_in_samples={burn}")
    write_csv(os.path.join(out, "correlation.csv"), curve.rows(), ["tau", "G"], h)
    write_csv(os.path.join(out, "marginal_snapshots.csv"),
              np.column_stack([hist.centers] + [s.density for s in snaps]),
              ["q"] + [f"p_t{t:g}" for t in config.snapshots], h)
    write_csv(os.path.join(out, "rdm_equilibrium.csv"), sigma.rows(), ["tau", "m", "mp", "re", "im"], h)
    write_csv(os.path.join(out, "table2.csv"),
              np.column_stack([np.arange(M), d, ensemble.diagonal, canon_cfg, canon_fit]),
              ["m", "sigma_eq", "sigma_ensemble", "canonical_beta", "canonical_fit"], h,
              note=f"beta={config.beta:g}, beta_fit=" + ("undefined" if beta_fit is None else f"{beta_fit:.6g}"))

    acceptance = acceptance_block(config, sigma, rel, tv_coarse, curve, relaxation)
    for key, ok in acceptance.items():
        if ok is False:
            logger.warning("acceptance %s not met", key)
    violations = sigma.violations()
    summary = {
        "command": "analyze",
        "samples": len(traj),
        "burn_in_samples": burn,
        "correlation_time": tau_c,
        "G0": curve.G0,
        "histogram_half_distance": hist.half_distance,
        "histogram_converged": hist.converged,
        "tv_distance": tv,
        "tv_distance_coarse": tv_coarse,
        "ck_residual": ck["residual"],
        "conditional_relaxation": relaxation,
        "beta_fit": beta_fit,
        "rdm_offdiag_ratio": float(rel.max(initial=0.0)),
        "ensemble_deviation": float(np.abs(sigma.matrix - ensemble.matrix).max()),
        "rdm_violations": violations,
        "fluctuation": fluct,
        "wraps": wraps,
        "acceptance": acceptance,
        "checks": {
            "rdm_valid": not violations,
            "marginals_normalized": bool(max(abs(x - 1.0) for x in norms) <= MARGINAL_TOL),
            "fluctuation_level0": fluct["level0"]["passed"],
            "fluctuation_window": fluct["window"]["passed"],
        },
    }
    write_json(os.path.join(out, "analysis.json"), summary, h)
    logger.info("TV(w_eq, p_eq)=%.4f  tau_c=%.3f  CK residual=%.4f", tv, tau_c, ck["residual"])
    return summary


# ---------- sweep ----------
def _sweep_one(config: ExperimentConfig, settings: Settings) -> Dict[str, Any]:
    ws = Workspace.open(settings)
    try:
        run = cmd_run(config, ws)
        ana = cmd_analyze(config, ws)
    finally:
        ws.conn.close()
    return {"seed": config.rpse_seed, "run": run, "analyze": ana}


def cmd_sweep(config: ExperimentConfig, ws: Workspace, seeds: Sequence[int], processes: int = 1) -> Dict[str, Any]:
    """Independent RPSE states on one shared spectrum, fanned out over worker processes."""
    if not seeds:
        raise ValueError("sweep needs at least one state seed")
    base = ws.output_dir(config)
    obtain_model(config, ws)
    configs = [replace(config, state_seed=int(s), output_dir=os.path.join(base, f"seed_{int(s)}")) for s in seeds]
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            results = list(pool.map(_sweep_one, configs, [ws.settings] * len(configs)))
    else:
        results = [_sweep_one(c, ws.settings) for c in configs]
    rows = np.array([[r["seed"], r["analyze"]["correlation_time"], r["analyze"]["tv_distance"],
                      r["analyze"]["ck_residual"]] for r in results], dtype=float)
    write_csv(os.path.join(base, "sweep.csv"), rows, ["seed", "tau_c", "tv", "ck_residual"], config_hash(config))
    checks = {f"seed_{r['seed']}_{k}": v for r in results
              for part in ("run", "analyze") for k, v in r[part]["checks"].items()}
    return {"command": "sweep", "seeds": [int(s) for s in seeds], "rows": rows.tolist(), "checks": checks}
