# src/dynamics/bohm.py — pilot field, Bohm velocities and the fixed-step RK4 trajectory integrator
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..errors import NodeProximity, NodeUnresolvable
from ..physics.single_rotor import VELOCITY_FACTOR
from .pure_state import PureState, product_amplitudes_at

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
NODE_FRACTION = 1e-12     # node threshold as a fraction of the mean density 1/(2 pi)^n
MAX_HALVINGS = 20
DEFAULT_STEP = 0.01


def wrap(Q) -> np.ndarray:
    out = np.mod(np.asarray(Q, dtype=float), TWO_PI)
    # mod can round up to exactly 2 pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def node_threshold(n: int, fraction: float = NODE_FRACTION) -> float:
    return fraction / TWO_PI ** n


@dataclass(frozen=True)
class Configuration:
    Q: Tuple[float, ...]
    time: float = 0.0

    @classmethod
    def at(cls, Q: Sequence[float], time: float = 0.0) -> "Configuration":
        return cls(Q=tuple(float(x) for x in wrap(Q)), time=float(time))

    @classmethod
    def minimum(cls, n: int) -> "Configuration":
        """All rotors at the potential minimum q = pi."""
        return cls(Q=(float(np.pi),) * n)


@dataclass(frozen=True, eq=False)
class FieldSample:
    psi: complex
    gradient: np.ndarray        # dPsi/dq_i, length n
    position: np.ndarray
    time: float

    @property
    def density(self) -> float:
        return float(abs(self.psi) ** 2)

    @property
    def velocities(self) -> np.ndarray:
        return VELOCITY_FACTOR * np.imag(self.gradient / self.psi)


# ---------- pilot field ----------
def _field(state: PureState, Q: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """Psi and gradients for a batch of configurations Q (B, n) -> (B,), (B, n)."""
    spectrum = state.spectrum
    basis = spectrum.basis
    n = basis.n
    B = Q.shape[0]
    # per-rotor tables: one trigonometric pass per angle
    val, der = spectrum.rotor.tables(Q.reshape(-1), levels=basis.levels)
    val = val.reshape(B, n, -1)
    der = der.reshape(B, n, -1)
    cols = np.arange(n)[None, :]
    F = val[:, cols, basis.labels]          # (B, D, n): phi_{l_i}(Q_i)
    G = der[:, cols, basis.labels]
    ones = np.ones(F.shape[:2] + (1,), dtype=complex)
    pre = np.concatenate([ones, np.cumprod(F[..., :-1], axis=-1)], axis=-1)
    suf = np.concatenate([np.cumprod(F[..., :0:-1], axis=-1)[..., ::-1], ones], axis=-1)
    d = product_amplitudes_at(state, tau)
    psi = np.einsum("l,bl->b", d, pre[..., -1] * F[..., -1])
    grad = np.einsum("l,bli->bi", d, pre * suf * G)
    return psi, grad


def eval_field(state: PureState, Q, tau: float) -> FieldSample:
    """Psi(Q, tau) = sum_l d_l(tau) prod_i phi_{l_i}(Q_i) and its per-rotor gradient."""
    Q = wrap(np.atleast_1d(Q))
    if Q.shape != (state.spectrum.basis.n,):
        raise ValueError(f"configuration has {Q.size} angles, model has {state.spectrum.basis.n} rotors")
    psi, grad = _field(state, Q[None, :], tau)
    return FieldSample(psi=complex(psi[0]), gradient=grad[0], position=Q, time=float(tau))


def density_at(state: PureState, Q, tau: float) -> float:
    return eval_field(state, Q, tau).density


def velocity(sample: FieldSample, threshold: Optional[float] = None) -> np.ndarray:
    """v_i = 4 pi Im[(dPsi/dq_i) / Psi] in radians per scaled time unit."""
    threshold = node_threshold(len(sample.gradient)) if threshold is None else threshold
    if not sample.density >= threshold:
        raise NodeProximity(sample.density, sample.position, sample.time)
    return sample.velocities


# ---------- integrator ----------
@dataclass(frozen=True, eq=False)
class BohmTrajectory:
    step: float
    times: np.ndarray           # (T,)
    positions: np.ndarray       # (T, n), wrapped
    diagnostics: Dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return len(self.times)

    def coordinate(self, rotor: int = 0) -> np.ndarray:
        return self.positions[:, rotor]

    def rows(self) -> np.ndarray:
        """(tau, Q_1..Q_n)."""
        return np.column_stack([self.times, self.positions])


class _Stepper:
    def __init__(self, state: PureState, threshold: float):
        self.state = state
        self.threshold = threshold
        self.min_density = np.inf
        self.halvings = 0
        self.max_depth = 0

    def v(self, Q: np.ndarray, t: float) -> np.ndarray:
        sample = eval_field(self.state, Q, t)
        self.min_density = min(self.min_density, sample.density)
        return velocity(sample, self.threshold)

    def rk4(self, Q: np.ndarray, t: float, h: float) -> np.ndarray:
        k1 = self.v(Q, t)
        k2 = self.v(Q + 0.5 * h * k1, t + 0.5 * h)
        k3 = self.v(Q + 0.5 * h * k2, t + 0.5 * h)
        k4 = self.v(Q + h * k3, t + h)
        return wrap(Q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))

    def advance(self, Q: np.ndarray, t: float, h: float, depth: int = 0) -> np.ndarray:
        try:
            return self.rk4(Q, t, h)
        except NodeProximity as e:
            if depth >= MAX_HALVINGS:
                logger.error("node unresolved at Q=%s t=%.6f (|Psi|^2=%.3e)", e.position, e.time, e.density)
                raise NodeUnresolvable(e.position, e.time, depth) from e
            self.halvings += 1
            self.max_depth = max(self.max_depth, depth + 1)
            logger.debug("node guard: halving step at t=%.6f depth %d (|Psi|^2=%.3e)", t, depth + 1, e.density)
            half = 0.5 * h
            Q = self.advance(Q, t, half, depth + 1)
            return self.advance(Q, t + half, half, depth + 1)


def integrate(state: PureState, Q0=None, tau_end: float = 1.0, step: float = DEFAULT_STEP,
              stride: int = 1, threshold: Optional[float] = None) -> BohmTrajectory:
    """Classical RK4 on dQ/dtau = v(Q, tau) over the uniform grid k * step, k = 0..tau_end/step.

    Near nodes a step is split recursively into halves (at most 20 levels) and the
    integration rejoins the uniform grid afterwards. Every `stride`-th grid point is recorded.
    """
    n = state.spectrum.basis.n
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    if tau_end < 0:
        raise ValueError(f"tau_end must be >= 0, got {tau_end}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    Q = wrap(np.full(n, np.pi) if Q0 is None else np.atleast_1d(Q0))
    if Q.shape != (n,):
        raise ValueError(f"initial configuration has {Q.size} angles, model has {n} rotors")
    steps = int(round(tau_end / step))
    if abs(steps * step - tau_end) > 1e-9 * max(1.0, tau_end):
        logger.warning("tau_end=%g is not a multiple of the step %g; stopping at %g", tau_end, step, steps * step)

    stepper = _Stepper(state, node_threshold(n) if threshold is None else threshold)
    recorded = steps // stride + 1
    times = np.arange(recorded) * (stride * step)
    out = np.empty((recorded, n))
    out[0] = Q
    for k in range(steps):
        Q = stepper.advance(Q, k * step, step)
        if (k + 1) % stride == 0:
            out[(k + 1) // stride] = Q

    diag = {
        "steps": steps,
        "min_density": float(stepper.min_density) if steps else float(density_at(state, out[0], 0.0)),
        "node_threshold": stepper.threshold,
        "substep_events": stepper.halvings,
        "max_halving_depth": stepper.max_depth,
    }
    logger.info("trajectory: %d steps of %g, min |Psi|^2 %.3e, %d step halvings",
                steps, step, diag["min_density"], stepper.halvings)
    return BohmTrajectory(step=float(step * stride), times=times, positions=out, diagnostics=diag)


# ---------- equivariance ----------
def _sample_density(density: np.ndarray, grid: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from a density tabulated at bin centres."""
    width = grid[1] - grid[0]
    cdf = np.concatenate([[0.0], np.cumsum(density) * width])
    cdf /= cdf[-1]
    edges = np.concatenate([grid - 0.5 * width, [grid[-1] + 0.5 * width]])
    return np.interp(rng.uniform(size=size), cdf, edges)


def _density_cdf(state: PureState, tau: float, grid: np.ndarray):
    psi, _ = _field(state, grid[:, None], tau)
    p = np.abs(psi) ** 2
    width = grid[1] - grid[0]
    cdf = np.concatenate([[0.0], np.cumsum(p) * width])
    cdf /= cdf[-1]
    edges = np.concatenate([grid - 0.5 * width, [grid[-1] + 0.5 * width]])
    return p, lambda x: np.interp(x, edges, cdf)


def _swarm(state: PureState, starts: np.ndarray, tau_end: float, step: float) -> np.ndarray:
    """Batch RK4 for a one-rotor swarm; points that meet a node are redone through `integrate`."""
    threshold = node_threshold(1)
    Q = starts[:, None].copy()
    hit = np.zeros(len(starts), dtype=bool)

    def v(Q, t):
        psi, grad = _field(state, Q, t)
        near = np.abs(psi) ** 2 < threshold
        hit[near] = True
        with np.errstate(divide="ignore", invalid="ignore"):
            out = VELOCITY_FACTOR * np.imag(grad / psi[:, None])
        out[near] = 0.0
        return out

    for k in range(int(round(tau_end / step))):
        t = k * step
        k1 = v(Q, t)
        k2 = v(Q + 0.5 * step * k1, t + 0.5 * step)
        k3 = v(Q + 0.5 * step * k2, t + 0.5 * step)
        k4 = v(Q + step * k3, t + step)
        Q = wrap(Q + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    finals = Q[:, 0]
    for i in np.flatnonzero(hit):
        finals[i] = integrate(state, [starts[i]], tau_end, step).positions[-1, 0]
    if hit.any():
        logger.debug("swarm: %d points re-integrated with the node guard", int(hit.sum()))
    return finals


def equivariance_check(state: PureState, points: int = 1000, tau_end: float = 1.0,
                       step: float = 1e-3, seed=0, grid_points: int = 4096,
                       level: float = 0.01) -> Dict:
    """One-rotor swarm: draws from |Psi(q,0)|^2 evolved to tau_end against |Psi(q,tau_end)|^2 (KS test)."""
    if state.spectrum.basis.n != 1:
        raise ValueError("equivariance check is defined for a single rotor")
    rng = np.random.default_rng(seed)
    grid = (np.arange(grid_points) + 0.5) * (TWO_PI / grid_points)
    p0, _ = _density_cdf(state, 0.0, grid)
    starts = _sample_density(p0, grid, points, rng)
    finals = _swarm(state, starts, tau_end, step)
    _, cdf1 = _density_cdf(state, tau_end, grid)
    res = stats.kstest(finals, cdf1)
    report = {
        "points": points,
        "tau_end": float(tau_end),
        "ks_statistic": float(res.statistic),
        "p_value": float(res.pvalue),
        "passed": bool(res.pvalue > level),
    }
    logger.info("equivariance: KS=%.4f p=%.3f passed=%s", res.statistic, res.pvalue, report["passed"])
    return report
