# src/analysis/trajectory.py — single-trajectory statistics: histograms, G(tau), conditionals, distances
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..dynamics.bohm import BohmTrajectory
from ..errors import EmptyTrajectoryError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
DEFAULT_BINS = 10_000
CONVERGENCE_TOL = 0.02
CORRELATION_FRACTION = 0.2
MIN_ROW_SAMPLES = 100
BURN_IN_FACTOR = 10


def _series(traj: BohmTrajectory, rotor: int, skip: int = 0) -> np.ndarray:
    if len(traj) == 0:
        raise EmptyTrajectoryError("trajectory record is empty")
    if not 0 <= rotor < traj.n:
        raise ValueError(f"rotor {rotor} outside [0, {traj.n})")
    x = traj.coordinate(rotor)[skip:]
    if x.size == 0:
        raise EmptyTrajectoryError(f"no samples left after discarding {skip}")
    return x


def bin_index(q: np.ndarray, bins: int) -> np.ndarray:
    idx = np.floor(np.mod(q, TWO_PI) * (bins / TWO_PI)).astype(int)
    return np.clip(idx, 0, bins - 1)


# ---------- distances ----------
def sup_distance(p: np.ndarray, w: np.ndarray) -> float:
    """Kolmogorov distance between two discretized distributions (bin fractions)."""
    p, w = np.asarray(p, dtype=float), np.asarray(w, dtype=float)
    if p.shape != w.shape:
        raise ValueError(f"grids differ: {p.shape} vs {w.shape}")
    return float(np.abs(np.cumsum(p) - np.cumsum(w)).max(initial=0.0))


def total_variation(p: np.ndarray, w: np.ndarray, dq: Optional[float] = None) -> float:
    """(1/2) sum |p - w| dq for two densities on a common uniform grid over [0, 2 pi)."""
    p, w = np.asarray(p, dtype=float), np.asarray(w, dtype=float)
    if p.shape != w.shape:
        raise ValueError(f"grids differ: {p.shape} vs {w.shape}")
    dq = TWO_PI / p.size if dq is None else dq
    for name, f in (("p", p), ("w", w)):
        mass = f.sum() * dq
        if abs(mass - 1.0) > 1e-6:
            raise ValueError(f"density {name} integrates to {mass:.8f}, not 1")
    return float(0.5 * np.abs(p - w).sum() * dq)


# ---------- histogram ----------
@dataclass(frozen=True, eq=False)
class Histogram:
    counts: np.ndarray
    samples: int
    half_distance: float        # sup-distance between half-record and full-record occupancy

    @property
    def bins(self) -> int:
        return len(self.counts)

    @property
    def width(self) -> float:
        return TWO_PI / self.bins

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.bins) + 0.5) * self.width

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.samples

    @property
    def density(self) -> np.ndarray:
        return self.fractions / self.width

    @property
    def converged(self) -> bool:
        return self.half_distance <= CONVERGENCE_TOL

    def rows(self) -> np.ndarray:
        """(q, w)."""
        return np.column_stack([self.centers, self.density])


def _counts(x: np.ndarray, bins: int) -> np.ndarray:
    return np.bincount(bin_index(x, bins), minlength=bins)


def histogram(traj: BohmTrajectory, rotor: int = 0, bins: int = DEFAULT_BINS, skip: int = 0) -> Histogram:
    """Occupancy of `bins` equal intervals of [0, 2 pi) by the uniformly sampled record."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    x = _series(traj, rotor, skip)
    counts = _counts(x, bins)
    half = _counts(x[:max(1, x.size // 2)], bins)
    dist = sup_distance(half / half.sum(), counts / x.size)
    if dist > CONVERGENCE_TOL:
        logger.warning("histogram not converged: half-record sup-distance %.4f > %.2f", dist, CONVERGENCE_TOL)
    return Histogram(counts=counts, samples=int(x.size), half_distance=dist)


# ---------- autocorrelation ----------
@dataclass(frozen=True, eq=False)
class CorrelationCurve:
    lags: np.ndarray            # in scaled time units
    values: np.ndarray
    fraction: float = CORRELATION_FRACTION

    @property
    def G0(self) -> float:
        return float(self.values[0])

    @property
    def correlation_time(self) -> float:
        return correlation_time(self, self.fraction)

    def rows(self) -> np.ndarray:
        """(tau, G)."""
        return np.column_stack([self.lags, self.values])


def _next_pow_two(n: int) -> int:
    i = 1
    while i < n:
        i <<= 1
    return i


def autocorrelation(traj: BohmTrajectory, rotor: int = 0, max_lag: float = 50.0, skip: int = 0,
                    fraction: float = CORRELATION_FRACTION) -> CorrelationCurve:
    """G(tau) = (1/M) sum_j dQ(j) dQ(j + tau), dQ = Q - mean(Q) over the full record, M = len - lag."""
    x = _series(traj, rotor, skip)
    k_max = int(round(max_lag / traj.step))
    if k_max >= x.size:
        raise ValueError(f"max lag {max_lag} spans the whole record ({x.size} samples)")
    if k_max * 10 > x.size:
        logger.warning("record (%d samples) is short for max lag %d samples", x.size, k_max)
    dx = x - x.mean()
    m = _next_pow_two(x.size)
    f = np.fft.rfft(dx, n=2 * m)
    # linear (non-circular) correlation through zero padding
    acf = np.fft.irfft(f * np.conj(f), n=2 * m)[:k_max + 1]
    G = acf / (x.size - np.arange(k_max + 1))
    G[0] = max(G[0], 0.0)
    return CorrelationCurve(lags=np.arange(k_max + 1) * traj.step, values=G, fraction=fraction)


def correlation_time(curve: CorrelationCurve, fraction: float = CORRELATION_FRACTION) -> float:
    """First lag with G(tau) < fraction * G(0); inf when the curve never drops that far."""
    if curve.G0 <= 0.0:
        return 0.0
    below = np.flatnonzero(curve.values < fraction * curve.G0)
    return float(curve.lags[below[0]]) if below.size else float("inf")


def burn_in_samples(tau_c: float, step: float, factor: float = BURN_IN_FACTOR) -> int:
    """Samples to discard before equilibrium statistics: `factor` correlation times."""
    if not np.isfinite(tau_c):
        return 0
    return int(np.ceil(factor * tau_c / step))


def wrap_detector(traj: BohmTrajectory, rotor: int = 0) -> Dict[str, float]:
    """Crossings of the 0 / 2 pi seam; non-zero means linear statistics are not valid."""
    x = _series(traj, rotor)
    jumps = int(np.count_nonzero(np.abs(np.diff(x)) > np.pi))
    return {"wraps": jumps, "min": float(x.min()), "max": float(x.max()), "linear_ok": jumps == 0}


# ---------- conditional distributions ----------
@dataclass(frozen=True, eq=False)
class ConditionalFamily:
    lag: float
    counts: np.ndarray          # (source_bins, target_bins)
    unconditional: np.ndarray   # target-bin fractions of the full record
    min_samples: int = MIN_ROW_SAMPLES

    @property
    def row_samples(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def sampled(self) -> np.ndarray:
        return self.row_samples >= self.min_samples

    @property
    def kernel(self) -> np.ndarray:
        """Row-normalized w(q0 | q, tau); unsampled rows fall back to the unconditional distribution."""
        rows = self.row_samples[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            K = np.where(rows > 0, self.counts / np.maximum(rows, 1), 0.0)
        K[~self.sampled] = self.unconditional
        return K

    def relaxation(self) -> float:
        """Largest sup-distance of an adequately sampled conditional from the unconditional histogram."""
        K = self.kernel
        d = [sup_distance(K[i], self.unconditional) for i in np.flatnonzero(self.sampled)]
        return float(max(d)) if d else float("nan")


def conditional_distribution(traj: BohmTrajectory, rotor: int = 0, lag: float = 0.0,
                             source_bins: int = 50, target_bins: int = 200, skip: int = 0,
                             min_samples: int = MIN_ROW_SAMPLES) -> ConditionalFamily:
    """Distribution of Q(t + lag) given Q(t) in each coarse source bin."""
    x = _series(traj, rotor, skip)
    k = int(round(lag / traj.step))
    if k < 0 or k >= x.size:
        raise ValueError(f"lag {lag} outside the record")
    src = bin_index(x[:x.size - k], source_bins)
    dst = bin_index(x[k:], target_bins)
    counts = np.zeros((source_bins, target_bins), dtype=np.int64)
    np.add.at(counts, (src, dst), 1)
    uncond = _counts(x, target_bins) / x.size
    fam = ConditionalFamily(lag=float(k * traj.step), counts=counts, unconditional=uncond, min_samples=min_samples)
    short = int(np.count_nonzero(~fam.sampled & (fam.row_samples > 0)))
    if short:
        logger.info("conditionals at lag %g: %d visited source bins below %d samples", lag, short, min_samples)
    return fam


def chapman_kolmogorov_check(traj: BohmTrajectory, rotor: int = 0, lag: float = 1.0,
                             bins: int = 50, skip: int = 0, min_samples: int = MIN_ROW_SAMPLES) -> Dict:
    """sup-distance between the empirical 2-lag kernel and the composed 1-lag kernel, over sampled rows."""
    one = conditional_distribution(traj, rotor, lag, bins, bins, skip, min_samples)
    two = conditional_distribution(traj, rotor, 2.0 * lag, bins, bins, skip, min_samples)
    composed = one.kernel @ one.kernel
    rows = np.flatnonzero(one.sampled & two.sampled)
    per_row = [sup_distance(two.kernel[i], composed[i]) for i in rows]
    residual = float(max(per_row)) if per_row else float("nan")
    logger.info("Chapman-Kolmogorov residual at lag %g: %.4f over %d rows", lag, residual, rows.size)
    return {"lag": float(lag), "residual": residual, "rows": int(rows.size), "bins": bins}
