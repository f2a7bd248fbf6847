"""Sample-based evaluation of predicted pose posteriors.

Samples are passed either as a list of :class:`Pose` or as a pair of arrays
``(rotations (M, 3, 3), translations (M, 3))``; the array form is what the
evaluation loops use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySamples, LengthMismatch
from .geometry import Pose, chordal_l2_mean, geodesic_angle, pose_distance

TABLE_THRESHOLDS = ((0.1, 10.0), (0.2, 15.0), (0.3, 20.0))
GAMMA_MILD = 0.1
GAMMA_SEVERE = 0.05


@dataclass(frozen=True)
class RecallSpec:
    thresholds: tuple = TABLE_THRESHOLDS
    gamma: float = GAMMA_SEVERE

    def __post_init__(self):
        th = tuple((float(a), float(b)) for a, b in self.thresholds)
        if not th:
            raise ValueError("need at least one threshold")
        if any(a <= 0 or b <= 0 for a, b in th):
            raise ValueError("thresholds must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        object.__setattr__(self, "thresholds", th)


def as_arrays(samples):
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        R, t = samples
    else:
        samples = list(samples)
        if not samples:
            raise EmptySamples("no samples")
        R = np.stack([p.rotation for p in samples])
        t = np.stack([p.translation for p in samples])
    if len(R) == 0:
        raise EmptySamples("no samples")
    return np.asarray(R, dtype=np.float64), np.asarray(t, dtype=np.float64)


def within_threshold(samples, ground_truth: Pose, threshold):
    """Boolean mask of samples inside both the translation and angle limits."""
    R, t = as_arrays(samples)
    dt = np.linalg.norm(t - ground_truth.translation, axis=-1)
    dr = geodesic_angle(R, ground_truth.rotation)
    return (dt <= threshold[0]) & (dr <= threshold[1])


def recall_single(samples, ground_truth: Pose, threshold, gamma):
    """True positive iff at least a fraction ``gamma`` of samples is near the truth."""
    mask = within_threshold(samples, ground_truth, threshold)
    return bool(mask.sum() >= gamma * mask.size)


def recall_aggregate(flags):
    """Fraction of true positives per threshold, rounded to 2 decimals.

    ``flags`` is a (queries x thresholds) boolean table, or a flat list of
    flags for a single threshold.
    """
    a = np.asarray(flags, dtype=bool)
    if a.size == 0:
        raise ValueError("no queries")
    if a.ndim == 1:
        return round(float(a.mean()), 2)
    return [round(float(v), 2) for v in a.mean(axis=0)]


def point_estimate(samples):
    """Arithmetic mean translation and chordal mean rotation."""
    R, t = as_arrays(samples)
    return Pose(chordal_l2_mean(R), t.mean(axis=0))


def lower_median(values):
    v = np.sort(np.asarray(values, dtype=np.float64))
    return float(v[(len(v) - 1) // 2])


def median_errors(estimates, ground_truths):
    """Median translation error and median angle error (lower-middle for even counts)."""
    if len(estimates) != len(ground_truths):
        raise LengthMismatch(f"{len(estimates)} estimates vs {len(ground_truths)} ground truths")
    if not estimates:
        raise LengthMismatch("no estimates")
    d = np.array([pose_distance(e, g) for e, g in zip(estimates, ground_truths)])
    return lower_median(d[:, 0]), lower_median(d[:, 1])


# ------------------------------------------------------------------------ KDE


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def local_maxima(self, rel_height=0.05):
        """Grid values of strict interior local maxima above ``rel_height * max``."""
        d = self.density
        idx = np.where((d[1:-1] > d[:-2]) & (d[1:-1] >= d[2:]))[0] + 1
        return self.grid[idx[d[idx] >= rel_height * d.max()]]

    def integral(self):
        trapezoid = getattr(np, "trapezoid", None) or np.trapz
        return float(trapezoid(self.density, self.grid))


def silverman_bandwidth(x):
    x = np.asarray(x, dtype=np.float64)
    return 1.06 * np.std(x, ddof=1) * len(x) ** (-0.2)


def kde_marginal(samples, axis=0, grid=None, bandwidth=None, n_grid=512):
    """Gaussian KDE of one translation coordinate of the samples.

    ``samples`` may be poses, a pose array pair, or a 1-D array of values.
    Without ``bandwidth`` Silverman's rule is used. If all values coincide
    the result is one narrow Gaussian of width ``1e-3 * grid span``.
    """
    if isinstance(samples, np.ndarray) and samples.ndim == 1:
        x = samples.astype(np.float64)
    else:
        if isinstance(samples, (list, tuple)) and len(samples) == 0:
            raise EmptySamples("no samples")
        x = as_arrays(samples)[1][:, axis]
    if x.size == 0:
        raise EmptySamples("no samples")
    spread = np.ptp(x)
    if bandwidth is None and x.size >= 2 and spread > 0:
        bandwidth = silverman_bandwidth(x)
    if grid is None:
        pad = 5 * (bandwidth if bandwidth else max(abs(x[0]), 1.0) * 1e-3)
        grid = np.linspace(x.min() - pad, x.max() + pad, n_grid)
    grid = np.asarray(grid, dtype=np.float64)
    if bandwidth is None:
        bandwidth = 1e-3 * (grid[-1] - grid[0])
    u = (grid[:, None] - x[None, :]) / bandwidth
    dens = np.exp(-0.5 * u * u).sum(axis=1) / (x.size * bandwidth * np.sqrt(2 * np.pi))
    return DensityCurve(grid, dens, float(bandwidth))


# -------------------------------------------------------------- mode coverage


def mode_masses(samples, modes, threshold):
    """Fraction of samples within ``threshold`` of each mode region."""
    R, t = as_arrays(samples)
    masses = []
    for m in modes:
        dt = m.translation_distance(t)
        dr = geodesic_angle(R, m.rotation)
        masses.append(float(np.mean((dt <= threshold[0]) & (dr <= threshold[1]))))
    return masses


def mode_coverage(samples, modes, threshold, gamma_mode=GAMMA_SEVERE):
    """``(number of modes holding at least gamma_mode of the mass, masses)``."""
    if not modes:
        raise ValueError("mode set is empty")
    masses = mode_masses(samples, modes, threshold)
    return sum(m >= gamma_mode for m in masses), masses
