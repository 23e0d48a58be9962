"""Convex-order comparisons between terminal martingale values.

The test functions are ``x -> x v m``: ``X <=_cx Y`` iff the means agree and
``E[X v m] <= E[Y v m]`` for every ``m``. Sample versions decide at three
combined standard errors on a quantile grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import FixedSteps, GbmSpec, gamma_of
from .rng import RngPolicy, chunk_ranges, map_chunks
from .simulate import DEFAULT_CHUNK, PathBundle, simulate_batch

CX_SE = 3.0

DOMINATED = "dominated"
VIOLATED = "violated"
INCONCLUSIVE = "inconclusive"


def _variance_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    c = x - x.mean()
    var = float(c @ c / (n - 1))
    m4 = float(np.mean(c**4))
    return var, math.sqrt(max(m4 - var * var, 0.0) / n)


@dataclass
class CxReport:
    mean_x: float
    se_mean_x: float
    mean_y: float
    se_mean_y: float
    mean_diff_se: float
    m_grid: np.ndarray
    gaps: np.ndarray
    gap_se: np.ndarray
    var_x: float
    se_var_x: float
    var_y: float
    se_var_y: float
    var_diff_se: float
    paired: bool
    verdict: str = ""
    violations: list = field(default_factory=list)

    @property
    def means_agree(self) -> bool:
        return abs(self.mean_x - self.mean_y) <= CX_SE * self.mean_diff_se

    @property
    def variance_ordered(self) -> bool:
        return self.var_x <= self.var_y + CX_SE * self.var_diff_se

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "violations": [float(m) for m in self.violations],
            "paired": self.paired,
            "mean_x": self.mean_x,
            "se_mean_x": self.se_mean_x,
            "mean_y": self.mean_y,
            "se_mean_y": self.se_mean_y,
            "means_agree": self.means_agree,
            "var_x": self.var_x,
            "se_var_x": self.se_var_x,
            "var_y": self.var_y,
            "se_var_y": self.se_var_y,
            "variance_ordered": self.variance_ordered,
            "m_grid": self.m_grid.tolist(),
            "gaps": self.gaps.tolist(),
            "gap_se": self.gap_se.tolist(),
        }

    def csv_rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.m_grid.tolist(), self.gaps.tolist(), self.gap_se.tolist()))


def cx_compare(samples_x, samples_y, grid_size: int = 50, paired: bool = False) -> CxReport:
    """Evidence for ``X <=_cx Y``.

    With ``paired=True`` the samples come from the same paths and the gap
    standard errors are those of the per-path differences; otherwise the two
    standard errors are combined as for independent samples.
    """
    x = np.asarray(samples_x, dtype=float)
    y = np.asarray(samples_y, dtype=float)
    if x.size < 2 or y.size < 2:
        raise ValueError("need at least two samples on each side")
    if paired and x.size != y.size:
        raise ValueError("paired comparison needs samples of equal length")
    pooled = np.concatenate([x, y])
    grid = np.quantile(pooled, (np.arange(grid_size) + 0.5) / grid_size)
    gaps = np.empty(grid_size)
    ses = np.empty(grid_size)
    for i, m in enumerate(grid):
        cx_, cy = np.maximum(x, m), np.maximum(y, m)
        gaps[i] = cy.mean() - cx_.mean()
        if paired:
            ses[i] = (cy - cx_).std(ddof=1) / math.sqrt(x.size)
        else:
            ses[i] = math.hypot(cx_.std(ddof=1) / math.sqrt(x.size), cy.std(ddof=1) / math.sqrt(y.size))
    se_x = x.std(ddof=1) / math.sqrt(x.size)
    se_y = y.std(ddof=1) / math.sqrt(y.size)
    var_x, sv_x = _variance_se(x)
    var_y, sv_y = _variance_se(y)
    if paired:
        mean_se = (y - x).std(ddof=1) / math.sqrt(x.size)
        cx_c, cy_c = (x - x.mean()) ** 2, (y - y.mean()) ** 2
        var_se = (cy_c - cx_c).std(ddof=1) / math.sqrt(x.size)
    else:
        mean_se = math.hypot(se_x, se_y)
        var_se = math.hypot(sv_x, sv_y)
    rep = CxReport(
        float(x.mean()), float(se_x), float(y.mean()), float(se_y), float(mean_se),
        grid, gaps, ses, var_x, sv_x, var_y, sv_y, float(var_se), paired,
    )
    bad = gaps < -CX_SE * ses
    rep.violations = grid[bad].tolist()
    if np.any(bad):
        rep.verdict = VIOLATED
    elif not rep.means_agree:
        rep.verdict = INCONCLUSIVE
    else:
        rep.verdict = DOMINATED
    return rep


# GBM competitors


def phi_gbm_array(z: np.ndarray, zstar: np.ndarray, gamma: float) -> np.ndarray:
    """Vectorized Max-Plus martingale of GBM."""
    ratio = (z / zstar) ** gamma
    return (gamma - 1.0) / gamma * zstar * (ratio / (gamma - 1.0) + 1.0)


def compensator_trapezoid(times: np.ndarray, values: np.ndarray, r: float) -> np.ndarray:
    """``A_t = r int_0^t Z ds`` by the trapezoid rule, along the last axis."""
    dt = np.diff(times, axis=-1)
    inc = 0.5 * r * dt * (values[..., :-1] + values[..., 1:])
    A = np.zeros_like(values)
    np.cumsum(inc, axis=-1, out=A[..., 1:])
    return A


def doob_meyer_gbm_path(path: PathBundle, spec: GbmSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(A, M^A)`` along the path."""
    A = compensator_trapezoid(path.times, path.values, spec.r)
    return A, path.values + A


def _terminal_pairs(spec: GbmSpec, T: float, n_steps: int, rng: RngPolicy, a: int, b: int):
    g = gamma_of(spec)
    batch = simulate_batch(spec, FixedSteps(T, n_steps), n_steps, rng, np.arange(a, b))
    zT = batch.values[:, -1]
    mplus = phi_gbm_array(zT, batch.total_sup(), g)
    ma = zT + compensator_trapezoid(batch.times, batch.values, spec.r)[:, -1]
    return mplus, ma


def terminal_samples(spec: GbmSpec, T: float, n_steps: int, n_paths: int, rng: RngPolicy, start: int = 0):
    """Samples of ``M+_T`` (bridge-corrected running maximum) and ``M^A_T`` on the same paths."""
    parts = map_chunks(
        lambda a, b: _terminal_pairs(spec, T, n_steps, rng, a, b),
        chunk_ranges(start, n_paths, DEFAULT_CHUNK),
    )
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def mplus_vs_doobmeyer(
    spec: GbmSpec, T: float, n_steps: int, n_paths: int, rng: RngPolicy, grid_size: int = 50, start: int = 0
) -> CxReport:
    mplus, ma = terminal_samples(spec, T, n_steps, n_paths, rng, start)
    return cx_compare(mplus, ma, grid_size, paired=True)


# increments of the two martingales


@dataclass
class SiReport:
    steps: list
    rms: list
    ratios: list
    max_ratio: float
    bound_violations: int
    threshold: float = 0.75

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.threshold and self.bound_violations == 0


def _coupling_residual(values: np.ndarray, times: np.ndarray, r: float, gamma: float):
    zstar = np.maximum.accumulate(values, axis=1)
    mplus = phi_gbm_array(values, zstar, gamma)
    dt = np.diff(times)
    d_ma = np.diff(values, axis=1) + 0.5 * r * dt * (values[:, :-1] + values[:, 1:])
    d_mp = np.diff(mplus, axis=1)
    weight = (values[:, :-1] / zstar[:, :-1]) ** (gamma - 1.0)
    R = (d_mp - weight * d_ma).sum(axis=1)
    # |dM+| <= |dZ| <= |dM^A| + |dA| exactly; a little room for rounding
    slack = 1e-12 * np.maximum(1.0, zstar[:, 1:])
    dA = 0.5 * r * dt * (values[:, :-1] + values[:, 1:])
    violations = int(np.count_nonzero(np.abs(d_mp) > np.abs(d_ma) + dA + slack))
    return R, violations


def si_representation_check(
    spec: GbmSpec,
    T: float,
    n_paths: int,
    rng: RngPolicy,
    coarse_steps=(250, 500, 1000),
    threshold: float = 0.75,
    start: int = 0,
) -> SiReport:
    """Discrete increments of ``M+`` against ``(Z/Z*)^{gamma-1} dM^A``.

    Paths are drawn once at the finest resolution ``2 * max(coarse_steps)`` and
    subsampled, so every resolution sees the same Brownian paths.
    """
    gamma = gamma_of(spec)
    fine = 2 * max(coarse_steps)
    levels = sorted(set(coarse_steps) | {2 * k for k in coarse_steps})
    for k in levels:
        if fine % k:
            raise ValueError(f"step count {k} does not divide the finest grid {fine}")

    def work(a, b):
        batch = simulate_batch(spec, FixedSteps(T, fine), fine, rng, np.arange(a, b), bridge=False)
        sq, viol = {}, 0
        for k in levels:
            stride = fine // k
            R, v = _coupling_residual(batch.values[:, ::stride], batch.times[::stride], spec.r, gamma)
            sq[k] = float(R @ R)
            viol += v
        return sq, viol

    parts = map_chunks(work, chunk_ranges(start, n_paths, 512))
    rms = {k: math.sqrt(sum(p[0][k] for p in parts) / n_paths) for k in levels}
    violations = sum(p[1] for p in parts)
    ks = sorted(coarse_steps)
    ratios = [rms[2 * k] / rms[k] if rms[k] > 0 else 0.0 for k in ks]
    return SiReport(
        ks,
        [rms[k] for k in ks],
        ratios,
        max(ratios) if ratios else 0.0,
        violations,
        threshold,
    )
