"""Piecewise-linear convex functions of the strike.

``f(m) = anchor + sum_k inc_k * max(0, m - bp_k)`` with increasing breakpoints
and positive slope increments. Snell envelopes of ``Z v m`` on a finite tree
stay in this class under the two operations backward induction needs:
convex combination and maximum with ``z v m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MERGE_RTOL = 1e-12


@dataclass(frozen=True)
class PLConvex:
    anchor: float
    bps: np.ndarray
    inc: np.ndarray

    def __post_init__(self):
        bps = np.asarray(self.bps, dtype=float)
        inc = np.asarray(self.inc, dtype=float)
        if bps.shape != inc.shape or bps.ndim != 1:
            raise ValueError("breakpoints and increments must be 1-D arrays of equal length")
        if bps.size > 1 and np.any(np.diff(bps) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(inc <= 0):
            raise ValueError("slope increments must be positive")
        if not math.isfinite(self.anchor):
            raise ValueError("anchor must be finite")
        object.__setattr__(self, "bps", bps)
        object.__setattr__(self, "inc", inc)

    @property
    def total_slope(self) -> float:
        return float(self.inc.sum())

    @property
    def first_breakpoint(self) -> float:
        return float(self.bps[0]) if self.bps.size else math.inf

    @property
    def last_breakpoint(self) -> float:
        return float(self.bps[-1]) if self.bps.size else -math.inf

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        out = self.anchor + (np.maximum(0.0, m[..., None] - self.bps) * self.inc).sum(axis=-1)
        return float(out) if out.ndim == 0 else out

    def left_slope(self, m: float) -> float:
        return float(self.inc[self.bps < m].sum())

    def right_slope(self, m: float) -> float:
        return float(self.inc[self.bps <= m].sum())

    def slopes(self) -> np.ndarray:
        """Slope on each interval: before bp_0, between consecutive bps, after the last."""
        return np.concatenate([[0.0], np.cumsum(self.inc)])


def vee(z: float) -> PLConvex:
    """``m -> z v m``."""
    return PLConvex(float(z), np.array([float(z)]), np.array([1.0]))


def _merge(bps: np.ndarray, inc: np.ndarray, rtol: float = MERGE_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Sort, then fold breakpoints closer than ``rtol`` (relative) into one."""
    order = np.argsort(bps, kind="stable")
    bps, inc = bps[order], inc[order]
    keep = inc > 0
    bps, inc = bps[keep], inc[keep]
    if bps.size <= 1:
        return bps, inc
    gap = np.diff(bps)
    new_group = gap > rtol * np.maximum(1.0, np.abs(bps[1:]))
    starts = np.concatenate([[0], np.nonzero(new_group)[0] + 1])
    return bps[starts], np.add.reduceat(inc, starts)


def combine(fs, ps) -> PLConvex:
    """Convex combination ``sum_i p_i f_i``."""
    ps = np.asarray(ps, dtype=float)
    anchor = float(sum(p * f.anchor for f, p in zip(fs, ps)))
    bps = np.concatenate([f.bps for f in fs])
    inc = np.concatenate([p * f.inc for f, p in zip(fs, ps)])
    b, i = _merge(bps, inc)
    return PLConvex(anchor, b, i)


def floor_at(f: PLConvex, z: float, atol: float = 0.0) -> PLConvex:
    """``max(z, f)`` for nondecreasing ``f`` whose total slope is positive.

    An anchor within ``atol`` of ``z`` is snapped to ``z``, so contact with the
    floor is recorded exactly rather than lost to rounding.
    """
    if f.anchor > z + atol:
        return f
    if f.anchor >= z - atol:
        return PLConvex(float(z), f.bps, f.inc)
    if f.total_slope <= 0:
        raise ValueError("a flat function below the floor never reaches it")
    # walk the pieces until f reaches z
    value = f.anchor
    slope = 0.0
    for k in range(f.bps.size):
        if k > 0:
            value += slope * (f.bps[k] - f.bps[k - 1])
        if value >= z:
            # reached at or before bp_k inside a piece of positive slope
            cross = f.bps[k] - (value - z) / slope
            new_bps = np.concatenate([[cross], f.bps[k:]])
            new_inc = np.concatenate([[slope], f.inc[k:]])
            return PLConvex(float(z), *_merge(new_bps, new_inc))
        slope += f.inc[k]
    cross = f.bps[-1] + (z - value) / slope
    return PLConvex(float(z), np.array([cross]), np.array([slope]))


def maximum(f: PLConvex, g: PLConvex) -> PLConvex:
    """Pointwise maximum of two PL convex functions, exact up to rounding.

    Slopes come from the dominating function on each interval rather than from
    differences of values, so no increment is manufactured by cancellation.
    """
    knots = np.union1d(f.bps, g.bps)
    # crossings inside each piece where f - g changes sign
    pts = np.concatenate([[knots[0] - 1.0] if knots.size else [0.0], knots])
    extra = []
    df = f(pts) - g(pts)
    sf = np.array([f.right_slope(p) for p in pts])
    sg = np.array([g.right_slope(p) for p in pts])
    for j in range(pts.size):
        ds = sf[j] - sg[j]
        if ds == 0:
            continue
        t = pts[j] - df[j] / ds
        hi = pts[j + 1] if j + 1 < pts.size else math.inf
        if pts[j] < t < hi:
            extra.append(t)
    cand = np.union1d(knots, np.array(extra))
    if cand.size == 0:
        return PLConvex(max(f.anchor, g.anchor), np.empty(0), np.empty(0))
    # slope of the max on each interval (-inf, c_0), (c_0, c_1), ..., (c_last, inf)
    probes = np.concatenate([[cand[0] - 1.0], 0.5 * (cand[:-1] + cand[1:]), [cand[-1] + 1.0]])
    slopes = np.empty(probes.size)
    for j, p in enumerate(probes):
        fv, gv = f(p), g(p)
        if j == probes.size - 1:
            # beyond every knot: the larger slope wins eventually, ties go to the larger value
            fs, gs = f.total_slope, g.total_slope
            slopes[j] = max(fs, gs) if fs != gs else fs
        else:
            slopes[j] = f.right_slope(p) if fv >= gv else g.right_slope(p)
    inc = np.diff(slopes)
    inc[np.abs(inc) <= 1e-15] = 0.0
    if np.any(inc < 0):
        raise AssertionError("maximum produced a concave kink; inputs were not convex")
    left = max(f.anchor, g.anchor)
    return PLConvex(left, *_merge(cand, inc))


def max_abs_diff(f: PLConvex, g: PLConvex) -> float:
    """Sup-norm distance; both being PL with knots in the union, the knots and
    the slopes at the ends decide it."""
    knots = np.union1d(f.bps, g.bps)
    d = abs(f.anchor - g.anchor)
    if knots.size:
        d = max(d, float(np.max(np.abs(f(knots) - g(knots)))))
    if abs(f.total_slope - g.total_slope) > 0:
        return math.inf if abs(f.total_slope - g.total_slope) > 1e-12 else d
    return d


def clamp_left(f: PLConvex, level: float) -> PLConvex:
    """``l -> f(max(l, level))``; ``level = -inf`` leaves ``f`` unchanged."""
    if level == -math.inf:
        return f
    keep = f.bps > level
    active = float(f.inc[~keep].sum())
    bps, inc = f.bps[keep], f.inc[keep]
    if active > 0:
        bps = np.concatenate([[level], bps])
        inc = np.concatenate([[active], inc])
    return PLConvex(f(level), *_merge(bps, inc))
