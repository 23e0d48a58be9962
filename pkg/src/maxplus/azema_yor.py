"""Azéma-Yor martingales ``u(N*) + (N - N*) u'(N*)`` for increasing concave ``u``.

Also the transform ``v = u - x u'``, the concave envelope of ``u v m`` (whose
value at ``N_t`` is the Snell envelope of ``u(N) v m``), and the inverse map
from ``v`` back to ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .model import GbmSpec, FixedSteps
from .rng import RngPolicy, chunk_ranges, map_chunks
from .simulate import DEFAULT_CHUNK, PathBundle, simulate_batch
from .stopping import McEstimate, agree, mc_summary

ROOT_TOL = 1e-12
QUAD_TOL = 1e-12


class FamilyError(ValueError):
    pass


@dataclass(frozen=True)
class ConcaveFn:
    """Increasing, concave, C^1 function on ``(lo, hi)``."""

    name: str
    u: Callable
    du: Callable
    inverse: Callable | None = None
    lo: float = 0.0
    hi: float = math.inf
    params: tuple = field(default=())

    def __call__(self, x):
        return self.u(x)

    def in_domain(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x > self.lo) & (x < self.hi)))

    def spot_check(self, grid=None) -> None:
        """Raise unless ``u' > 0`` and ``u'`` is nonincreasing on a grid."""
        if grid is None:
            lo = self.lo if self.lo > 0 else 1e-3
            hi = self.hi if math.isfinite(self.hi) else 1e3
            grid = np.geomspace(max(lo, 1e-3), min(hi, 1e3), 200)
        d = np.array([self.du(x) for x in grid])
        if np.any(d <= 0):
            raise FamilyError(f"{self.name}: u' is not positive on the domain")
        if np.any(np.diff(d) > 1e-12 * np.maximum(1.0, np.abs(d[1:]))):
            raise FamilyError(f"{self.name}: u' increases somewhere, u is not concave")


def power(p: float) -> ConcaveFn:
    if not 0 < p <= 1:
        raise FamilyError(f"power family needs 0 < p <= 1 for concavity, got {p}")
    return ConcaveFn(
        f"power:{p!r}",
        lambda x: np.power(x, p),
        lambda x: p * np.power(x, p - 1.0),
        lambda y: np.power(y, 1.0 / p),
        params=(p,),
    )


def scaled_log(c: float) -> ConcaveFn:
    if not c > 0:
        raise FamilyError(f"log family needs c > 0, got {c}")
    return ConcaveFn(f"log:{c!r}", lambda x: c * np.log(x), lambda x: c / np.asarray(x, dtype=float), lambda y: np.exp(np.asarray(y) / c), params=(c,))


def affine(a: float, b: float) -> ConcaveFn:
    if not a > 0:
        raise FamilyError(f"affine family needs a > 0 to be increasing, got {a}")
    return ConcaveFn(
        f"affine:{a!r},{b!r}",
        lambda x: a * np.asarray(x, dtype=float) + b,
        lambda x: a + 0.0 * np.asarray(x, dtype=float),
        lambda y: (np.asarray(y, dtype=float) - b) / a,
        params=(a, b),
    )


def parse_family(text: str) -> ConcaveFn:
    """``power:p``, ``log:c`` or ``affine:a,b``."""
    try:
        kind, _, arg = text.partition(":")
        nums = [float(s) for s in arg.split(",")] if arg else []
    except ValueError:
        raise FamilyError(f"cannot parse family {text!r}") from None
    kind = kind.strip().lower()
    if kind == "power" and len(nums) == 1:
        return power(nums[0])
    if kind == "log" and len(nums) == 1:
        return scaled_log(nums[0])
    if kind == "affine" and len(nums) == 2:
        return affine(*nums)
    raise FamilyError(f"unknown family {text!r}; expected power:p, log:c or affine:a,b")


def ay_martingale(u: ConcaveFn, n, nstar):
    n = np.asarray(n, dtype=float)
    nstar = np.asarray(nstar, dtype=float)
    if np.any(n > nstar):
        raise ValueError("level exceeds its running maximum")
    if not (u.in_domain(n) and u.in_domain(nstar)):
        raise ValueError(f"arguments outside the domain of {u.name}")
    out = u.u(nstar) + (n - nstar) * u.du(nstar)
    return float(out) if np.ndim(out) == 0 else out


def v_of(u: ConcaveFn, x):
    if not u.in_domain(x):
        raise ValueError(f"argument outside the domain of {u.name}")
    x = np.asarray(x, dtype=float)
    out = u.u(x) - x * u.du(x)
    return float(out) if np.ndim(out) == 0 else out


# concave envelope of u v m


@dataclass(frozen=True)
class Envelope:
    """``phi = u`` right of ``x_star``, the chord through ``(0, m)`` left of it.

    ``x_star = 0`` means ``phi = u`` everywhere; ``x_star = inf`` means
    ``phi = m`` everywhere.
    """

    u: ConcaveFn
    m: float
    x_star: float

    @property
    def chord_slope(self) -> float:
        if self.x_star == 0 or math.isinf(self.x_star):
            return 0.0
        return float((self.u(self.x_star) - self.m) / self.x_star)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if math.isinf(self.x_star):
            out = np.full(x.shape, self.m)
        elif self.x_star == 0:
            out = self.u(x)
        else:
            out = np.where(x >= self.x_star, self.u(np.maximum(x, self.x_star)), self.chord_slope * x + self.m)
        return float(out) if out.ndim == 0 else out


def _v_range_probe(u: ConcaveFn, m: float):
    lo_lim = max(u.lo, 1e-300)
    hi_lim = min(u.hi, 1e300)
    lo = hi = 1.0 if u.in_domain(1.0) else math.sqrt(lo_lim * hi_lim)
    while v_of(u, lo) >= m and lo / 2 > lo_lim:
        lo /= 2
    while v_of(u, hi) <= m and hi * 2 < hi_lim:
        hi *= 2
    return lo, hi


def concave_envelope(u: ConcaveFn, m: float) -> Envelope:
    lo, hi = _v_range_probe(u, m)
    vlo, vhi = v_of(u, lo), v_of(u, hi)
    if vlo == m == vhi or (abs(vlo - m) <= ROOT_TOL and abs(vhi - m) <= ROOT_TOL):
        raise ValueError(f"v is flat at level {m} on [{lo}, {hi}]; the tangency point is not unique")
    if vhi < m:
        return Envelope(u, m, math.inf)
    if vlo > m:
        return Envelope(u, m, 0.0)
    # bisection on the log scale
    for _ in range(400):
        mid = math.sqrt(lo * hi)
        vm = v_of(u, mid)
        if abs(vm - m) <= ROOT_TOL or mid in (lo, hi):
            break
        if vm < m:
            lo = mid
        else:
            hi = mid
    x = mid
    eps = 1e-6 * x
    if abs(v_of(u, x - eps) - m) <= ROOT_TOL and abs(v_of(u, x + eps) - m) <= ROOT_TOL:
        raise ValueError(f"v is flat at level {m} around [{x - eps}, {x + eps}]; the tangency point is not unique")
    return Envelope(u, m, x)


def snell_from_envelope(u: ConcaveFn, m: float, n) -> float:
    return concave_envelope(u, m)(n)


# inverse problem


def invert_v(v: Callable, x0: float, u0: float, x_lo: float, x_hi: float, check: bool = True) -> ConcaveFn:
    """``u(x) = x (u0/x0 - int_{x0}^x v(s)/s^2 ds)`` solves ``u - x u' = v`` with ``u(x0) = u0``."""
    if not 0 < x_lo <= x0 <= x_hi:
        raise ValueError("anchor x0 must lie in [x_lo, x_hi] with x_lo > 0")

    def integral(x: float) -> float:
        val, _ = integrate.quad(lambda s: v(s) / (s * s), x0, x, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
        return val

    def u_fn(x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([xi * (u0 / x0 - integral(xi)) for xi in xs])
        return float(out[0]) if np.ndim(x) == 0 else out

    def du_fn(x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([u0 / x0 - integral(xi) - v(xi) / xi for xi in xs])
        return float(out[0]) if np.ndim(x) == 0 else out

    fn = ConcaveFn(f"inverted(x0={x0}, u0={u0})", u_fn, du_fn, lo=x_lo * (1 - 1e-12), hi=x_hi * (1 + 1e-12))
    if check:
        fn.spot_check(np.geomspace(x_lo, x_hi, 41))
    return fn


def fd_derivative(f: Callable, x: float, rel_step: float = 1e-3) -> float:
    """Five-point central difference."""
    h = rel_step * x
    return float((-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h))


def v_roundtrip_residual(u: ConcaveFn, v: Callable, grid) -> float:
    """``max |u - x u'_fd - v|`` with ``u'`` from finite differences of ``u``,
    so the check does not reuse the formula ``u'`` was built from."""
    return max(abs(u(x) - x * fd_derivative(u, x) - v(x)) for x in grid)


# path checks


@dataclass
class AyPathReport:
    dominance: float
    sup_identity: float
    drawdown: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.dominance >= -self.tol and self.sup_identity <= self.tol and self.drawdown >= -self.tol


def ay_path_check(u: ConcaveFn, path: PathBundle, tol: float = 1e-12) -> AyPathReport:
    """Pathwise checks on the grid: ``M >= u(N)``, ``sup M = u(N*)`` and the
    drawdown floor ``M >= v(u^{-1}(sup M))``."""
    n = path.values
    nstar = np.maximum.accumulate(n)
    M = np.asarray(ay_martingale(u, n, nstar))
    Mstar = np.maximum.accumulate(M)
    scale = max(1.0, float(np.max(np.abs(M))))
    dom = float(np.min(M - u(n)))
    sup_id = float(np.max(np.abs(Mstar - u(nstar))))
    if u.inverse is not None:
        floor = v_of(u, u.inverse(Mstar))
    else:
        floor = v_of(u, nstar)
    draw = float(np.min(M - floor))
    return AyPathReport(dom, sup_id, draw, tol * scale)


def ay_ensemble(
    u: ConcaveFn,
    sigma: float,
    T: float,
    n_steps: int,
    n_paths: int,
    rng: RngPolicy,
    x0: float = 1.0,
    start: int = 0,
) -> tuple[McEstimate, float]:
    """``E[M_T]`` on driftless GBM paths against ``M_0 = u(x0)``; ``N*_T`` is
    the bridge-corrected supremum."""
    spec = GbmSpec(r=0.0, sigma=sigma, x0=x0)

    def work(a, b):
        batch = simulate_batch(spec, FixedSteps(T, n_steps), n_steps, rng, np.arange(a, b))
        nT = batch.values[:, -1]
        return np.asarray(ay_martingale(u, nT, batch.total_sup()))

    vals = np.concatenate(map_chunks(work, chunk_ranges(start, n_paths, DEFAULT_CHUNK)))
    return mc_summary(vals), float(u(x0))


def ay_ensemble_agrees(est: McEstimate, m0: float) -> bool:
    return agree(est, m0)
