"""Index processes, hitting-time rules and Monte Carlo call prices.

For continuous-supremum models (GBM, drifted BM, spectrally negative Lévy)
the optimal rule stops the first time the index reaches the strike. Since the
supremum path is continuous, the level at a hit is the exercise boundary
exactly, and a hit before the horizon happens iff the sampled supremum over
the horizon reaches the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import closedform as cf
from .model import (
    DriftedBmSpec,
    ExponentialKill,
    FixedSteps,
    GbmSpec,
    Horizon,
    Infinite,
    LevySpec,
    ModelError,
    delta_of,
    gamma_bm,
    gamma_levy_root,
    gamma_of,
)
from .rng import RngPolicy, chunk_ranges, map_chunks
from .simulate import DEFAULT_CHUNK, PathBundle, Model, bridge_max, sample_suprema

AGREE_SE = 3.0
TOURNAMENT_FACTORS = (0.5, 0.75, 1.25, 1.5)


class McEstimate(NamedTuple):
    estimate: float
    se: float
    n: int


def mc_summary(samples: np.ndarray) -> McEstimate:
    x = np.asarray(samples, dtype=float)
    n = x.size
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return McEstimate(float(x.mean()), se, n)


def combined_se(*ses: float) -> float:
    return math.sqrt(sum(s * s for s in ses))


def agree(a: McEstimate | float, b: McEstimate | float, k: float = AGREE_SE) -> bool:
    ea, sa = (a.estimate, a.se) if isinstance(a, McEstimate) else (float(a), 0.0)
    eb, sb = (b.estimate, b.se) if isinstance(b, McEstimate) else (float(b), 0.0)
    return abs(ea - eb) <= k * combined_se(sa, sb)


@dataclass(frozen=True)
class IndexPath:
    """``L`` on the grid of a source path.

    ``kind``/``b`` record how ``L`` maps back to the underlying level, so a
    stopped index level can be reported as a level of ``Z``.
    """

    times: np.ndarray
    L_values: np.ndarray
    terminal_value: float
    kind: str
    b: float
    segment_max: np.ndarray | None = None
    tail_sup: float | None = None

    def to_level(self, L):
        return L / self.b if self.kind == "multiplicative" else L + self.b

    def running_sup(self) -> np.ndarray:
        if self.segment_max is None:
            return np.maximum.accumulate(self.L_values)
        return np.maximum.accumulate(np.concatenate([self.L_values[:1], self.segment_max]))


def _terminal(path: PathBundle, additive: bool) -> float:
    if path.killed or path.tail_sup is not None:
        return -math.inf if additive else 0.0
    return float(path.values[-1])


def index_multiplicative(path: PathBundle, b: float) -> IndexPath:
    if not 0 < b <= 1:
        raise ValueError(f"b must lie in (0, 1], got {b}")
    if np.any(path.values <= 0):
        raise ValueError("multiplicative index needs a positive path")
    seg = None if path.segment_max is None else b * path.segment_max
    tail = None if path.tail_sup is None else b * path.tail_sup
    return IndexPath(path.times, b * path.values, _terminal(path, False), "multiplicative", b, seg, tail)


def index_additive(path: PathBundle, b: float) -> IndexPath:
    if b < 0:
        raise ValueError(f"b must be nonnegative, got {b}")
    seg = None if path.segment_max is None else path.segment_max - b
    tail = None if path.tail_sup is None else path.tail_sup - b
    return IndexPath(path.times, path.values - b, _terminal(path, True), "additive", b, seg, tail)


class StopRecord(NamedTuple):
    time: float
    stopped_level: float
    hit: bool
    in_tail: bool = False


def first_hit(index: IndexPath, m: float) -> StopRecord:
    """First time the index reaches ``m``; a crossing inside a segment reports
    the segment's right end as the time and the boundary as the level.

    A hit that only the tail draw certifies happens after the last grid time;
    its time is reported as the last grid time with ``in_tail=True``.
    """
    if not math.isfinite(m):
        raise ValueError("strike must be finite")
    L, t = index.L_values, index.times
    if L[0] >= m:
        return StopRecord(0.0, float(index.to_level(L[0])), True)
    boundary_level = float(index.to_level(m))
    seg = index.segment_max if index.segment_max is not None else np.maximum(L[:-1], L[1:])
    hits = np.nonzero(seg >= m)[0]
    if hits.size:
        return StopRecord(float(t[hits[0] + 1]), boundary_level, True)
    if index.tail_sup is not None and index.tail_sup >= m:
        return StopRecord(float(t[-1]), boundary_level, True, True)
    return StopRecord(float(t[-1]), index.terminal_value, False)


# boundaries


def boundary_spec(spec: Model, horizon: Horizon = Infinite()) -> cf.BoundarySpec:
    """Exercise-boundary constant for the models with a known index."""
    if isinstance(horizon, FixedSteps):
        raise ModelError("no closed exercise boundary on a fixed finite horizon")
    if isinstance(spec, GbmSpec):
        if isinstance(horizon, ExponentialKill):
            return cf.BoundarySpec.multiplicative(delta_of(spec, horizon.beta))
        return cf.BoundarySpec.multiplicative(gamma_of(spec))
    if isinstance(horizon, ExponentialKill):
        raise ModelError("exponential killing is implemented for GBM only")
    if isinstance(spec, DriftedBmSpec):
        return cf.BoundarySpec.additive(gamma_bm(spec))
    if isinstance(spec, LevySpec):
        return cf.BoundarySpec.multiplicative(gamma_levy_root(spec))
    raise TypeError(f"unsupported model {type(spec).__name__}")


def initial_level(spec: Model) -> float:
    return spec.z0 if isinstance(spec, DriftedBmSpec) else spec.x0


def closed_form_call(spec: Model, m: float, horizon: Horizon = Infinite()) -> float:
    x = initial_level(spec)
    if isinstance(spec, DriftedBmSpec):
        return cf.american_call_bm(x, m, gamma_bm(spec))
    bs = boundary_spec(spec, horizon)
    exponent = bs.constant / (bs.constant - 1.0)
    return cf.american_call_gbm(x, m, exponent)


# Monte Carlo prices


def threshold_payoffs(x: float, sup: np.ndarray, terminal: np.ndarray, m: float, boundary: float) -> np.ndarray:
    """Payoffs of the rule 'stop when Z first reaches ``boundary``'."""
    if x >= boundary:
        return np.full(sup.shape, max(x - m, 0.0))
    hit = sup >= boundary
    late = np.maximum(np.where(np.isfinite(terminal), terminal, -np.inf) - m, 0.0)
    return np.where(hit, max(boundary - m, 0.0), late)


def lookback_payoffs(sup: np.ndarray, terminal: np.ndarray, m: float, bs: cf.BoundarySpec) -> np.ndarray:
    """``(L*_{0,zeta} v Z_zeta - m)^+`` with ``L = bZ`` or ``L = Z - b``."""
    if bs.kind == "multiplicative":
        L = bs.index_constant * sup
    else:
        L = sup - bs.index_constant
    return np.maximum(np.maximum(L, terminal) - m, 0.0)


def mc_threshold_rule(
    spec: Model,
    m: float,
    boundary: float,
    n_paths: int,
    rng: RngPolicy,
    horizon: Horizon = Infinite(),
    n_steps: int = 400,
    start: int = 0,
) -> McEstimate:
    s = sample_suprema(spec, horizon, n_paths, n_steps, rng, start=start)
    return mc_summary(threshold_payoffs(initial_level(spec), s.sup, s.terminal, m, boundary))


def mc_call_stopped(
    spec: Model,
    m: float,
    n_paths: int,
    rng: RngPolicy,
    horizon: Horizon = Infinite(),
    n_steps: int = 400,
    start: int = 0,
) -> McEstimate:
    bs = boundary_spec(spec, horizon)
    return mc_threshold_rule(spec, m, cf.exercise_boundary(m, bs), n_paths, rng, horizon, n_steps, start)


def mc_call_lookback(
    spec: Model,
    m: float,
    n_paths: int,
    rng: RngPolicy,
    horizon: Horizon = Infinite(),
    n_steps: int = 400,
    start: int = 0,
) -> McEstimate:
    bs = boundary_spec(spec, horizon)
    s = sample_suprema(spec, horizon, n_paths, n_steps, rng, start=start)
    return mc_summary(lookback_payoffs(s.sup, s.terminal, m, bs))


@dataclass(frozen=True)
class TournamentRow:
    factor: float
    boundary: float
    estimate: float
    se: float
    optimal_estimate: float
    optimal_se: float

    @property
    def passes(self) -> bool:
        return self.optimal_estimate >= self.estimate - AGREE_SE * combined_se(self.se, self.optimal_se)


def optimality_tournament(
    spec: Model,
    m: float,
    n_paths: int,
    rng: RngPolicy,
    factors=TOURNAMENT_FACTORS,
    horizon: Horizon = Infinite(),
    n_steps: int = 400,
    start: int = 0,
) -> list[TournamentRow]:
    """Optimal threshold rule against scaled boundaries, all on one path set."""
    bs = boundary_spec(spec, horizon)
    opt = cf.exercise_boundary(m, bs)
    s = sample_suprema(spec, horizon, n_paths, n_steps, rng, start=start)
    x = initial_level(spec)
    best = mc_summary(threshold_payoffs(x, s.sup, s.terminal, m, opt))
    rows = []
    for f in factors:
        c = f * opt
        alt = mc_summary(threshold_payoffs(x, s.sup, s.terminal, m, c))
        rows.append(TournamentRow(f, c, alt.estimate, alt.se, best.estimate, best.se))
    return rows


def price_report(
    spec: Model,
    m: float,
    n_paths: int,
    rng: RngPolicy,
    horizon: Horizon = Infinite(),
    n_steps: int = 400,
    start: int = 0,
) -> dict:
    """Closed form against the stopped-rule and lookback estimators.

    The two estimators run on disjoint path sets so their errors are
    independent and the combined standard error is exact.
    """
    closed = closed_form_call(spec, m, horizon)
    stopped = mc_call_stopped(spec, m, n_paths, rng, horizon, n_steps, start)
    look = mc_call_lookback(spec, m, n_paths, rng, horizon, n_steps, start + n_paths)
    ok = agree(stopped, look) and agree(stopped, closed) and agree(look, closed)
    return {
        "model": type(spec).__name__,
        "m": m,
        "closed_form": closed,
        "mc_stopped": stopped.estimate,
        "se_stopped": stopped.se,
        "mc_lookback": look.estimate,
        "se_lookback": look.se,
        "agree": bool(ok),
    }


# duality


def _dual_put_chunk(spec: GbmSpec, put_strike: float, put_boundary: float, y0: float, n: int, rng: RngPolicy, a: int, b: int):
    """Discounted put on ``Y = 1/Z`` under the measure with density ``e^{rt} Z_t / x``.

    Discounting at rate ``r`` is realized as killing at an independent
    ``Exp(r)`` time, which has the same expectation as the discount factor.
    """
    idx = range(a, b)
    r, sig = spec.r, spec.sigma
    out = np.empty(b - a)
    if y0 <= put_boundary:
        out[:] = put_strike - y0
        return out
    log_e = math.log(put_boundary)
    for row, i in enumerate(idx):
        kappa = float(rng.generator(i, "kill").exponential(1.0 / r))
        dt = kappa / n
        xi = rng.generator(i, "path").standard_normal(n)
        u = 1.0 - rng.generator(i, "bridge").random(n)
        logy = np.empty(n + 1)
        logy[0] = math.log(y0)
        np.cumsum((r - 0.5 * sig**2) * dt - sig * math.sqrt(dt) * xi, out=logy[1:])
        logy[1:] += logy[0]
        # minimum of the bridge is minus the maximum of the negated bridge
        seg_min = -bridge_max(-logy[:-1], -logy[1:], sig**2 * dt, u)
        out[row] = put_strike - put_boundary if seg_min.min() <= log_e else 0.0
    return out


def duality_check(spec: GbmSpec, m: float, n_paths: int, rng: RngPolicy, n_steps: int = 400, start: int = 0) -> dict:
    if not isinstance(spec, GbmSpec):
        raise TypeError("duality check is implemented for GBM")
    if not spec.r > 0:
        raise ModelError("duality check needs r > 0")
    gamma = gamma_of(spec)
    d = cf.duality_transform(spec.x0, m, gamma)
    parts = map_chunks(
        lambda a, b: _dual_put_chunk(spec, d.strike, d.boundary, d.spot, n_steps, rng, a, b),
        chunk_ranges(start, n_paths, DEFAULT_CHUNK),
    )
    put = mc_summary(np.concatenate(parts))
    call = mc_call_stopped(spec, m, n_paths, rng, Infinite(), n_steps, start + n_paths)
    scaled = McEstimate(d.scale * put.estimate, d.scale * put.se, put.n)
    gap = abs(call.estimate - scaled.estimate)
    cse = combined_se(call.se, scaled.se)
    return {
        "m": m,
        "closed_form": cf.american_call_gbm(spec.x0, m, gamma),
        "call": call.estimate,
        "se_call": call.se,
        "scaled_put": scaled.estimate,
        "se_scaled_put": scaled.se,
        "gap": gap,
        "gap_in_se": gap / cse if cse > 0 else (0.0 if gap == 0 else math.inf),
        "agree": bool(gap <= AGREE_SE * cse),
    }
