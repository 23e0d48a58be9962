"""Seeded path generation with exact running-supremum sampling.

The supremum of a continuous path between two grid points is drawn from the
Brownian-bridge maximum law, and the supremum after the truncation time is
drawn from the exact restart law, so the supremum over an infinite (or
exponentially killed) horizon carries no discretization bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Union

import numpy as np

from .model import (
    DriftedBmSpec,
    ExponentialKill,
    FixedSteps,
    GbmSpec,
    Horizon,
    Infinite,
    LevySpec,
    ModelError,
    gamma_bm,
    gamma_levy_root,
    gamma_of,
)
from .rng import RngPolicy, chunk_ranges, map_chunks

GRID_ONLY = "grid-only"
BRIDGE = "bridge-corrected"
EXACT_TAIL = "exact-tail-augmented"
SUP_MODES = (GRID_ONLY, BRIDGE, EXACT_TAIL)

Model = Union[GbmSpec, DriftedBmSpec, LevySpec]

DEFAULT_CHUNK = 2048


def running_sup(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("running_sup needs a nonempty sequence")
    return np.maximum.accumulate(v, axis=-1)


@dataclass(frozen=True)
class PathBundle:
    """One simulated path.

    ``left_limits[k]`` is the level just before ``times[k+1]``; it differs from
    ``values[k+1]`` only at jump instants. ``segment_max[k]`` is the sampled
    supremum over ``[times[k], times[k+1])`` once bridge-corrected.
    """

    times: np.ndarray
    values: np.ndarray
    running_sup: np.ndarray
    sup_mode: str
    seed: int
    path_index: int = 0
    left_limits: np.ndarray | None = None
    segment_max: np.ndarray | None = None
    tail_sup: float | None = None
    killed: bool = False

    def __post_init__(self):
        if self.sup_mode not in SUP_MODES:
            raise ValueError(f"unknown sup_mode {self.sup_mode!r}")
        if self.left_limits is None:
            object.__setattr__(self, "left_limits", self.values[1:].copy())

    @property
    def total_sup(self) -> float:
        s = float(self.running_sup[-1])
        if self.tail_sup is not None:
            s = max(s, float(self.tail_sup))
        return s

    def check_invariants(self) -> None:
        t, v, rs = self.times, self.values, self.running_sup
        if t[0] != 0 or np.any(np.diff(t) <= 0):
            raise AssertionError("times must start at 0 and increase strictly")
        if np.any(np.diff(rs) < 0):
            raise AssertionError("running_sup must be nondecreasing")
        if np.any(rs < running_sup(v)):
            raise AssertionError("running_sup must dominate the grid values")

    def to_csv_rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.times.tolist(), self.values.tolist(), self.running_sup.tolist()))


@dataclass(frozen=True)
class PathBatch:
    """Rectangular block of paths; row ``i`` equals the single-path output for
    ``path_index[i]``. ``times`` is shared (1-D) or per path (2-D, killed horizon)."""

    times: np.ndarray
    values: np.ndarray
    segment_max: np.ndarray | None
    tail_sup: np.ndarray | None
    path_index: np.ndarray
    sup_mode: str
    seed: int
    killed: bool = False

    def __len__(self):
        return self.values.shape[0]

    def running_sup(self) -> np.ndarray:
        if self.segment_max is None:
            return running_sup(self.values)
        first = self.values[:, :1]
        return np.maximum.accumulate(np.concatenate([first, self.segment_max], axis=1), axis=1)

    def finite_sup(self) -> np.ndarray:
        if self.segment_max is None:
            return self.values.max(axis=1)
        return np.maximum(self.values[:, 0], self.segment_max.max(axis=1))

    def total_sup(self) -> np.ndarray:
        s = self.finite_sup()
        if self.tail_sup is not None:
            s = np.maximum(s, self.tail_sup)
        return s

    def bundle(self, i: int) -> PathBundle:
        times = self.times if self.times.ndim == 1 else self.times[i]
        return PathBundle(
            times=times.copy(),
            values=self.values[i].copy(),
            running_sup=self.running_sup()[i],
            sup_mode=self.sup_mode,
            seed=self.seed,
            path_index=int(self.path_index[i]),
            segment_max=None if self.segment_max is None else self.segment_max[i].copy(),
            tail_sup=None if self.tail_sup is None else float(self.tail_sup[i]),
            killed=self.killed,
        )


def _indices(path_index) -> np.ndarray:
    return np.atleast_1d(np.asarray(path_index, dtype=np.int64))


def _normals(rng: RngPolicy, idx: np.ndarray, n: int, purpose: str = "path") -> np.ndarray:
    out = np.empty((idx.size, n))
    for row, i in enumerate(idx):
        out[row] = rng.generator(int(i), purpose).standard_normal(n)
    return out


def _open_uniforms(rng: RngPolicy, idx: np.ndarray, n: int, purpose: str) -> np.ndarray:
    # uniforms on (0, 1]: the inverse-CDF formulas below take logs and powers of U
    out = np.empty((idx.size, n))
    for row, i in enumerate(idx):
        out[row] = 1.0 - rng.generator(int(i), purpose).random(n)
    return out


def bridge_max(a, b, var, u):
    """Inverse of ``P(M >= y) = exp(-2(y-a)(y-b)/var)`` for ``y >= max(a, b)``.

    The law of the bridge maximum does not depend on the drift, so this is an
    exact draw for any Brownian motion with constant drift.
    """
    a, b, var, u = np.broadcast_arrays(*map(np.asarray, (a, b, var, u)))
    return 0.5 * (a + b + np.sqrt((b - a) ** 2 - 2.0 * var * np.log(u)))


# GBM


def _gbm_rows(spec: GbmSpec, horizon_len: np.ndarray, n: int, rng: RngPolicy, idx: np.ndarray):
    """Log-levels of GBM rows. ``horizon_len`` has one entry per row."""
    dt = horizon_len / n
    xi = _normals(rng, idx, n)
    drift = (-spec.r - 0.5 * spec.sigma**2) * dt
    inc = drift[:, None] + spec.sigma * np.sqrt(dt)[:, None] * xi
    logz = np.empty((idx.size, n + 1))
    logz[:, 0] = math.log(spec.x0)
    np.cumsum(inc, axis=1, out=logz[:, 1:])
    logz[:, 1:] += math.log(spec.x0)
    return logz, dt


def simulate_gbm(spec: GbmSpec, T: float, n: int, rng: RngPolicy, path_index: int = 0) -> PathBundle:
    if not T > 0 or n < 1:
        raise ValueError(f"need T > 0 and n >= 1, got T={T}, n={n}")
    logz, _ = _gbm_rows(spec, np.array([float(T)]), n, rng, _indices(path_index))
    values = np.exp(logz[0])
    times = np.linspace(0.0, T, n + 1)
    return PathBundle(times, values, running_sup(values), GRID_ONLY, rng.master_seed, int(path_index))


def simulate_drifted_bm(spec: DriftedBmSpec, T: float, n: int, rng: RngPolicy, path_index: int = 0) -> PathBundle:
    if not T > 0 or n < 1:
        raise ValueError(f"need T > 0 and n >= 1, got T={T}, n={n}")
    values = _bm_rows(spec, np.array([float(T)]), n, rng, _indices(path_index))[0][0]
    times = np.linspace(0.0, T, n + 1)
    return PathBundle(times, values, running_sup(values), GRID_ONLY, rng.master_seed, int(path_index))


def _bm_rows(spec: DriftedBmSpec, horizon_len: np.ndarray, n: int, rng: RngPolicy, idx: np.ndarray):
    dt = horizon_len / n
    xi = _normals(rng, idx, n)
    inc = (-spec.mu * dt)[:, None] + spec.sigma * np.sqrt(dt)[:, None] * xi
    z = np.empty((idx.size, n + 1))
    z[:, 0] = spec.z0
    np.cumsum(inc, axis=1, out=z[:, 1:])
    z[:, 1:] += spec.z0
    return z, dt


def _on_log_scale(spec) -> bool:
    if isinstance(spec, (GbmSpec, LevySpec)):
        return True
    if isinstance(spec, DriftedBmSpec):
        return False
    raise TypeError(f"unsupported model {type(spec).__name__}")


def _segment_max(values, left_limits, dt, sigma, log_scale, u):
    if log_scale:
        a, b = np.log(values), np.log(left_limits)
    else:
        a, b = values, left_limits
    y = bridge_max(a, b, sigma**2 * dt, u)
    return np.exp(y) if log_scale else y


def bridge_sup_correct(path: PathBundle, spec: Model, rng: RngPolicy) -> PathBundle:
    """Replace grid monitoring by exact bridge maxima on every diffusion segment."""
    if path.sup_mode == EXACT_TAIL:
        raise ValueError("path is already tail-augmented; bridge-correct before adding the tail")
    n = path.values.size - 1
    u = _open_uniforms(rng, _indices(path.path_index), n, "bridge")[0]
    dt = np.diff(path.times)
    segmax = _segment_max(path.values[:-1], path.left_limits, dt, spec.sigma, _on_log_scale(spec), u)
    rs = np.maximum.accumulate(np.concatenate([path.values[:1], segmax]))
    return replace(path, running_sup=rs, segment_max=segmax, sup_mode=BRIDGE)


def sup_tail_pareto(z_T, gamma: float, rng: np.random.Generator):
    """Supremum after restart at ``z_T``: ``z_T * U^(-1/gamma)``."""
    if not gamma > 1:
        raise ModelError(f"gamma must exceed 1, got {gamma}")
    z_T = np.asarray(z_T, dtype=float)
    u = 1.0 - rng.random(z_T.shape)
    out = z_T * u ** (-1.0 / gamma)
    return float(out) if out.ndim == 0 else out


def sup_tail_exponential(z_T, gamma: float, rng: np.random.Generator):
    """Additive analogue for drifted BM: ``z_T + Exp(gamma)``."""
    if not gamma > 0:
        raise ModelError(f"gamma must be positive, got {gamma}")
    z_T = np.asarray(z_T, dtype=float)
    out = z_T - np.log(1.0 - rng.random(z_T.shape)) / gamma
    return float(out) if out.ndim == 0 else out


def sample_kill_time(beta: float, rng: np.random.Generator) -> float:
    if not beta > 0:
        raise ModelError(f"beta must be positive, got {beta}")
    return float(rng.exponential(1.0 / beta))


def tail_exponent(spec: Model) -> float:
    if isinstance(spec, GbmSpec):
        return gamma_of(spec)
    if isinstance(spec, DriftedBmSpec):
        return gamma_bm(spec)
    return gamma_levy_root(spec)


def _tail_draw(spec: Model, z_T: np.ndarray, rng: RngPolicy, idx: np.ndarray, exponent: float) -> np.ndarray:
    u = _open_uniforms(rng, idx, 1, "tail")[:, 0]
    if _on_log_scale(spec):
        if not exponent > 1:
            raise ModelError(f"tail exponent must exceed 1, got {exponent}")
        return z_T * u ** (-1.0 / exponent)
    if not exponent > 0:
        raise ModelError(f"tail exponent must be positive, got {exponent}")
    return z_T - np.log(u) / exponent


def augment_tail(path: PathBundle, spec: Model, rng: RngPolicy, exponent: float | None = None) -> PathBundle:
    """Attach an exact draw of the supremum after the last grid time."""
    if path.killed:
        raise ValueError("a killed path has no tail after its kill time")
    if path.sup_mode == EXACT_TAIL:
        raise ValueError("path already carries a tail draw")
    e = tail_exponent(spec) if exponent is None else exponent
    tail = _tail_draw(spec, np.array([path.values[-1]]), rng, _indices(path.path_index), e)[0]
    return replace(path, tail_sup=float(tail), sup_mode=EXACT_TAIL)


def simulate_killed_gbm(spec: GbmSpec, beta: float, n: int, rng: RngPolicy, path_index: int = 0) -> PathBundle:
    """GBM on ``[0, zeta]`` with ``zeta ~ Exp(beta)`` from the path's kill stream.

    The last grid value is the left limit at ``zeta``; the killed process
    itself is 0 from ``zeta`` on.
    """
    zeta = sample_kill_time(beta, rng.generator(int(path_index), "kill"))
    path = simulate_gbm(spec, zeta, n, rng, path_index)
    # same time grid arithmetic as the batch path so rows match bit for bit
    return replace(path, times=np.linspace(0.0, 1.0, n + 1) * zeta, killed=True)


# Lévy


def simulate_levy(spec: LevySpec, T: float, n: int, rng: RngPolicy, path_index: int = 0) -> PathBundle:
    """Exponential Lévy path with negative jumps merged into a uniform grid."""
    if not T > 0 or n < 1:
        raise ValueError(f"need T > 0 and n >= 1, got T={T}, n={n}")
    jg = rng.generator(int(path_index), "jumps")
    total = spec.total_rate
    n_jumps = int(jg.poisson(total * T)) if total > 0 else 0
    jump_times = np.sort(jg.uniform(0.0, T, n_jumps))
    sizes = np.zeros(n_jumps)
    if n_jumps:
        rates = np.array([j.rate for j in spec.jumps])
        kinds = jg.choice(len(spec.jumps), size=n_jumps, p=rates / rates.sum())
        for k, j in enumerate(spec.jumps):
            sel = kinds == k
            sizes[sel] = j.sample(jg, int(sel.sum()))

    grid = np.linspace(0.0, T, n + 1)
    times = np.union1d(grid, jump_times)
    is_jump = np.isin(times, jump_times)
    jump_at = np.zeros(times.size)
    jump_at[np.searchsorted(times, jump_times)] = sizes

    dt = np.diff(times)
    xi = rng.generator(int(path_index), "path").standard_normal(dt.size)
    cont = spec.effective_drift * dt + spec.sigma * np.sqrt(dt) * xi
    logx = np.empty(times.size)
    left = np.empty(dt.size)
    logx[0] = 0.0
    for k in range(dt.size):
        left[k] = logx[k] + cont[k]
        logx[k + 1] = left[k] + (jump_at[k + 1] if is_jump[k + 1] else 0.0)
    values = spec.x0 * np.exp(logx)
    left_limits = spec.x0 * np.exp(left)
    grid_sup = np.maximum.accumulate(np.concatenate([values[:1], np.maximum(values[1:], left_limits)]))
    return PathBundle(
        times, values, grid_sup, GRID_ONLY, rng.master_seed, int(path_index), left_limits=left_limits
    )


def levy_jump_count(path: PathBundle, n: int) -> int:
    """Number of jump instants added on top of the ``n``-step grid."""
    return path.times.size - (n + 1)


# batches


def default_truncation(spec: Model) -> float:
    rate = spec.mu if isinstance(spec, DriftedBmSpec) else spec.r
    return 5.0 / rate if rate > 0 else 10.0


def _horizon_rows(spec, horizon: Horizon, rng: RngPolicy, idx: np.ndarray, t_trunc: float | None):
    if isinstance(horizon, Infinite):
        T = default_truncation(spec) if t_trunc is None else t_trunc
        return np.full(idx.size, float(T)), False
    if isinstance(horizon, FixedSteps):
        return np.full(idx.size, float(horizon.T)), False
    if isinstance(horizon, ExponentialKill):
        if not isinstance(spec, GbmSpec):
            raise ModelError("exponential killing is implemented for GBM only")
        zeta = np.array([sample_kill_time(horizon.beta, rng.generator(int(i), "kill")) for i in idx])
        return zeta, True
    raise TypeError(f"unknown horizon {horizon!r}")


def simulate_batch(
    spec: Model,
    horizon: Horizon,
    n: int,
    rng: RngPolicy,
    path_index,
    bridge: bool = True,
    tail: bool = True,
    t_trunc: float | None = None,
) -> PathBatch:
    """Paths for an explicit array of indices (GBM or drifted BM).

    ``tail`` only applies to the infinite horizon.
    """
    if isinstance(spec, LevySpec):
        raise TypeError("Lévy paths live on per-path grids; use simulate_levy")
    idx = _indices(path_index)
    if isinstance(horizon, FixedSteps):
        n = horizon.n
    lengths, killed = _horizon_rows(spec, horizon, rng, idx, t_trunc)
    if isinstance(spec, GbmSpec):
        logz, dt = _gbm_rows(spec, lengths, n, rng, idx)
        values = np.exp(logz)
    else:
        values, dt = _bm_rows(spec, lengths, n, rng, idx)
    unit = np.linspace(0.0, 1.0, n + 1)
    times = unit * lengths[:, None] if killed else np.linspace(0.0, lengths[0], n + 1)
    segmax = None
    mode = GRID_ONLY
    if bridge:
        u = _open_uniforms(rng, idx, n, "bridge")
        seg_dt = np.diff(times, axis=-1)
        if seg_dt.ndim == 1:
            seg_dt = np.broadcast_to(seg_dt, u.shape)
        segmax = _segment_max(values[:, :-1], values[:, 1:], seg_dt, spec.sigma, _on_log_scale(spec), u)
        mode = BRIDGE
    tail_sup = None
    if tail and isinstance(horizon, Infinite):
        if not bridge:
            raise ValueError("the exact tail is only meaningful on top of bridge-corrected segments")
        tail_sup = _tail_draw(spec, values[:, -1], rng, idx, tail_exponent(spec))
        mode = EXACT_TAIL
    return PathBatch(times, values, segmax, tail_sup, idx, mode, rng.master_seed, killed)


class SupSample(NamedTuple):
    sup: np.ndarray
    terminal: np.ndarray


def terminal_level(spec: Model, horizon: Horizon, last: np.ndarray) -> np.ndarray:
    """``Z_zeta``: 0 for GBM at infinity or after killing, -inf for drifted BM at infinity."""
    if isinstance(horizon, FixedSteps):
        return last
    if isinstance(spec, DriftedBmSpec):
        return np.full_like(last, -np.inf)
    return np.zeros_like(last)


def _levy_sup_rows(spec: LevySpec, horizon: Horizon, n: int, rng: RngPolicy, idx, t_trunc, exponent):
    if isinstance(horizon, ExponentialKill):
        raise ModelError("exponential killing is implemented for GBM only")
    T = horizon.T if isinstance(horizon, FixedSteps) else (default_truncation(spec) if t_trunc is None else t_trunc)
    if isinstance(horizon, FixedSteps):
        n = horizon.n
    sups = np.empty(idx.size)
    last = np.empty(idx.size)
    for row, i in enumerate(idx):
        p = bridge_sup_correct(simulate_levy(spec, T, n, rng, int(i)), spec, rng)
        if isinstance(horizon, Infinite):
            p = augment_tail(p, spec, rng, exponent)
        sups[row] = p.total_sup
        last[row] = p.values[-1]
    return sups, last


def sample_suprema(
    spec: Model,
    horizon: Horizon,
    n_paths: int,
    n: int,
    rng: RngPolicy,
    start: int = 0,
    t_trunc: float | None = None,
    chunk: int = DEFAULT_CHUNK,
) -> SupSample:
    """Exact suprema over the horizon plus the terminal level, for paths
    ``start .. start+n_paths-1``. Chunks may run on threads; the result is
    ordered by path index regardless."""
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    exponent = tail_exponent(spec) if isinstance(horizon, Infinite) else None

    def work(a: int, b: int):
        idx = np.arange(a, b)
        if isinstance(spec, LevySpec):
            return _levy_sup_rows(spec, horizon, n, rng, idx, t_trunc, exponent)
        batch = simulate_batch(spec, horizon, n, rng, idx, t_trunc=t_trunc)
        return batch.total_sup(), batch.values[:, -1]

    parts = map_chunks(work, chunk_ranges(start, n_paths, chunk))
    sup = np.concatenate([p[0] for p in parts])
    last = np.concatenate([p[1] for p in parts])
    return SupSample(sup, terminal_level(spec, horizon, last))


def sample_levy_terminal(spec: LevySpec, T: float, n: int, n_paths: int, rng: RngPolicy, start: int = 0) -> np.ndarray:
    """``exp(X_T) = Z_T / x0`` for ``n_paths`` paths."""
    out = np.empty(n_paths)
    for row in range(n_paths):
        p = simulate_levy(spec, T, n, rng, start + row)
        out[row] = p.values[-1] / spec.x0
    return out


def write_paths_csv(paths, fh) -> None:
    """CSV with columns ``path,time,value,running_sup``."""
    fh.write("path,time,value,running_sup\n")
    for p in paths:
        for t, v, s in p.to_csv_rows():
            fh.write(f"{p.path_index},{t!r},{v!r},{s!r}\n")
