"""Model specifications and the exponents that drive the closed forms.

Every perpetual formula downstream is parameterized by a single exponent:
``gamma`` for geometric Brownian motion, ``delta`` once an independent
exponential horizon is added, and the positive root of the Laplace exponent
for spectrally negative exponential Lévy models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

MARTINGALE_TOL = 1e-10


class ModelError(ValueError):
    """Raised when a model is outside the region where a formula is valid."""


@dataclass(frozen=True)
class GbmSpec:
    """Geometric Brownian motion ``dZ/Z = -r dt + sigma dW``, ``Z_0 = x0``."""

    r: float
    sigma: float
    x0: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ModelError(f"sigma must be positive, got {self.sigma}")
        if not self.x0 > 0:
            raise ModelError(f"x0 must be positive, got {self.x0}")
        if self.r < 0:
            raise ModelError(f"r must be nonnegative for a supermartingale, got {self.r}")


@dataclass(frozen=True)
class DriftedBmSpec:
    """Arithmetic Brownian motion ``dZ = -mu dt + sigma dW``, ``Z_0 = z0``."""

    mu: float
    sigma: float
    z0: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ModelError(f"sigma must be positive, got {self.sigma}")
        if self.mu < 0:
            raise ModelError(f"mu must be nonnegative, got {self.mu}")


@dataclass(frozen=True)
class PointMassJump:
    """Jumps of fixed size ``y < 0`` arriving at ``rate``."""

    rate: float
    y: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ModelError(f"jump rate must be positive, got {self.rate}")
        if not self.y < 0:
            raise ModelError(f"jump size must be negative, got {self.y}")

    def mgf(self, lam: float) -> float:
        return math.exp(lam * self.y)

    def truncated_mean(self) -> float:
        # E[Y; -1 < Y < 0]
        return self.y if self.y > -1.0 else 0.0

    def sample(self, rng, size):
        return np.full(size, self.y)


@dataclass(frozen=True)
class ExponentialJump:
    """Jumps ``-E`` with ``E ~ Exp(theta)`` (mean size ``-1/theta``)."""

    rate: float
    theta: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ModelError(f"jump rate must be positive, got {self.rate}")
        if not self.theta > 0:
            raise ModelError(f"theta must be positive, got {self.theta}")

    def mgf(self, lam: float) -> float:
        # finite for every lam >= 0 because the jumps are negative
        return self.theta / (self.theta + lam)

    def truncated_mean(self) -> float:
        th = self.theta
        return -(-math.expm1(-th) - th * math.exp(-th)) / th

    def sample(self, rng, size):
        return -rng.exponential(1.0 / self.theta, size)


Jump = Union[PointMassJump, ExponentialJump]


@dataclass(frozen=True)
class LevySpec:
    """``Z = x0 exp(X)`` with ``X`` a finite-activity Lévy process without positive jumps.

    ``a`` is the drift in the truncated Lévy-Khintchine triplet, so the
    Laplace exponent reads ``a*lam + sigma^2 lam^2/2 + sum rate*(E e^{lam Y} - 1 - lam E[Y; -1<Y<0])``.
    """

    a: float
    sigma: float
    jumps: tuple = field(default_factory=tuple)
    r: float = 0.0
    x0: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ModelError(f"sigma must be nonnegative, got {self.sigma}")
        if self.r < 0:
            raise ModelError(f"r must be nonnegative, got {self.r}")
        if not self.x0 > 0:
            raise ModelError(f"x0 must be positive, got {self.x0}")
        object.__setattr__(self, "jumps", tuple(self.jumps))

    @property
    def total_rate(self) -> float:
        return sum(j.rate for j in self.jumps)

    @property
    def effective_drift(self) -> float:
        """Drift of the diffusion part once the small-jump compensator is folded in."""
        return self.a - sum(j.rate * j.truncated_mean() for j in self.jumps)

    @classmethod
    def martingale(cls, sigma: float, jumps: Sequence[Jump] = (), r: float = 0.0, x0: float = 1.0) -> "LevySpec":
        """Build the spec whose drift makes ``e^{rt} Z_t`` a martingale (``kappa(1) = -r``)."""
        jumps = tuple(jumps)
        jump_part = sum(j.rate * (j.mgf(1.0) - 1.0 - j.truncated_mean()) for j in jumps)
        a = -r - 0.5 * sigma**2 - jump_part
        return cls(a=a, sigma=sigma, jumps=jumps, r=r, x0=x0)


@dataclass(frozen=True)
class Infinite:
    pass


@dataclass(frozen=True)
class ExponentialKill:
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ModelError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class FixedSteps:
    T: float
    n: int

    def __post_init__(self):
        if not self.T > 0:
            raise ModelError(f"T must be positive, got {self.T}")
        if self.n < 1:
            raise ModelError(f"n must be >= 1, got {self.n}")


Horizon = Union[Infinite, ExponentialKill, FixedSteps]


def gamma_of(spec: GbmSpec) -> float:
    """Exponent making ``Z^gamma`` a martingale: ``1 + 2r/sigma^2``."""
    return 1.0 + 2.0 * spec.r / spec.sigma**2


def gamma_bm(spec: DriftedBmSpec) -> float:
    """Exponent making ``exp(gamma Z)`` a martingale for drifted BM: ``2 mu / sigma^2``."""
    return 2.0 * spec.mu / spec.sigma**2


def delta_from_gamma(gamma: float, beta: float, sigma: float) -> float:
    """Larger root of ``y^2 - gamma y - 2 beta / sigma^2 = 0``."""
    if beta < 0:
        raise ModelError(f"beta must be nonnegative, got {beta}")
    if beta == 0 and gamma <= 1:
        raise ModelError(
            f"gamma={gamma} <= 1 with no killing: the mean supremum is infinite"
        )
    return 0.5 * (gamma + math.sqrt(gamma * gamma + 8.0 * beta / sigma**2))


def delta_of(spec: GbmSpec, beta: float) -> float:
    return delta_from_gamma(gamma_of(spec), beta, spec.sigma)


def laplace_exponent(spec: LevySpec, lam: float) -> float:
    """``kappa(lam)`` with ``E exp(lam X_t) = exp(t kappa(lam))``, for ``lam >= 0``."""
    if lam < 0:
        raise ModelError(f"the Laplace exponent is defined for lam >= 0, got {lam}")
    if lam == 0:
        return 0.0
    val = spec.a * lam + 0.5 * spec.sigma**2 * lam * lam
    for j in spec.jumps:
        val += j.rate * (j.mgf(lam) - 1.0 - lam * j.truncated_mean())
    return val


def check_martingale_condition(spec: LevySpec, tol: float = MARTINGALE_TOL) -> tuple[bool, float]:
    """Return ``(passed, |kappa(1) + r|)``."""
    resid = abs(laplace_exponent(spec, 1.0) + spec.r)
    return resid <= tol, resid


def gamma_levy_root(spec: LevySpec, ceiling: float = 1e6) -> float:
    """Root of the Laplace exponent on ``(1, inf)`` by bracketing bisection."""
    k1 = laplace_exponent(spec, 1.0)
    if not k1 < 0:
        raise ModelError(f"need kappa(1) < 0 (r > 0) for a root above 1, got kappa(1)={k1}")
    lo, hi = 1.0 + 1e-9, 2.0
    if laplace_exponent(spec, lo) >= 0:
        raise ModelError("kappa is nonnegative just above 1; no root in (1, inf)")
    probes = []
    while laplace_exponent(spec, hi) <= 0:
        probes.append((hi, laplace_exponent(spec, hi)))
        lo = hi
        hi *= 2.0
        if hi > ceiling:
            raise ModelError(f"no sign change of kappa below {ceiling}; probes: {probes[-5:]}")
    scale = max(1.0, abs(spec.a), spec.sigma**2, spec.total_rate)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        k = laplace_exponent(spec, mid)
        if abs(k) <= 1e-15 * scale:
            return mid
        if k < 0:
            lo = mid
        else:
            hi = mid
    klo, khi = laplace_exponent(spec, lo), laplace_exponent(spec, hi)
    return lo if abs(klo) <= abs(khi) else hi
