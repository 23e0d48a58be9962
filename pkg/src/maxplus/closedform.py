"""Closed formulas for perpetual calls, suprema and the Max-Plus martingales.

All exponents enter through ``gamma`` (or ``delta`` under exponential
killing). Formulas that need a finite mean supremum refuse exponents <= 1
instead of returning infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .model import ModelError, delta_from_gamma


def _require_exponent(e: float, name: str = "gamma") -> None:
    if not e > 1:
        raise ModelError(
            f"{name}={e} <= 1: E[sup Z] is infinite, the perpetual formulas need a "
            "finite mean supremum"
        )


def _require_ordered(z: float, zstar: float) -> None:
    if z > zstar:
        raise ValueError(f"current level {z} exceeds running maximum {zstar}")


@dataclass(frozen=True)
class BoundarySpec:
    """Exercise-boundary constant.

    ``kind='multiplicative'``: ``constant`` is the mean supremum of the process
    started at 1, and the boundary is ``m * constant``.
    ``kind='additive'``: ``constant`` is the mean supremum of the process
    started at 0, and the boundary is ``m + constant``.
    """

    kind: str
    constant: float

    def __post_init__(self):
        if self.kind == "multiplicative":
            if not self.constant > 1:
                raise ModelError(f"multiplicative constant must exceed 1, got {self.constant}")
        elif self.kind == "additive":
            if self.constant < 0:
                raise ModelError(f"additive constant must be >= 0, got {self.constant}")
        else:
            raise ValueError(f"unknown boundary kind {self.kind!r}")

    @classmethod
    def multiplicative(cls, exponent: float) -> "BoundarySpec":
        _require_exponent(exponent)
        return cls("multiplicative", exponent / (exponent - 1.0))

    @classmethod
    def additive(cls, gamma: float) -> "BoundarySpec":
        if not gamma > 0:
            raise ModelError(f"gamma must be positive for drifted BM, got {gamma}")
        return cls("additive", 1.0 / gamma)

    @property
    def index_constant(self) -> float:
        """``b`` such that the index is ``b*Z`` (multiplicative) or ``Z - b`` (additive)."""
        if self.kind == "multiplicative":
            return 1.0 / self.constant
        return self.constant


def sup_tail(x: float, m: float, delta: float) -> float:
    """``P[sup Z >= m] = min(x/m, 1)^delta``."""
    if m <= x:
        return 1.0
    return math.exp(delta * math.log(x / m))


def sup_mean(x: float, delta: float) -> float:
    _require_exponent(delta, "delta")
    return delta / (delta - 1.0) * x


def lookback_call(x: float, m: float, delta: float) -> float:
    """``E[(sup Z - m)^+]`` for the GBM supremum law with exponent ``delta``."""
    _require_exponent(delta, "delta")
    if m >= x:
        return m / (delta - 1.0) * math.exp(delta * math.log(x / m))
    return delta / (delta - 1.0) * x - m


def american_call_gbm(z: float, m: float, gamma: float) -> float:
    """Perpetual American call (no discounting) on a supermartingale GBM."""
    _require_exponent(gamma)
    if (gamma - 1.0) / gamma * z <= m:
        log_val = (1.0 - gamma) * math.log(m / (gamma - 1.0)) + gamma * math.log(z / gamma)
        return math.exp(log_val)
    return z - m


def american_call_bm(z: float, m: float, gamma: float) -> float:
    """Perpetual American call on ``dZ = -mu dt + sigma dW`` with ``gamma = 2 mu / sigma^2``."""
    if not gamma > 0:
        raise ModelError(f"gamma must be positive, got {gamma}")
    b = 1.0 / gamma
    if z <= m + b:
        return b * math.exp(-gamma * (m + b - z))
    return z - m


def exercise_boundary(m: float, b: BoundarySpec) -> float:
    if b.kind == "multiplicative":
        return m * b.constant
    return m + b.constant


def index_constant_killed(gamma: float, beta: float, sigma: float) -> float:
    """``b_beta = (delta - 1) / delta``; reduces to ``(gamma - 1)/gamma`` at ``beta = 0``."""
    delta = delta_from_gamma(gamma, beta, sigma)
    _require_exponent(delta, "delta")
    return (delta - 1.0) / delta


def phi_gbm(z: float, zstar: float, gamma: float) -> float:
    """Max-Plus martingale of GBM as a function of ``(Z_t, Z*_t)``."""
    _require_ordered(z, zstar)
    _require_exponent(gamma)
    ratio = math.exp(gamma * math.log(z / zstar)) if z > 0 else 0.0
    return (gamma - 1.0) / gamma * zstar * (ratio / (gamma - 1.0) + 1.0)


def phi_bm(z: float, zstar: float, gamma: float) -> float:
    """Max-Plus martingale of drifted BM as a function of ``(Z_t, Z*_t)``."""
    _require_ordered(z, zstar)
    if not gamma > 0:
        raise ModelError(f"gamma must be positive, got {gamma}")
    return math.expm1(-gamma * (zstar - z)) / gamma + zstar


def phi_killed(z: float, zstar: float, delta: float) -> tuple[float, float]:
    """Value before the kill time and the jump of the martingale at the kill."""
    pre = phi_gbm(z, zstar, delta)
    jump = -(zstar / delta) * math.exp(delta * math.log(z / zstar))
    return pre, jump


def call_left_derivative(z: float, m: float, gamma: float) -> float:
    """Left derivative in the strike of the perpetual GBM call: ``-P[b Z* >= m]``."""
    _require_exponent(gamma)
    level = (gamma - 1.0) / gamma * z
    if m <= level:
        return -1.0
    return -math.exp(gamma * math.log(level / m))


def call_right_derivative(z: float, m: float, gamma: float) -> float:
    """Right derivative ``-P[b Z* > m]``; the GBM supremum law has no atom, so
    this agrees with the left derivative everywhere."""
    return call_left_derivative(z, m, gamma)


class DualPut(NamedTuple):
    spot: float
    strike: float
    scale: float
    boundary: float | None


def duality_transform(x: float, m: float, gamma: float | None = None) -> DualPut:
    """Map the call on ``Z`` (spot ``x``, strike ``m``) to the discounted put on ``Z^{-1}``.

    ``C(x, m) = scale * Put(spot, strike)`` with ``spot = 1/x``, ``strike = 1/m``
    and ``scale = m x``. With ``gamma`` given, the put's exercise boundary
    ``(gamma-1)/gamma / m`` is returned as well.
    """
    if not (x > 0 and m > 0):
        raise ValueError("duality needs x > 0 and m > 0")
    boundary = None
    if gamma is not None:
        _require_exponent(gamma)
        boundary = (gamma - 1.0) / gamma / m
    return DualPut(1.0 / x, 1.0 / m, m * x, boundary)
