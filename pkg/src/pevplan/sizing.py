"""Closed-form service-level sizing of a fast-charging station.

A station serving Poisson arrival streams of several vehicle classes
needs enough charging spots that an arriving vehicle gets its full
charge without waiting with probability at least ``alpha``.  The
normal approximation of the compound Poisson demand turns this into

    spots >= sum(T_k * lam_k) + z_alpha * sqrt(sum(T_k * lam_k))

which is the closed form used throughout the planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence


@dataclass(frozen=True)
class ChargeClass:
    """One vehicle class at a station: charge duration and arrival rate."""

    charge_hours: float
    rate_per_hour: float

    def __post_init__(self):
        if self.charge_hours <= 0:
            raise ValueError(f"charge duration must be positive, got {self.charge_hours}")
        if self.rate_per_hour < 0:
            raise ValueError(f"arrival rate must be non-negative, got {self.rate_per_hour}")

    @property
    def workload(self) -> float:
        """Expected spot-hours per hour contributed by this class."""
        return self.charge_hours * self.rate_per_hour


@dataclass(frozen=True)
class SizingResult:
    mean_load: float
    safety_stock: float
    spots_real: float
    spots: int  # ceiling of spots_real

    def __post_init__(self):
        if self.spots_real < self.mean_load - 1e-12:
            raise ValueError("required spots cannot be below the mean load")


def charge_time(range_km: float, kwh_per_km: float, spot_kw: float, efficiency: float) -> float:
    """Hours to recharge a depleted battery of the given range at one spot."""
    if spot_kw <= 0:
        raise ValueError("spot power must be positive")
    if not 0 < efficiency <= 1:
        raise ValueError("efficiency must be in (0, 1]")
    if range_km < 0 or kwh_per_km < 0:
        raise ValueError("range and energy rate must be non-negative")
    return range_km * kwh_per_km / (spot_kw * efficiency)


# Coefficients of Acklam's rational approximation to the standard normal
# quantile, used as the starting point before Newton refinement.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def std_normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _acklam(p: float) -> float:
    plow, phigh = 0.02425, 1 - 0.02425
    if p < plow:
        q = math.sqrt(-2 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    if p > phigh:
        return -_acklam(1 - p)
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1))


def inv_std_normal(alpha: float) -> float:
    """Standard normal quantile, accurate to |CDF(z) - alpha| <= 1e-10.

    Rational approximation refined by Newton steps on the erfc-based CDF,
    with a bisection fallback if Newton ever leaves its bracket.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly in (0, 1), got {alpha}")
    if alpha == 0.5:
        return 0.0
    z = _acklam(alpha)
    lo, hi = z - 1e-3, z + 1e-3
    while std_normal_cdf(lo) > alpha:
        lo -= 0.1
    while std_normal_cdf(hi) < alpha:
        hi += 0.1
    for _ in range(60):
        f = std_normal_cdf(z) - alpha
        if abs(f) <= 1e-12:
            break
        pdf = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        if pdf > 0:
            step = f / pdf
            znew = z - step
        else:
            znew = lo  # force bisection
        if not lo <= znew <= hi:
            znew = 0.5 * (lo + hi)
        if std_normal_cdf(znew) > alpha:
            hi = znew
        else:
            lo = znew
        if abs(znew - z) < 1e-14:
            z = znew
            break
        z = znew
    return z


def required_spots(classes: Sequence[ChargeClass], alpha: float) -> SizingResult:
    """Spots needed so the service-level criterion ``alpha`` is met.

    ``alpha`` below 0.5 is rejected: it would make the safety stock
    negative, which the sizing model is not meant to express.
    """
    if not 0.5 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0.5, 1), got {alpha}")
    mean = sum(c.workload for c in classes)
    if mean == 0.0:
        return SizingResult(0.0, 0.0, 0.0, 0)
    safety = inv_std_normal(alpha) * math.sqrt(mean)
    real = mean + safety
    return SizingResult(mean, safety, real, math.ceil(real - 1e-9))


@dataclass(frozen=True)
class SizingCone:
    """Second-order-cone form of the sizing bound over binary charge choices.

    For choice variables g_j with workload coefficients c_j >= 0 the bound

        y >= sum(c_j g_j) + z_alpha * sqrt(sum(c_j g_j))

    is equivalent, on binary g (g_j^2 = g_j), to

        y >= c . g + z_alpha * || diag(sqrt(c)) g ||_2

    which is what the planner emits.  ``coefficients`` are the c_j.
    """

    coefficients: tuple[float, ...]
    z_alpha: float
    sqrt_coefficients: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if any(c < 0 for c in self.coefficients):
            raise ValueError("sizing coefficients must be non-negative")
        object.__setattr__(self, "sqrt_coefficients",
                           tuple(math.sqrt(c) for c in self.coefficients))

    def bound_sqrt_form(self, g: Sequence[float]) -> float:
        """Original bound: linear term plus z*sqrt(linear term)."""
        lin = sum(c * gj for c, gj in zip(self.coefficients, g, strict=True))
        return lin + self.z_alpha * math.sqrt(max(lin, 0.0))

    def bound_cone_form(self, g: Sequence[float]) -> float:
        """Cone reformulation: linear term plus z*||diag(sqrt(c)) g||."""
        lin = sum(c * gj for c, gj in zip(self.coefficients, g, strict=True))
        nrm = math.sqrt(sum((s * gj) ** 2
                            for s, gj in zip(self.sqrt_coefficients, g, strict=True)))
        return lin + self.z_alpha * nrm


def soc_sizing_block(coefficients: Sequence[float], alpha: float) -> SizingCone:
    """Build the cone descriptor for one station/hour sizing constraint."""
    if not 0.5 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0.5, 1), got {alpha}")
    return SizingCone(tuple(coefficients), inv_std_normal(alpha))
