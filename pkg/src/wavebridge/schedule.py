"""Noise schedules and closed-form bridge coefficients.

All schedules share the linear diffusion rate ``g^2(t) = (1 - t) * beta0 + t * beta1``
on the horizon ``t in [0, 1]``. ``gmax`` and ``gconst`` have no drift; ``vp`` uses
``f(t) = -g^2(t) / 2``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class ScheduleKind(str, enum.Enum):
    GMAX = "gmax"
    GCONST = "gconst"
    VP = "vp"

    @property
    def has_drift(self) -> bool:
        return self is ScheduleKind.VP


DEFAULT_BETAS = {
    ScheduleKind.GMAX: (8e-7, 8e-2),
    ScheduleKind.GCONST: (8e-2, 8e-2),
    ScheduleKind.VP: (0.01, 20.0),
}


@dataclass(frozen=True)
class ScheduleParams:
    kind: ScheduleKind
    beta0: float
    beta1: float

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        b0, b1 = float(self.beta0), float(self.beta1)
        if not (math.isfinite(b0) and math.isfinite(b1)) or b0 <= 0 or b1 <= 0:
            raise ValueError(f"betas must be positive and finite, got ({b0}, {b1})")
        if self.kind is ScheduleKind.GMAX and b1 < b0:
            raise ValueError("gmax requires beta1 >= beta0")
        if self.kind is ScheduleKind.GCONST and b0 != b1:
            raise ValueError("gconst requires beta0 == beta1")
        object.__setattr__(self, "beta0", b0)
        object.__setattr__(self, "beta1", b1)

    @classmethod
    def default(cls, kind: Union[ScheduleKind, str] = ScheduleKind.GMAX) -> "ScheduleParams":
        kind = ScheduleKind(kind)
        return cls(kind, *DEFAULT_BETAS[kind])

    def g2(self, t: ArrayLike) -> ArrayLike:
        return (1.0 - t) * self.beta0 + t * self.beta1

    def drift_rate(self, t: ArrayLike) -> ArrayLike:
        """Linear drift coefficient f(t); zero for the driftless schedules."""
        if self.kind.has_drift:
            return -0.5 * self.g2(t)
        return 0.0 * t

    def _g2_integral(self, t: ArrayLike) -> ArrayLike:
        # int_0^t g^2
        return self.beta0 * t + 0.5 * (self.beta1 - self.beta0) * t * t

    def sigma2(self, t: ArrayLike) -> ArrayLike:
        if self.kind.has_drift:
            return np.expm1(self._g2_integral(t))
        return self._g2_integral(t)

    def sigma_bar2(self, t: ArrayLike) -> ArrayLike:
        if self.kind.has_drift:
            return np.exp(self._g2_integral(1.0)) - np.exp(self._g2_integral(t))
        one_minus = 1.0 - t
        return self.beta0 * one_minus + 0.5 * (self.beta1 - self.beta0) * (1.0 - t * t)

    def alpha(self, t: ArrayLike) -> ArrayLike:
        if self.kind.has_drift:
            return np.exp(-0.5 * self._g2_integral(t))
        return 1.0 + 0.0 * t


@dataclass(frozen=True)
class BridgeCoefficients:
    """Schedule quantities at time ``t``.

    The marginal of the bridge pinned at ``x0`` (t=0) and ``xT`` (t=1) is
    ``N(a_t * x0 + b_t * xT, c_t**2)``. Fields are floats or arrays matching ``t``.
    """

    t: ArrayLike
    alpha_t: ArrayLike
    alpha_bar_t: ArrayLike
    sigma2_t: ArrayLike
    sigma_bar2_t: ArrayLike
    sigma2_1: float
    a_t: ArrayLike
    b_t: ArrayLike
    c_t: ArrayLike

    @property
    def sigma_t(self) -> ArrayLike:
        return np.sqrt(self.sigma2_t)

    @property
    def sigma_bar_t(self) -> ArrayLike:
        return np.sqrt(self.sigma_bar2_t)


def _check_time(t: ArrayLike) -> None:
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"time must lie in [0, 1], got {t!r}")


def coefficients(params: ScheduleParams, t: ArrayLike) -> BridgeCoefficients:
    """Closed-form bridge coefficients at ``t`` (scalar or array)."""
    _check_time(t)
    scalar = np.ndim(t) == 0
    t = float(t) if scalar else np.asarray(t, dtype=float)

    alpha_t = params.alpha(t)
    alpha_1 = float(params.alpha(1.0))
    alpha_bar_t = alpha_t / alpha_1
    s2 = params.sigma2(t)
    sb2 = params.sigma_bar2(t)
    s2_1 = float(params.sigma2(1.0))

    a = alpha_t * sb2 / s2_1
    b = alpha_bar_t * s2 / s2_1
    c = alpha_t * np.sqrt(s2 * sb2 / s2_1)

    if scalar:
        alpha_t, alpha_bar_t, s2, sb2, a, b, c = (
            float(v) for v in (alpha_t, alpha_bar_t, s2, sb2, a, b, c)
        )
    return BridgeCoefficients(t, alpha_t, alpha_bar_t, s2, sb2, s2_1, a, b, c)


def peak_time(params: ScheduleParams, tol: float = 1e-15) -> float:
    """Time at which the marginal variance peaks, i.e. ``2 sigma_t^2 = sigma_1^2``.

    Solved by bisection; ``sigma_t^2`` is strictly increasing for every kind.
    """
    target = float(params.sigma2(1.0))
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        h = 2.0 * float(params.sigma2(mid)) - target
        if h == 0.0:
            return mid
        if h < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mean_trajectory(
    params: ScheduleParams,
    x0: np.ndarray,
    xT: np.ndarray,
    grid: Sequence[float],
) -> np.ndarray:
    """Marginal means ``a_t * x0 + b_t * xT`` for every ``t`` in ``grid``.

    Returns an array of shape ``(len(grid), len(x0))``.
    """
    x0 = np.asarray(x0, dtype=float)
    xT = np.asarray(xT, dtype=float)
    if x0.shape != xT.shape:
        raise ValueError(f"endpoint shapes differ: {x0.shape} vs {xT.shape}")
    co = coefficients(params, np.asarray(grid, dtype=float))
    return co.a_t[:, None] * x0[None, :] + co.b_t[:, None] * xT[None, :]
