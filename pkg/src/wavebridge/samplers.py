"""Reverse-time samplers for the bridge: first-order ODE/SDE steps, a Heun-style
second-order SDE step, grid construction and the sampling loop."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .bridge import NumericalError
from .schedule import BridgeCoefficients, ScheduleParams, coefficients


class SamplerKind(str, enum.Enum):
    ODE1 = "ode1"
    SDE1 = "sde1"
    SDE2 = "sde2"

    @property
    def evals_per_step(self) -> int:
        return 2 if self is SamplerKind.SDE2 else 1


@dataclass(frozen=True)
class InferenceGrid:
    times: Tuple[float, ...]
    kind: SamplerKind = SamplerKind.ODE1

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "kind", SamplerKind(self.kind))
        if len(times) < 2:
            raise ValueError("a grid needs at least two times")
        if any(not (0.0 < t <= 1.0) for t in times):
            raise ValueError(f"grid times must lie in (0, 1]: {times}")
        if any(b >= a for a, b in zip(times, times[1:])):
            raise ValueError(f"grid must be strictly descending: {times}")

    @property
    def nfe(self) -> int:
        return (len(self.times) - 1) * self.kind.evals_per_step


def linear_grid(n_points: int, t_min: float = 1e-5, t_max: float = 1.0,
                kind: SamplerKind = SamplerKind.ODE1) -> InferenceGrid:
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    if not (0.0 < t_min < t_max <= 1.0):
        raise ValueError(f"need 0 < t_min < t_max <= 1, got ({t_min}, {t_max})")
    return InferenceGrid(tuple(np.linspace(t_max, t_min, n_points)), kind)


PRESETS = {
    4: ((1.0, 0.5, 0.08), SamplerKind.SDE2),
    2: ((1.0, 0.9, 0.03), SamplerKind.ODE1),
    1: ((1.0, 0.04), SamplerKind.ODE1),
}


def preset_grid(nfe: int) -> InferenceGrid:
    """Few-step grids for 4, 2 and 1 denoiser evaluations."""
    if nfe not in PRESETS:
        raise ValueError(f"no preset for nfe={nfe}; choose from {sorted(PRESETS)}")
    times, kind = PRESETS[nfe]
    return InferenceGrid(times, kind)


def _check_order(co_t: BridgeCoefficients, co_s: BridgeCoefficients):
    if not co_s.t < co_t.t:
        raise ValueError(f"next time {co_s.t} must be below current time {co_t.t}")


def ode_coefficients(co_t: BridgeCoefficients, co_s: BridgeCoefficients) -> Tuple[float, float, float]:
    """Weights on (x_t, x0_hat, xT) of the first-order probability-flow update.

    Written as ``x_s = mean_s + (c_s / c_t) (x_t - mean_t)``; at ``t = 1`` the
    state sits exactly on the mean, so the ratio term is dropped.
    """
    r = co_s.c_t / co_t.c_t if co_t.c_t > 0 else 0.0
    return r, co_s.a_t - r * co_t.a_t, co_s.b_t - r * co_t.b_t


def ode_step(x_t, x0_hat, xT, co_t: BridgeCoefficients, co_s: BridgeCoefficients):
    _check_order(co_t, co_s)
    w_x, w_0, w_T = ode_coefficients(co_t, co_s)
    return w_x * x_t + w_0 * x0_hat + w_T * xT


def sde_coefficients(co_t: BridgeCoefficients, co_s: BridgeCoefficients) -> Tuple[float, float, float]:
    """Weights on (x_t, x0_hat, noise) of the posterior bridge-kernel update."""
    ratio = co_s.sigma2_t / co_t.sigma2_t
    w_x = co_s.alpha_t * ratio / co_t.alpha_t
    w_0 = co_s.alpha_t * (1.0 - ratio)
    w_n = co_s.alpha_t * math.sqrt(co_s.sigma2_t) * math.sqrt(max(1.0 - ratio, 0.0))
    return w_x, w_0, w_n


def sde_step(x_t, x0_hat, co_t: BridgeCoefficients, co_s: BridgeCoefficients, noise):
    _check_order(co_t, co_s)
    w_x, w_0, w_n = sde_coefficients(co_t, co_s)
    return w_x * x_t + w_0 * x0_hat + w_n * noise


def sde2_step(x_t, xT, denoiser, co_t: BridgeCoefficients, co_s: BridgeCoefficients, noise,
              x0_hat: Optional[np.ndarray] = None):
    """Heun-style step: predict with x0(x_t, t), then redo the step from x_t with
    the average of x0(x_t, t) and x0(x_pred, s), reusing the same noise."""
    _check_order(co_t, co_s)
    if x0_hat is None:
        x0_hat = denoiser.predict(x_t, co_t.t, xT)
    x_pred = sde_step(x_t, x0_hat, co_t, co_s, noise)
    x0_next = denoiser.predict(x_pred, co_s.t, xT)
    return sde_step(x_t, 0.5 * (x0_hat + x0_next), co_t, co_s, noise)


def run_grid(denoiser, xT, grid: InferenceGrid, sched: ScheduleParams,
             rng: Optional[np.random.Generator] = None, x_start=None, noise_fn=None):
    """Integrate from ``grid.times[0]`` to ``grid.times[-1]`` in the scaled domain.

    Starts at ``xT`` unless ``x_start`` is given. ``noise_fn(shape)`` overrides
    the standard-normal draws of stochastic kinds.
    """
    xT = np.asarray(xT, dtype=float)
    x = xT.copy() if x_start is None else np.asarray(x_start, dtype=float).copy()
    kind = grid.kind
    if kind is not SamplerKind.ODE1 and rng is None and noise_fn is None:
        raise ValueError("stochastic samplers need an rng")
    draw = noise_fn or (lambda shape: rng.standard_normal(shape))
    coeffs = [coefficients(sched, t) for t in grid.times]
    for i, (co_t, co_s) in enumerate(zip(coeffs, coeffs[1:])):
        if kind is SamplerKind.ODE1:
            x = ode_step(x, denoiser.predict(x, co_t.t, xT), xT, co_t, co_s)
        elif kind is SamplerKind.SDE1:
            x = sde_step(x, denoiser.predict(x, co_t.t, xT), co_t, co_s, draw(x.shape))
        else:
            x = sde2_step(x, xT, denoiser, co_t, co_s, draw(x.shape))
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state after step {i} (t={co_t.t} -> {co_s.t})")
    return x


def sample(denoiser, x_lr, scale: float, grid: InferenceGrid, sched: ScheduleParams,
           rng: Optional[np.random.Generator] = None):
    """Super-resolve ``x_lr`` (already at the target rate); returns the unscaled estimate.

    The output is the state at the last grid time; no extra denoiser call is made.
    """
    if not (scale > 0 and math.isfinite(scale)):
        raise ValueError(f"scale must be positive and finite, got {scale}")
    xT = scale * np.asarray(x_lr, dtype=float)
    return run_grid(denoiser, xT, grid, sched, rng) / scale


def grid_from_options(steps: Optional[int] = None, preset: Optional[int] = None,
                      sampler: Optional[str] = None, t_min: float = 1e-5) -> InferenceGrid:
    """Resolve ``--steps N`` / ``--preset K`` style options into a grid."""
    if (steps is None) == (preset is None):
        raise ValueError("give exactly one of steps or preset")
    if preset is not None:
        grid = preset_grid(preset)
        if sampler is not None and SamplerKind(sampler) is not grid.kind:
            raise ValueError(f"preset {preset} uses sampler {grid.kind.value}")
        return grid
    return linear_grid(steps + 1, t_min, 1.0, SamplerKind(sampler or "ode1"))

