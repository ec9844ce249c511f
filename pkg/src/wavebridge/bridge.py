"""Data scaling, bridge marginal sampling and the x0-prediction objective."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional, Protocol, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .schedule import ScheduleParams, coefficients


class DegenerateInputError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


@dataclass
class WaveformPair:
    x_hr: np.ndarray
    x_lr: np.ndarray
    target_rate: int = 48000
    input_rate: int = 48000
    cutoff_hz: Optional[float] = None

    def __post_init__(self):
        self.x_hr = np.asarray(self.x_hr, dtype=float)
        self.x_lr = np.asarray(self.x_lr, dtype=float)
        if self.x_hr.shape != self.x_lr.shape:
            raise ValueError(f"pair lengths differ: {self.x_hr.shape} vs {self.x_lr.shape}")
        if self.input_rate > self.target_rate:
            raise ValueError("input rate exceeds target rate")
        if self.cutoff_hz is None:
            self.cutoff_hz = self.input_rate / 2
        if not 0 < self.cutoff_hz <= self.input_rate / 2:
            raise ValueError(f"cutoff {self.cutoff_hz} outside (0, {self.input_rate / 2}]")


def estimate_scale(pairs: Iterable[WaveformPair]) -> float:
    """``1 / sqrt(Var(x_lr - x_hr))`` pooled over every sample of every pair.

    Chunks are merged with the pairwise update of Chan et al., so the result
    does not depend on pair order or chunking beyond rounding.
    """
    n, mean, m2 = 0, 0.0, 0.0
    for pair in pairs:
        r = np.ravel(pair.x_lr - pair.x_hr)
        if r.size == 0:
            continue
        nb = r.size
        mb = float(r.mean())
        m2b = float(np.sum((r - mb) ** 2))
        delta = mb - mean
        tot = n + nb
        mean += delta * nb / tot
        m2 += m2b + delta * delta * n * nb / tot
        n = tot
    if n == 0:
        raise DegenerateInputError("no samples to estimate the scale factor from")
    var = m2 / n
    if not var > 0:
        raise DegenerateInputError("residual variance is zero; low- and high-resolution inputs are identical")
    return 1.0 / math.sqrt(var)


@dataclass
class BridgeSample:
    x_t: np.ndarray
    t: np.ndarray
    x0_scaled: np.ndarray
    xT_scaled: np.ndarray
    noise: np.ndarray


def sample_marginal(x0, xT, t, sched: ScheduleParams, rng: np.random.Generator,
                    scale: float = 1.0, noise: Optional[np.ndarray] = None) -> BridgeSample:
    """Draw x_t from the bridge marginal between ``scale * x0`` and ``scale * xT``.

    ``t`` may be a scalar or one time per row of a (batch, length) input.
    """
    x0 = np.asarray(x0, dtype=float)
    xT = np.asarray(xT, dtype=float)
    if x0.shape != xT.shape:
        raise ValueError(f"endpoint shapes differ: {x0.shape} vs {xT.shape}")
    if not (scale > 0 and math.isfinite(scale)):
        raise ValueError(f"scale must be positive and finite, got {scale}")
    t = np.asarray(t, dtype=float)
    co = coefficients(sched, t)
    shape = (-1,) + (1,) * (x0.ndim - 1) if t.ndim == 1 else ()
    a, b, c = (np.reshape(v, shape) for v in (co.a_t, co.b_t, co.c_t))
    if noise is None:
        noise = rng.standard_normal(x0.shape)
    x0s, xTs = scale * x0, scale * xT
    x_t = a * x0s + b * xTs + c * noise
    return BridgeSample(x_t, t, x0s, xTs, noise)


def sample_pair_marginal(pair: WaveformPair, scale: float, t: float, sched: ScheduleParams,
                         rng: np.random.Generator) -> BridgeSample:
    return sample_marginal(pair.x_hr, pair.x_lr, t, sched, rng, scale=scale)


def bridge_loss(pred_x0, x0_scaled):
    """Mean squared error between predicted and true scaled x0.

    Returns a float for arrays and a graph node when ``pred_x0`` is a ``Tensor``.
    """
    if np.shape(pred_x0) != np.shape(x0_scaled):
        raise ValueError(f"shape mismatch: {np.shape(pred_x0)} vs {np.shape(x0_scaled)}")
    if isinstance(pred_x0, ad.Tensor) or isinstance(x0_scaled, ad.Tensor):
        return ad.mean(ad.square(ad.sub(pred_x0, x0_scaled)))
    d = np.asarray(pred_x0, dtype=float) - np.asarray(x0_scaled, dtype=float)
    return float(np.mean(d * d))


class TrainableDenoiser(Protocol):
    params: Dict[str, np.ndarray]

    def tensors(self, requires_grad: bool = True, dtype=np.float64) -> Dict[str, ad.Tensor]: ...

    def forward(self, x_t, t, x_T, weights=None) -> ad.Tensor: ...


Objective = Callable[[ad.Tensor, np.ndarray], Tuple[ad.Tensor, Dict[str, float]]]


def bridge_objective(pred: ad.Tensor, x0_scaled: np.ndarray):
    loss = bridge_loss(pred, x0_scaled)
    return loss, {"bridge": float(loss.value)}


def stack_pairs(pairs: Sequence[WaveformPair]) -> Tuple[np.ndarray, np.ndarray]:
    return np.stack([p.x_hr for p in pairs]), np.stack([p.x_lr for p in pairs])


def training_step(x_hr: np.ndarray, x_lr: np.ndarray, scale: float, sched: ScheduleParams,
                  model: TrainableDenoiser, rng: np.random.Generator, t_min: float = 1e-5,
                  objective: Objective = bridge_objective, dtype=np.float64):
    """One stochastic evaluation of the training objective and its parameter gradients.

    ``x_hr`` and ``x_lr`` are (batch, length). Each item gets its own
    ``t ~ U(t_min, 1)``. Returns ``(loss, breakdown, grads)``.
    """
    x_hr = np.atleast_2d(x_hr)
    x_lr = np.atleast_2d(x_lr)
    t = rng.uniform(t_min, 1.0, size=x_hr.shape[0])
    smp = sample_marginal(x_hr, x_lr, t, sched, rng, scale=scale)
    weights = model.tensors(requires_grad=True, dtype=dtype)
    pred = model.forward(smp.x_t.astype(dtype), t, smp.xT_scaled.astype(dtype), weights)
    loss, breakdown = objective(pred, smp.x0_scaled.astype(dtype))
    value = float(loss.value)
    if not math.isfinite(value):
        norms = np.linalg.norm(smp.x_t, axis=-1)
        raise NumericalError(f"non-finite loss {value} at t={t.tolist()} with |x_t|={norms.tolist()}")
    ad.backward(loss)
    grads = {k: (np.zeros_like(w.value) if w.grad is None else np.asarray(w.grad, dtype=np.float64))
             for k, w in weights.items()}
    return value, breakdown, grads
