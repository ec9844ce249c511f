"""x0-predictors: the denoiser interface, an exact Gaussian oracle and a tiny WaveNet."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np

from . import autodiff as ad
from .schedule import ScheduleParams, coefficients

TimeLike = Union[float, np.ndarray]


@runtime_checkable
class Denoiser(Protocol):
    def predict(self, x_t: np.ndarray, t: TimeLike, x_T: np.ndarray) -> np.ndarray:
        """Estimate x0 from the noised state ``x_t`` at time ``t`` and the prior ``x_T``."""
        ...


def analytic_predict(x_t, t, x_T, v_h: float, coeffs, mean_h: float = 0.0):
    """Posterior mean E[x0 | x_t, x_T] for the toy model x0 = x_T + h, h ~ N(mean_h, v_h).

    ``coeffs`` are the bridge coefficients at ``t``. Applied coordinatewise.
    """
    if v_h <= 0:
        raise ValueError("v_h must be positive")
    a, b = coeffs.a_t, coeffs.b_t
    x_t = np.asarray(x_t, dtype=float)
    x_T = np.asarray(x_T, dtype=float)
    prior = x_T + mean_h
    # a v / (a^2 v + c^2) with the common factor alpha_t * sigma_bar_t^2 cancelled
    gain = v_h / (coeffs.alpha_t * (coeffs.sigma_bar2_t * v_h / coeffs.sigma2_1 + coeffs.sigma2_t))
    return prior + gain * (x_t - a * prior - b * x_T)


@dataclass
class AnalyticGaussianDenoiser:
    """Exact x0-predictor for the coordinatewise Gaussian toy model.

    ``calls`` counts evaluations so samplers' NFE can be audited.
    """

    v_h: float
    schedule: ScheduleParams
    mean_h: float = 0.0
    calls: int = 0

    def __post_init__(self):
        if not self.v_h > 0:
            raise ValueError("v_h must be positive")

    def predict(self, x_t, t, x_T):
        self.calls += 1
        return analytic_predict(x_t, t, x_T, self.v_h, coefficients(self.schedule, t), self.mean_h)

    def posterior(self, x_T):
        """Mean and variance of p(x0 | x_T)."""
        return np.asarray(x_T, dtype=float) + self.mean_h, self.v_h


class CountingDenoiser:
    """Wraps any denoiser and counts ``predict`` calls."""

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self.calls = 0

    def predict(self, x_t, t, x_T):
        self.calls += 1
        return self.inner.predict(x_t, t, x_T)


def time_embedding(t, dim: int = 64) -> np.ndarray:
    """Sinusoidal features of ``t`` at geometric frequencies from 1 to 1e4."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = np.geomspace(1.0, 1e4, dim // 2)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@dataclass(frozen=True)
class WaveNetConfig:
    channels: int = 16
    dilations: Sequence[int] = (1, 2, 4, 8, 16, 32)
    kernel: int = 3
    embed_dim: int = 64

    @property
    def layers(self) -> int:
        return len(self.dilations)

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel - 1) * int(np.sum(self.dilations))

    def parameter_count(self) -> int:
        C, E, K, n = self.channels, self.embed_dim, self.kernel, self.layers
        inp = 2 * C + C
        embed = E * E + E
        per_layer = (C * 2 * C * K + 2 * C) + (E * 2 * C + 2 * C) + (C * 2 * C + 2 * C)
        out = (C * C + C) + (C + 1)
        return inp + embed + n * per_layer + out


class TinyWaveNet:
    """Dilated gated-convolution x0-predictor.

    Inputs ``x_t`` and ``x_T`` enter as two channels; ``t`` enters through a
    sinusoidal embedding mapped to a per-layer bias. The network output is a
    residual added to ``x_T``, so a zero output projection predicts ``x_T``.
    """

    def __init__(self, config: WaveNetConfig = WaveNetConfig(), seed: int = 0,
                 params: Optional[Dict[str, np.ndarray]] = None):
        self.config = config
        self.params = self.init_params(config, seed) if params is None else {
            k: np.asarray(v, dtype=np.float64) for k, v in params.items()
        }
        expected = set(self.init_params(config, 0))
        if set(self.params) != expected:
            raise ValueError(f"parameter names mismatch: {sorted(set(self.params) ^ expected)}")

    @staticmethod
    def init_params(config: WaveNetConfig, seed: int) -> Dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        C, E, K = config.channels, config.embed_dim, config.kernel

        def dense(shape, fan_in):
            return rng.normal(scale=1.0 / math.sqrt(fan_in), size=shape)

        p = {
            "in.w": dense((C, 2, 1), 2),
            "in.b": np.zeros(C),
            "embed.w": dense((E, E), E),
            "embed.b": np.zeros(E),
        }
        for i in range(config.layers):
            p[f"layer{i}.dil.w"] = dense((2 * C, C, K), C * K)
            p[f"layer{i}.dil.b"] = np.zeros(2 * C)
            p[f"layer{i}.time.w"] = dense((2 * C, E), E)
            p[f"layer{i}.time.b"] = np.zeros(2 * C)
            p[f"layer{i}.out.w"] = dense((2 * C, C, 1), C)
            p[f"layer{i}.out.b"] = np.zeros(2 * C)
        p["skip.w"] = dense((C, C, 1), C)
        p["skip.b"] = np.zeros(C)
        p["final.w"] = np.zeros((1, C, 1))
        p["final.b"] = np.zeros(1)
        return p

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def tensors(self, requires_grad: bool = True, dtype=np.float64) -> Dict[str, ad.Tensor]:
        return {k: ad.Tensor(v.astype(dtype, copy=False), requires_grad=requires_grad, name=k)
                for k, v in self.params.items()}

    def forward(self, x_t, t, x_T, weights: Optional[Dict[str, ad.Tensor]] = None) -> ad.Tensor:
        """Graph-building forward pass on (batch, length) inputs; returns (batch, length)."""
        w = self.tensors(requires_grad=False) if weights is None else weights
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite parameter {k}")
        dtype = w["in.w"].value.dtype
        x_t = np.atleast_2d(np.asarray(x_t, dtype=dtype))
        x_T = np.atleast_2d(np.asarray(x_T, dtype=dtype))
        if x_t.shape != x_T.shape:
            raise ValueError(f"x_t {x_t.shape} and x_T {x_T.shape} differ")
        batch = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))

        C = self.config.channels
        h = ad.conv1d(np.stack([x_t, x_T], axis=1), w["in.w"], w["in.b"])
        feats = time_embedding(t, self.config.embed_dim).astype(dtype)
        emb = ad.tanh(ad.affine(feats, w["embed.w"], w["embed.b"]))
        skip = None
        for i, d in enumerate(self.config.dilations):
            z = ad.conv1d(h, w[f"layer{i}.dil.w"], w[f"layer{i}.dil.b"], dilation=d)
            tb = ad.affine(emb, w[f"layer{i}.time.w"], w[f"layer{i}.time.b"])
            z = z + ad.reshape(tb, (batch, 2 * C, 1))
            gated = ad.tanh(z[:, :C]) * ad.sigmoid(z[:, C:])
            o = ad.conv1d(gated, w[f"layer{i}.out.w"], w[f"layer{i}.out.b"])
            h = (h + o[:, :C]) * math.sqrt(0.5)
            skip = o[:, C:] if skip is None else skip + o[:, C:]
        s = ad.tanh(ad.conv1d(skip * (1.0 / math.sqrt(self.config.layers)), w["skip.w"], w["skip.b"]))
        out = ad.conv1d(s, w["final.w"], w["final.b"])
        return ad.reshape(out, (batch, -1)) + x_T

    def predict(self, x_t, t, x_T):
        x_t = np.asarray(x_t, dtype=np.float64)
        squeeze = x_t.ndim == 1
        out = self.forward(x_t, t, x_T).value
        return out[0] if squeeze else out
