"""Auxiliary fine-tuning losses: multi-resolution STFT magnitude and anti-wrapping phase terms."""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy import signal

from . import autodiff as ad
from .bridge import bridge_loss
from .dsp import STFTConfig

LOG_EPS = 1e-7
PHASE_MASK = 1e-8


@dataclass(frozen=True)
class AuxLossConfig:
    resolutions: Tuple[int, ...] = (512, 1024, 2048)
    lambda_mag: float = 4e-6
    lambda_phase: float = 5e-6
    a_weighting: bool = True
    sample_rate: int = 48000
    fir_taps: int = 129

    def __post_init__(self):
        object.__setattr__(self, "resolutions", tuple(int(r) for r in self.resolutions))
        if not self.resolutions:
            raise ValueError("at least one STFT resolution is required")
        if self.lambda_mag < 0 or self.lambda_phase < 0:
            raise ValueError("loss weights must be non-negative")
        if self.fir_taps % 2 == 0:
            raise ValueError("the weighting FIR needs an odd number of taps")

    @property
    def stft_configs(self):
        return [STFTConfig(n) for n in self.resolutions]


def anti_wrap(x):
    """``|x - 2 pi round(x / 2 pi)|``: distance to the nearest multiple of 2 pi."""
    x = np.asarray(x, dtype=float)
    return np.abs(x - 2 * np.pi * np.round(x / (2 * np.pi)))


def a_weighting_gain(freqs) -> np.ndarray:
    """Analog A-weighting magnitude, normalised to 1 at 1 kHz."""
    f2 = np.asarray(freqs, dtype=float) ** 2

    def ra(f2):
        num = 12194.0**2 * f2**2
        den = (f2 + 20.6**2) * np.sqrt((f2 + 107.7**2) * (f2 + 737.9**2)) * (f2 + 12194.0**2)
        return num / den

    return ra(f2) / ra(1000.0**2)


@functools.lru_cache(maxsize=8)
def a_weighting_fir(sample_rate: int = 48000, taps: int = 129) -> np.ndarray:
    freqs = np.linspace(0, sample_rate / 2, 512)
    return signal.firwin2(taps, freqs, a_weighting_gain(freqs), fs=sample_rate)


def _weight(x: ad.Tensor, cfg: AuxLossConfig) -> ad.Tensor:
    h = a_weighting_fir(cfg.sample_rate, cfg.fir_taps).astype(x.value.dtype)
    batch, length = x.shape
    # conv1d correlates; the A-weighting FIR is symmetric so that is a convolution too
    y = ad.conv1d(ad.reshape(x, (batch, 1, length)), h.reshape(1, 1, -1), np.zeros(1, dtype=h.dtype))
    return ad.reshape(y, (batch, length))


def _spectrum(x: ad.Tensor, stft_cfg: STFTConfig):
    spec = ad.stft(x, stft_cfg.fft_size, stft_cfg.hop, stft_cfg.window.astype(x.value.dtype))
    return spec[..., 0], spec[..., 1]


def _as_batch(x) -> ad.Tensor:
    x = ad.constant(x)
    return x if x.ndim == 2 else ad.reshape(x, (1, -1))


def _check(pred, target, cfg: AuxLossConfig):
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    if pred.shape[-1] < max(cfg.resolutions):
        raise ValueError(f"signals of {pred.shape[-1]} samples are shorter than fft {max(cfg.resolutions)}")


def mag_loss(pred, target, cfg: AuxLossConfig = AuxLossConfig()) -> ad.Tensor:
    """Spectral convergence plus log-magnitude L1, summed over resolutions."""
    pred, target = _as_batch(pred), _as_batch(target)
    _check(pred, target, cfg)
    if cfg.a_weighting:
        pred, target = _weight(pred, cfg), _weight(target, cfg)
    total = None
    for sc in cfg.stft_configs:
        mp = ad.complex_abs(*_spectrum(pred, sc))
        mt = ad.complex_abs(*_spectrum(target, sc))
        conv = ad.sqrt(ad.sum(ad.square(mp - mt))) / max(float(np.sqrt(np.sum(mt.value**2))), 1e-12)
        logl1 = ad.mean(ad.absolute(ad.log(mp + LOG_EPS) - ad.log(mt + LOG_EPS)))
        term = conv + logl1
        total = term if total is None else total + term
    return total


def _masked_mean(values: ad.Tensor, mask: np.ndarray) -> ad.Tensor:
    count = int(mask.sum())
    if count == 0:
        return ad.constant(np.zeros((), dtype=values.value.dtype))
    return ad.sum(values * mask.astype(values.value.dtype)) / float(count)


def phase_loss(pred, target, cfg: AuxLossConfig = AuxLossConfig()) -> ad.Tensor:
    """Anti-wrapped instantaneous phase, group delay and instantaneous frequency errors.

    Bins where either spectrum is below 1e-8 in magnitude are left out, since the
    phase there is undefined and its gradient unbounded.
    """
    pred, target = _as_batch(pred), _as_batch(target)
    _check(pred, target, cfg)
    total = None
    for sc in cfg.stft_configs:
        re_p, im_p = _spectrum(pred, sc)
        re_t, im_t = _spectrum(target, sc)
        ph_p, ph_t = ad.atan2(im_p, re_p), ad.atan2(im_t, re_t)
        mask = (np.hypot(re_p.value, im_p.value) >= PHASE_MASK) & (np.hypot(re_t.value, im_t.value) >= PHASE_MASK)
        ip = _masked_mean(ad.anti_wrap(ph_p - ph_t), mask)
        # group delay: differences across frequency (last axis)
        gd_p = ph_p[..., 1:] - ph_p[..., :-1]
        gd_t = ph_t[..., 1:] - ph_t[..., :-1]
        gd = _masked_mean(ad.anti_wrap(gd_p - gd_t), mask[..., 1:] & mask[..., :-1])
        # instantaneous frequency: differences across frames
        if_p = ph_p[..., 1:, :] - ph_p[..., :-1, :]
        if_t = ph_t[..., 1:, :] - ph_t[..., :-1, :]
        inf = _masked_mean(ad.anti_wrap(if_p - if_t), mask[..., 1:, :] & mask[..., :-1, :])
        term = ip + gd + inf
        total = term if total is None else total + term
    return total


def final_loss(pred_x0, x0_scaled, scale: float, cfg: AuxLossConfig = AuxLossConfig()):
    """Bridge loss on the scaled signals plus weighted auxiliary terms on unscaled ones.

    Returns ``(total, breakdown)``; ``bridge + aux_mag + aux_phase`` is the total.
    """
    bridge = bridge_loss(ad.constant(pred_x0), x0_scaled)
    breakdown: Dict[str, float] = {"bridge": float(bridge.value)}
    total = bridge
    if cfg.lambda_mag == 0 and cfg.lambda_phase == 0:
        breakdown.update(mag=0.0, phase=0.0, aux_mag=0.0, aux_phase=0.0, total=float(total.value))
        return total, breakdown
    pred = ad.constant(pred_x0) * (1.0 / scale)
    target = np.asarray(x0_scaled, dtype=pred.value.dtype) * (1.0 / scale)
    mag = mag_loss(pred, target, cfg)
    phase = phase_loss(pred, target, cfg)
    aux_mag = mag * cfg.lambda_mag
    aux_phase = phase * cfg.lambda_phase
    total = total + aux_mag + aux_phase
    breakdown.update(mag=float(mag.value), phase=float(phase.value), aux_mag=float(aux_mag.value),
                     aux_phase=float(aux_phase.value), total=float(total.value))
    return total, breakdown


def make_final_objective(scale: float, cfg: AuxLossConfig = AuxLossConfig()):
    """Adapt ``final_loss`` to the ``(pred, x0_scaled) -> (loss, breakdown)`` training interface."""
    return lambda pred, x0_scaled: final_loss(pred, x0_scaled, scale, cfg)

