"""Objective evaluation: log-spectral distance (full, low and high band), SI-SNR and spectrogram SSIM."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np
from skimage.metrics import structural_similarity

from .dsp import STFTConfig, stft

POWER_FLOOR = 1e-8
SI_SNR_CAP = 100.0
METRIC_STFT = STFTConfig(2048, 512)


def _check_pair(est, ref):
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    return est, ref


def log_power(x, cfg: STFTConfig = METRIC_STFT) -> np.ndarray:
    return np.log10(np.maximum(np.abs(stft(x, cfg)) ** 2, POWER_FLOOR))


def cutoff_bin(cutoff_hz: float, rate: float, cfg: STFTConfig = METRIC_STFT) -> int:
    """Index of the first bin whose centre frequency is at or above the cutoff."""
    return int(math.ceil(cutoff_hz * cfg.fft_size / rate - 1e-9))


def _band(band: str, cutoff_hz: Optional[float], rate: float, cfg: STFTConfig) -> slice:
    if band == "full":
        return slice(None)
    if band not in ("lf", "hf"):
        raise ValueError(f"band must be full, lf or hf, got {band!r}")
    if cutoff_hz is None:
        raise ValueError("banded LSD needs a cutoff")
    if not 0 < cutoff_hz <= rate / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, {rate / 2}]")
    k = cutoff_bin(cutoff_hz, rate, cfg)
    if not 0 < k < cfg.bins:
        raise ValueError(f"cutoff {cutoff_hz} Hz leaves an empty band")
    return slice(None, k) if band == "lf" else slice(k, None)


def lsd_frames(est, ref, band: str = "full", cutoff_hz: Optional[float] = None, rate: float = 48000,
               cfg: STFTConfig = METRIC_STFT) -> np.ndarray:
    """Per-frame log-spectral distance restricted to ``band``."""
    est, ref = _check_pair(est, ref)
    sel = _band(band, cutoff_hz, rate, cfg)
    diff = (log_power(est, cfg) - log_power(ref, cfg))[:, sel]
    return np.sqrt(np.mean(diff**2, axis=1))


def lsd(est, ref, band: str = "full", cutoff_hz: Optional[float] = None, rate: float = 48000,
        cfg: STFTConfig = METRIC_STFT) -> float:
    return float(np.mean(lsd_frames(est, ref, band, cutoff_hz, rate, cfg)))


def si_snr(est, ref) -> float:
    """Scale-invariant SNR in dB, capped at +100 dB."""
    est, ref = _check_pair(est, ref)
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0:
        raise ValueError("reference signal is all zero")
    target = (np.dot(est, ref) / ref_energy) * ref
    resid = est - target
    num, den = float(np.dot(target, target)), float(np.dot(resid, resid))
    if den <= num * 10 ** (-SI_SNR_CAP / 10):
        return SI_SNR_CAP
    return min(10 * math.log10(num / den), SI_SNR_CAP)


def ssim_spec(est, ref, cfg: STFTConfig = METRIC_STFT) -> float:
    """SSIM (7x7 uniform window) of jointly min-max normalised log-power spectrograms."""
    est, ref = _check_pair(est, ref)
    a, b = log_power(est, cfg), log_power(ref, cfg)
    lo = min(a.min(), b.min())
    span = max(a.max(), b.max()) - lo
    if span == 0:
        return 1.0
    span = max(span, 1e-6)
    a, b = (a - lo) / span, (b - lo) / span
    return float(structural_similarity(a, b, win_size=7, data_range=1.0, gaussian_weights=False,
                                       use_sample_covariance=False, K1=0.01, K2=0.03))


@dataclass
class MetricsReport:
    lsd: float
    lsd_lf: float
    lsd_hf: float
    si_snr: float
    ssim: float
    cutoff_hz: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def evaluate_pair(est, ref, cutoff_hz: float, rate: float = 48000, cfg: STFTConfig = METRIC_STFT) -> MetricsReport:
    est, ref = _check_pair(est, ref)
    report = MetricsReport(
        lsd=lsd(est, ref, "full", None, rate, cfg),
        lsd_lf=lsd(est, ref, "lf", cutoff_hz, rate, cfg),
        lsd_hf=lsd(est, ref, "hf", cutoff_hz, rate, cfg),
        si_snr=si_snr(est, ref),
        ssim=ssim_spec(est, ref, cfg),
        cutoff_hz=float(cutoff_hz),
    )
    bad = [k for k, v in asdict(report).items() if not math.isfinite(v)]
    if bad:
        raise FloatingPointError(f"non-finite metrics: {bad}")
    return report


AGGREGATE_FIELDS = ("lsd", "lsd_lf", "lsd_hf", "si_snr", "ssim", "n")


def aggregate(reports: Iterable[MetricsReport]) -> dict:
    """Arithmetic mean of each metric over utterances."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    out = {k: float(np.mean([getattr(r, k) for r in reports])) for k in AGGREGATE_FIELDS[:-1]}
    out["n"] = len(reports)
    return out
