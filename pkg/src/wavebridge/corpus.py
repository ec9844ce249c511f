"""Synthetic harmonic corpus used as a stand-in for recorded speech."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .dsp import AudioBuffer


@dataclass(frozen=True)
class SynthConfig:
    rate: int = 48000
    duration: float = 0.7
    min_partials: int = 3
    max_partials: int = 8
    min_f0: float = 80.0
    max_f0: float = 1000.0
    max_freq: float = 20000.0
    decay: float = 1.0
    noise_floor: float = 1e-2
    peak: float = 0.5


def synth_utterance(rng: np.random.Generator, cfg: SynthConfig = SynthConfig()) -> AudioBuffer:
    """Sum of 3-8 random-phase partials, each with a harmonic series up to ``max_freq``.

    Harmonic k of a partial with phase phi starts at phase k*phi, as a memoryless
    nonlinearity would produce, so the upper band is determined by the lower one.
    A faint white-noise floor keeps every spectral bin away from silence.
    """
    n = int(round(cfg.rate * cfg.duration))
    t = np.arange(n) / cfg.rate
    x = np.zeros(n)
    for _ in range(int(rng.integers(cfg.min_partials, cfg.max_partials + 1))):
        f0 = float(np.exp(rng.uniform(np.log(cfg.min_f0), np.log(cfg.max_f0))))
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.3, 1.0)
        ks = np.arange(1, int(cfg.max_freq // f0) + 1)
        x += (amp * ks[:, None] ** -cfg.decay * np.sin(2 * np.pi * f0 * ks[:, None] * t + ks[:, None] * phase)).sum(0)
    x *= cfg.peak / np.max(np.abs(x))
    x += cfg.noise_floor * cfg.peak * rng.standard_normal(n)
    return AudioBuffer(x, cfg.rate)


def synth_corpus(n: int, seed: int, cfg: SynthConfig = SynthConfig()) -> List[AudioBuffer]:
    """``n`` utterances; item i depends only on (seed, i)."""
    return [synth_utterance(np.random.default_rng([seed, i]), cfg) for i in range(n)]
