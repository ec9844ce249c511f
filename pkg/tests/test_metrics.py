import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavebridge.dsp import AudioBuffer, DegradationSpec, brickwall, degrade
from wavebridge.metrics import (
    AGGREGATE_FIELDS,
    MetricsReport,
    aggregate,
    cutoff_bin,
    evaluate_pair,
    lsd,
    lsd_frames,
    si_snr,
    ssim_spec,
)

FS = 48000


def _noise(seed=0, n=FS // 2):
    return np.random.default_rng(seed).normal(size=n)


def test_lsd_identity_and_uniform_offset():
    x = _noise()
    assert lsd(x, x) == 0.0
    # P_hat = 10 P in every bin; the 1e-8 floor is far below the noise power
    assert lsd(math.sqrt(10) * x, x) == pytest.approx(1.0, abs=1e-12)


def test_lsd_symmetric():
    x, y = _noise(1), _noise(2)
    assert lsd(x, y) == lsd(y, x)


def test_lsd_brickwall_construction():
    x = _noise(3)
    y = brickwall(x, 8000, FS)
    assert lsd(y, x, "lf", 8000) < 0.05
    assert lsd(y, x, "hf", 8000) > 3


def test_band_partition_and_recombination():
    x, y = _noise(4), _noise(5)
    k = cutoff_bin(6000, FS)
    assert k == 256
    full = lsd_frames(y, x)
    lf = lsd_frames(y, x, "lf", 6000)
    hf = lsd_frames(y, x, "hf", 6000)
    n_bins = 1025
    np.testing.assert_allclose(full, np.sqrt((k * lf**2 + (n_bins - k) * hf**2) / n_bins), rtol=1e-12)
    assert min(lf.mean(), hf.mean()) <= full.mean() <= max(lf.mean(), hf.mean())


def test_lsd_errors():
    x = _noise()
    with pytest.raises(ValueError):
        lsd(x, x, "lf", 0.0)
    with pytest.raises(ValueError):
        lsd(x, x, "hf", 30000)
    with pytest.raises(ValueError):
        lsd(x, x, "mid", 1000)
    with pytest.raises(ValueError):
        lsd(x, x[:-1])


def test_si_snr_examples():
    x = _noise(6, 8000)
    assert si_snr(3.7 * x, x) == 100.0
    x = x - x.mean()
    n = _noise(7, 8000)
    n -= n.mean()
    n -= (n @ x) / (x @ x) * x
    n *= math.sqrt((x @ x) / 10 / (n @ n))
    assert si_snr(x + n, x) == pytest.approx(10.0, abs=1e-10)
    with pytest.raises(ValueError):
        si_snr(x, np.zeros_like(x))


@settings(max_examples=30, deadline=None)
@given(a=st.sampled_from([0.1, 2.0, 10.0]), seed=st.integers(0, 1000))
def test_si_snr_scale_invariance(a, seed):
    x, y = _noise(seed, 2000), _noise(seed + 1, 2000)
    est = x + 0.5 * y
    assert abs(si_snr(a * est, x) - si_snr(est, x)) < 1e-10


def test_ssim_properties():
    t = np.arange(FS // 2) / FS
    tone = np.sin(2 * np.pi * 440 * t) + 0.5 * np.sin(2 * np.pi * 1320 * t)
    assert ssim_spec(tone, tone) == pytest.approx(1.0)
    noise = _noise(8, tone.size)
    assert ssim_spec(noise, tone) < 0.5
    assert abs(ssim_spec(noise, tone) - ssim_spec(tone, noise)) < 1e-12
    z = np.zeros(4096)
    assert ssim_spec(z, z) == 1.0


def test_evaluate_pair_identity_and_json():
    x = _noise(9)
    r = evaluate_pair(x, x, 8000)
    assert r.lsd == 0 and r.lsd_lf == 0 and r.lsd_hf == 0
    assert r.si_snr == 100.0 and r.ssim == pytest.approx(1.0)
    assert MetricsReport.from_json(r.to_json()) == r


def test_degraded_input_pattern():
    t = np.arange(int(0.7 * FS)) / FS
    rng = np.random.default_rng(10)
    x = sum(rng.uniform(0.1, 0.5) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
            for f in (220, 660, 1100, 9000, 15000, 19000)) + 1e-3 * rng.normal(size=t.size)
    pair = degrade(AudioBuffer(x, FS), DegradationSpec("brickwall-fft", 2, 32000))
    r = evaluate_pair(pair.x_lr, pair.x_hr, pair.cutoff_hz)
    assert r.lsd_hf > 5 * r.lsd_lf


def test_aggregate():
    reps = [MetricsReport(1, 2, 3, 4, 0.5, 8000), MetricsReport(3, 2, 1, 6, 0.7, 8000)]
    agg = aggregate(reps)
    assert tuple(agg) == AGGREGATE_FIELDS
    assert agg == {"lsd": 2.0, "lsd_lf": 2.0, "lsd_hf": 2.0, "si_snr": 5.0, "ssim": pytest.approx(0.6), "n": 2}
    with pytest.raises(ValueError):
        aggregate([])
