import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavebridge import autodiff as ad
from wavebridge.bridge import bridge_loss
from wavebridge.dsp import STFTConfig, stft
from wavebridge.objective import (
    AuxLossConfig,
    a_weighting_fir,
    a_weighting_gain,
    anti_wrap,
    final_loss,
    mag_loss,
    phase_loss,
)

PLAIN = AuxLossConfig(a_weighting=False)


@pytest.mark.parametrize("x,expected", [
    (0.0, 0.0), (2 * math.pi, 0.0), (math.pi, math.pi), (-math.pi, math.pi),
    (3 * math.pi, math.pi), (0.1 + 4 * math.pi, 0.1),
])
def test_anti_wrap_examples(x, expected):
    assert float(anti_wrap(x)) == pytest.approx(expected, abs=1e-12)
    assert float(ad.anti_wrap(ad.constant(x)).value) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-10, 10), k=st.integers(-10**6, 10**6))
def test_anti_wrap_periodic_and_even(x, k):
    base = float(anti_wrap(x))
    assert 0 <= base <= math.pi
    assert abs(float(anti_wrap(x + 2 * math.pi * k)) - base) < 1e-9
    assert float(anti_wrap(-x)) == base


def test_a_weighting_shape():
    g = a_weighting_gain([100.0, 1000.0, 10000.0])
    assert g[1] == pytest.approx(1.0)
    assert 20 * np.log10(g[0]) == pytest.approx(-19.1, abs=0.2)
    assert 20 * np.log10(g[2]) == pytest.approx(-2.5, abs=0.2)
    h = a_weighting_fir()
    np.testing.assert_allclose(h, h[::-1])


def _signals(seed=0, n=4096, batch=1):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(batch, n)), rng.normal(size=(batch, n))


def test_mag_loss_examples():
    x, _ = _signals()
    assert float(mag_loss(x, x).value) == 0.0
    cfg = AuxLossConfig(resolutions=(1024,), a_weighting=False)
    val = float(mag_loss(2 * x, x, cfg).value)
    # spectral convergence 1 plus log 2 per bin (up to the 1e-7 floor)
    assert val == pytest.approx(1 + math.log(2), rel=1e-6)
    assert float(mag_loss(2 * x, x, PLAIN).value) == pytest.approx(3 * (1 + math.log(2)), rel=1e-6)
    with pytest.raises(ValueError):
        mag_loss(x, x[:, :-1])
    with pytest.raises(ValueError):
        mag_loss(x[:, :1000], x[:, :1000])


def test_phase_loss_examples():
    x, _ = _signals(1)
    assert float(phase_loss(x, x).value) == 0.0
    cfg = AuxLossConfig(resolutions=(512,))
    # negation shifts every phase by pi: the IP term is pi and the differences cancel
    assert float(phase_loss(-x, x, cfg).value) == pytest.approx(math.pi, abs=1e-9)


def _phase_terms_numpy(S_hat, S):
    """Independent reference for the three anti-wrapped phase statistics."""
    ph_h, ph = np.angle(S_hat), np.angle(S)
    mask = (np.abs(S_hat) >= 1e-8) & (np.abs(S) >= 1e-8)

    def mmean(v, m):
        return float(np.sum(anti_wrap(v) * m) / m.sum())

    ip = mmean(ph_h - ph, mask)
    gd = mmean(np.diff(ph_h, axis=1) - np.diff(ph, axis=1), mask[:, 1:] & mask[:, :-1])
    inf = mmean(np.diff(ph_h, axis=0) - np.diff(ph, axis=0), mask[1:] & mask[:-1])
    return ip + gd + inf


def test_phase_loss_one_hop_delay_oracle():
    cfg = AuxLossConfig(resolutions=(512,))
    sc = STFTConfig(512)
    x = np.random.default_rng(2).normal(size=6000)
    delayed = np.concatenate([np.zeros(sc.hop), x[:-sc.hop]])
    S, S_d = stft(x, sc), stft(delayed, sc)
    # away from the edges the delayed spectrogram is the original shifted by one frame
    np.testing.assert_allclose(S_d[4:-4], S[3:-5], atol=1e-9)
    expected = _phase_terms_numpy(S_d, S)
    assert float(phase_loss(delayed, x, cfg).value) == pytest.approx(expected, rel=1e-12)
    shifted = np.vstack([S[:1], S[:-1]])
    interior = _phase_terms_numpy(shifted[4:-4], S[4:-4])
    direct = _phase_terms_numpy(S_d[4:-4], S[4:-4])
    assert direct == pytest.approx(interior, rel=1e-6)


def _directional_check(loss_fn, x, rng, n_dirs=4, h=1e-6):
    p = ad.parameter(x.copy())
    (g,) = ad.grad(lambda: loss_fn(p), [p])
    for _ in range(n_dirs):
        d = rng.normal(size=x.shape)
        plus = float(loss_fn(ad.constant(x + h * d)).value)
        minus = float(loss_fn(ad.constant(x - h * d)).value)
        numeric = (plus - minus) / (2 * h)
        analytic = float(np.sum(g * d))
        assert abs(numeric - analytic) <= 1e-4 * abs(numeric), (numeric, analytic)


@pytest.mark.parametrize("weighted", [False, True])
def test_mag_loss_gradient(weighted):
    rng = np.random.default_rng(3)
    x, y = _signals(4, n=2048)
    cfg = AuxLossConfig(a_weighting=weighted)
    _directional_check(lambda p: mag_loss(p, y, cfg), x, rng)


def test_phase_loss_gradient():
    rng = np.random.default_rng(5)
    x, y = _signals(6, n=2048)
    _directional_check(lambda p: phase_loss(p, y), x, rng)


def test_phase_loss_bounded_by_three_pi_per_resolution():
    x, y = _signals(7, n=2048)
    a = float(phase_loss(x, y).value)
    assert 0 < a < 3 * 3 * math.pi


def test_final_loss_accounting():
    x0, noise = _signals(8, n=2048, batch=2)
    s = 12.0
    pred = x0 + 0.1 * noise
    total, parts = final_loss(pred, x0, s)
    assert math.isfinite(float(total.value))
    assert parts["bridge"] + parts["aux_mag"] + parts["aux_phase"] == pytest.approx(parts["total"], abs=1e-12)
    assert parts["aux_mag"] == pytest.approx(4e-6 * parts["mag"])
    assert parts["aux_phase"] == pytest.approx(5e-6 * parts["phase"])
    # auxiliary terms see the unscaled signals
    assert parts["mag"] == pytest.approx(float(mag_loss(pred / s, x0 / s).value), rel=1e-12)


def test_final_loss_degenerate_cases():
    x0, noise = _signals(9, n=2048)
    total, parts = final_loss(x0, x0, 12.0)
    assert float(total.value) == 0.0 and all(v == 0 for v in parts.values())
    pred = x0 + noise
    total, _ = final_loss(pred, x0, 12.0, AuxLossConfig(lambda_mag=0, lambda_phase=0))
    assert float(total.value) == bridge_loss(pred, x0)


def test_final_loss_gradient():
    rng = np.random.default_rng(10)
    x0, noise = _signals(11, n=2048)
    cfg = AuxLossConfig(lambda_mag=0.3, lambda_phase=0.2)
    # the weighted log-magnitude term is strongly curved where A-weighting
    # suppresses the spectrum, so a smaller step keeps truncation error down
    _directional_check(lambda p: final_loss(p, x0, 4.0, cfg)[0], x0 + noise, rng, h=1e-7)


def test_config_validation():
    with pytest.raises(ValueError):
        AuxLossConfig(resolutions=())
    with pytest.raises(ValueError):
        AuxLossConfig(lambda_mag=-1)
