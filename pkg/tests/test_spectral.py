"""Spectral estimates against scipy and closed-form oracles."""

import numpy as np
import pytest
import scipy.signal

from sleepkd import spectral
from sleepkd.errors import ConfigError, ShapeError

RNG = np.random.default_rng(11)


@pytest.mark.parametrize("n,fs,seg_s", [(4000, 100.0, 4.0), (3210, 128.0, 2.0),
                                        (6000, 200.0, 4.0)])
def test_welch_matches_scipy(n, fs, seg_s):
    x = RNG.standard_normal(n)
    f, p = spectral.welch_psd(x, fs, seg_s)
    nseg = int(round(seg_s * fs))
    f_ref, p_ref = scipy.signal.welch(
        x, fs=fs, window="hann", nperseg=nseg, noverlap=nseg // 2,
        detrend="constant",
    )
    np.testing.assert_allclose(f, f_ref, atol=1e-12)
    np.testing.assert_allclose(p, p_ref, rtol=1e-10, atol=1e-15)


def test_welch_short_signal_fallback():
    x = RNG.standard_normal(100)  # shorter than one 4 s segment at 100 Hz
    f, p = spectral.welch_psd(x, 100.0, 4.0)
    f_ref, p_ref = scipy.signal.welch(
        x, fs=100.0, window="hann", nperseg=100, detrend="constant"
    )
    np.testing.assert_allclose(p, p_ref, rtol=1e-10, atol=1e-15)


def test_welch_tone_peak_and_parseval():
    fs, f0 = 200.0, 10.0
    t = np.arange(8000) / fs
    x = np.sin(2 * np.pi * f0 * t)
    f, p = spectral.welch_psd(x, fs)
    assert f[int(np.argmax(p))] == pytest.approx(f0, abs=f[1] - f[0])
    # integrated PSD of a unit sine is its variance, 1/2
    assert np.trapezoid(p, f) == pytest.approx(0.5, rel=0.05)


def test_welch_input_validation():
    with pytest.raises(ShapeError):
        spectral.welch_psd(np.zeros((2, 8)), 10.0)
    with pytest.raises(ConfigError):
        spectral.welch_psd(np.zeros(16), -1.0)
    with pytest.raises(ConfigError):
        spectral.welch_psd(np.zeros(16), 10.0, seg_s=0.05)


def test_band_power_trapezoid_oracle():
    freqs = np.linspace(0.0, 32.0, 129)
    psd = np.exp(-freqs / 10.0)
    got = spectral.band_power(freqs, psd, 4.0, 8.0)
    sel = (freqs >= 4.0) & (freqs < 8.0)
    want = 0.0
    fs_, ps_ = freqs[sel], psd[sel]
    for i in range(len(fs_) - 1):
        want += 0.5 * (ps_[i] + ps_[i + 1]) * (fs_[i + 1] - fs_[i])
    assert got == pytest.approx(want, rel=1e-12)


def test_band_power_needs_two_bins():
    freqs = np.linspace(0.0, 32.0, 17)  # 2 Hz spacing
    with pytest.raises(ConfigError):
        spectral.band_power(freqs, np.ones_like(freqs), 4.0, 5.0)


def test_cdsa_shape_and_tone_argmax():
    fs, f0 = 100.0, 10.0
    t = np.arange(int(fs * 95)) / fs  # 3 full 30 s epochs plus a tail
    x = np.sin(2 * np.pi * f0 * t) + 0.01 * RNG.standard_normal(t.size)
    freqs, m = spectral.cdsa_matrix(x, fs, window_s=30.0, fmax=32.0)
    assert m.shape == (3, freqs.size)
    assert freqs[-1] <= 32.0
    for row in m:
        assert freqs[int(np.argmax(row))] == pytest.approx(f0, abs=0.5)


def test_cdsa_flat_noise_rows_are_flat():
    fs = 100.0
    x = RNG.standard_normal(int(fs * 60))
    freqs, m = spectral.cdsa_matrix(x, fs)
    # white noise: log-power spread across bins stays small
    inner = m[:, (freqs > 2) & (freqs < 30)]
    assert inner.std() < 0.6


def test_cdsa_too_short_raises():
    with pytest.raises(ShapeError):
        spectral.cdsa_matrix(np.zeros(100), 100.0, window_s=30.0)


def test_cdsa_matches_welch_rows():
    fs = 64.0
    x = RNG.standard_normal(int(fs * 60))
    freqs, m = spectral.cdsa_matrix(x, fs, window_s=30.0, fmax=20.0)
    f, p = spectral.welch_psd(x[: int(30 * fs)], fs)
    keep = f <= 20.0
    np.testing.assert_allclose(m[0], np.log10(p[keep] + 1e-20), atol=1e-12)
