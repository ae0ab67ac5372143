"""Welch power spectral density and the epoch-by-frequency CDSA matrix."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


def welch_psd(x: np.ndarray, fs: float, seg_s: float = 4.0):
    """Welch PSD with 50% overlap, periodic Hann window, constant detrend.

    Matches scipy.signal.welch density scaling. Returns (freqs, psd).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"welch_psd expects a 1-D signal, got {x.shape}")
    if fs <= 0 or seg_s <= 0:
        raise ConfigError(f"fs and seg_s must be positive, got {fs}, {seg_s}")
    nseg = int(round(seg_s * fs))
    if nseg < 2:
        raise ConfigError(f"segment of {seg_s} s at {fs} Hz is too short")
    if x.size < nseg:
        nseg = x.size  # single shortened segment, scipy-style fallback
    step = nseg // 2 if nseg // 2 > 0 else 1
    n = np.arange(nseg)
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / nseg)
    norm = fs * (win * win).sum()
    starts = range(0, x.size - nseg + 1, step)
    acc = None
    count = 0
    for s in starts:
        seg = x[s : s + nseg]
        seg = (seg - seg.mean()) * win
        spec = np.abs(np.fft.rfft(seg)) ** 2
        acc = spec if acc is None else acc + spec
        count += 1
    psd = acc / (count * norm)
    psd[1:] *= 2.0
    if nseg % 2 == 0:
        psd[-1] /= 2.0  # Nyquist bin is not doubled
    freqs = np.fft.rfftfreq(nseg, 1.0 / fs)
    return freqs, psd


def band_power(freqs: np.ndarray, psd: np.ndarray, lo: float, hi: float) -> float:
    """Integrated PSD over [lo, hi) via the trapezoid rule."""
    sel = (freqs >= lo) & (freqs < hi)
    if sel.sum() < 2:
        raise ConfigError(f"band [{lo}, {hi}) Hz covers fewer than 2 bins")
    return float(np.trapezoid(psd[sel], freqs[sel]))


def cdsa_matrix(x: np.ndarray, fs: float, window_s: float = 30.0,
                fmax: float = 32.0, floor: float = 1e-20):
    """Per-epoch log10 Welch power: rows are epochs, columns frequency bins.

    Returns (freqs up to fmax, matrix (n_epochs, n_bins)).
    """
    x = np.asarray(x, dtype=np.float64)
    spe = int(round(window_s * fs))
    if spe < 2:
        raise ConfigError(f"window of {window_s} s at {fs} Hz is too short")
    n_epochs = x.size // spe
    if n_epochs == 0:
        raise ShapeError(
            f"signal of {x.size} samples is shorter than one {window_s} s window"
        )
    rows = []
    freqs = None
    for e in range(n_epochs):
        f, p = welch_psd(x[e * spe : (e + 1) * spe], fs)
        if freqs is None:
            keep = f <= fmax
            freqs = f[keep]
        rows.append(np.log10(p[keep] + floor))
    return freqs, np.stack(rows)
