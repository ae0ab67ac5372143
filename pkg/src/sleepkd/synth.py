"""Synthetic paired-modality sleep recordings.

Each subject gets a hypnogram from a 5-state Markov chain plus two
time-aligned 200 Hz channels. The teacher channel mixes band-limited
noise with stage-keyed band powers; the stage's dominant band (and the
N2 spindle band) is concentrated into a few per-epoch bursts. The
student channel is a pulse train whose rate and respiratory modulation
are stage-keyed, plus a faint copy of the teacher's burst-gated bands
at the same instants (the two modalities show matching patterns, the
teacher's being far more distinctive) under heavier noise.

All constants below are versioned: changing any of them must bump
GENERATOR_VERSION, since downstream numbers depend on them.
"""

from __future__ import annotations

import numpy as np

from .data import Hypnogram, Recording, merge_stages
from .errors import DataError

GENERATOR_VERSION = 1
RATE_HZ = 200
EPOCH_S = 30

STATES = ("W", "N1", "N2", "N3", "R")

# rows follow STATES order; self-transitions >= 0.85 give realistic
# stage persistence at 30 s epochs
TRANSITIONS = np.array(
    [
        [0.88, 0.09, 0.03, 0.00, 0.00],
        [0.04, 0.85, 0.09, 0.00, 0.02],
        [0.02, 0.02, 0.88, 0.05, 0.03],
        [0.00, 0.01, 0.10, 0.87, 0.02],
        [0.03, 0.02, 0.05, 0.00, 0.90],
    ]
)

BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 12.0),
    "sigma": (12.0, 14.0),
    "fast": (14.0, 17.0),
}

# per stage: dominant band (burst-gated), flat secondary band amps,
# white-noise level, and the spindle-burst amp (N2 only). Dominant
# bands are pairwise disjoint so every stage stays identifiable after
# downsampling; "fast" sits partly in the resampler's transition band,
# hence the amplitude bump.
TEACHER_PROFILE = {
    "W": ("alpha", 1.00, {"delta": 0.20, "theta": 0.10, "sigma": 0.05}, 0.30, 0.0),
    "N1": ("theta", 1.00, {"delta": 0.30, "alpha": 0.15, "sigma": 0.05}, 0.35, 0.0),
    "N2": ("theta", 1.00, {"delta": 0.30, "alpha": 0.10}, 0.30, 1.30),
    "N3": ("delta", 1.60, {"theta": 0.25, "alpha": 0.10}, 0.25, 0.0),
    "R": ("fast", 1.15, {"theta": 0.25, "delta": 0.20}, 0.30, 0.0),
}

# dominant band stays partly present between bursts
BURST_FLOOR = 0.55

# student pulse train: mean inter-pulse interval (s) and respiratory
# modulation depth per stage; deeper sleep is slower and more modulated
STUDENT_INTERVAL = {"W": 0.905, "N1": 0.905, "N2": 0.940, "N3": 1.000, "R": 0.905}
STUDENT_MOD_DEPTH = {"W": 0.045, "N1": 0.045, "N2": 0.060, "N3": 0.120, "R": 0.045}
RESP_HZ = 0.25
PULSE_SIGMA_S = 0.025
INTERVAL_JITTER = 0.05
PULSE_AMP_JITTER = 0.10
STUDENT_NOISE = 0.45
STUDENT_WANDER = 0.20
LEAK_AMP = 0.16


def _band_noise(rng, n: int, lo: float, hi: float) -> np.ndarray:
    """Unit-variance noise restricted to [lo, hi) Hz."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / RATE_HZ)
    spec[(freqs < lo) | (freqs >= hi)] = 0.0
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x / sd if sd > 0 else x


def _burst_envelope(rng, n: int) -> np.ndarray:
    """A few raised-cosine bursts inside the epoch, peak value 1."""
    t = np.arange(n) / RATE_HZ
    env = np.zeros(n)
    for _ in range(int(rng.integers(3, 6))):
        center = rng.uniform(2.0, EPOCH_S - 2.0)
        half = rng.uniform(0.6, 1.1)
        d = np.abs(t - center)
        sel = d < half
        env[sel] += 0.5 * (1.0 + np.cos(np.pi * d[sel] / half))
    return np.minimum(env, 1.0)


def _markov_hypnogram(rng, n_epochs: int):
    labels = []
    state = 0  # nights start awake
    for _ in range(n_epochs):
        labels.append(STATES[state])
        state = int(rng.choice(len(STATES), p=TRANSITIONS[state]))
    return labels


def stationary_distribution() -> np.ndarray:
    """Left eigenvector of the transition matrix (stage visit rates)."""
    vals, vecs = np.linalg.eig(TRANSITIONS.T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, k])
    return pi / pi.sum()


def synth_subject(seed: int, minutes: float, scheme: int = None):
    """Generate one subject -> (teacher Recording, student Recording, Hypnogram).

    Deterministic in ``seed``. ``scheme`` of 3/4/5 returns the hypnogram
    already merged; None keeps raw stages.
    """
    if minutes < 18:
        raise DataError(f"need at least 18 minutes (one 36-epoch sequence), got {minutes}")
    n_epochs = int(minutes * 60 // EPOCH_S)
    spe = EPOCH_S * RATE_HZ
    n = n_epochs * spe
    rng = np.random.default_rng(seed)
    labels = _markov_hypnogram(rng, n_epochs)

    teacher = np.empty(n)
    leak = np.empty(n)
    for e, stage in enumerate(labels):
        dom_band, dom_amp, secondary, noise_sd, spindle_amp = TEACHER_PROFILE[stage]
        env = _burst_envelope(rng, spe)
        gate = BURST_FLOOR + (1.0 - BURST_FLOOR) * env
        sig = dom_amp * gate * _band_noise(rng, spe, *BANDS[dom_band])
        cue = sig
        if spindle_amp > 0.0:
            spindle = spindle_amp * env * _band_noise(rng, spe, *BANDS["sigma"])
            sig = sig + spindle
            cue = sig
        for band, amp in secondary.items():
            sig = sig + amp * _band_noise(rng, spe, *BANDS[band])
        sig = sig + noise_sd * rng.standard_normal(spe)
        teacher[e * spe : (e + 1) * spe] = sig
        leak[e * spe : (e + 1) * spe] = cue

    student = LEAK_AMP * leak
    pulse_sigma = PULSE_SIGMA_S * RATE_HZ
    support = int(np.ceil(4 * pulse_sigma))
    offsets = np.arange(-support, support + 1)
    shape = np.exp(-0.5 * (offsets / pulse_sigma) ** 2)
    t = 0.0
    dur = n / RATE_HZ
    while t < dur:
        stage = labels[min(int(t // EPOCH_S), n_epochs - 1)]
        c = int(round(t * RATE_HZ))
        lo = max(0, c - support)
        hi = min(n, c + support + 1)
        if lo < hi:
            amp = 1.0 + PULSE_AMP_JITTER * rng.standard_normal()
            student[lo:hi] += amp * shape[lo - c + support : hi - c + support]
        interval = STUDENT_INTERVAL[stage] * (
            1.0
            + STUDENT_MOD_DEPTH[stage] * np.sin(2.0 * np.pi * RESP_HZ * t)
            + INTERVAL_JITTER * rng.standard_normal()
        )
        t += max(interval, 0.25)
    student += STUDENT_WANDER * _band_noise(rng, n, 0.2, 0.45)
    student += STUDENT_NOISE * rng.standard_normal(n)

    sid = f"{seed:04d}"
    hyp = Hypnogram(sid, float(EPOCH_S), tuple(labels))
    if scheme is not None:
        hyp = merge_stages(hyp, scheme)
    return (
        Recording(sid, "teacher", float(RATE_HZ), teacher),
        Recording(sid, "student", float(RATE_HZ), student),
        hyp,
    )


def make_dataset(n_subjects: int, minutes: float, base_seed: int = 0, scheme: int = None):
    """Generate subjects with seeds base_seed .. base_seed + n - 1."""
    return [synth_subject(base_seed + i, minutes, scheme) for i in range(n_subjects)]
