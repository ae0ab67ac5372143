"""Recordings, hypnograms, stage maps, epoching, splits, and CSV ingestion.

File formats:
  signal CSV     one sample per line, decimal floats
  hypnogram CSV  ``epoch,stage`` with stage in {W, N1, N2, N3, N4, R}
  manifest       ``key=value`` lines: rate_hz, modality, epoch_s

A subject directory holds ``teacher.csv``, ``student.csv``,
``hypnogram.csv`` and ``manifest.txt``.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError

RAW_STAGES = ("W", "N1", "N2", "N3", "N4", "R")


@dataclass(frozen=True)
class Recording:
    """One subject's single-channel signal for one modality."""

    subject_id: str
    modality: str
    rate_hz: float
    samples: np.ndarray
    median: float = field(default=None)
    iqr: float = field(default=None)

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise DataError(f"sampling rate must be positive, got {self.rate_hz}")
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            bad = int(np.flatnonzero(~np.isfinite(samples))[0])
            raise DataError(f"non-finite sample at index {bad}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if self.median is None:
            med = float(np.median(samples)) if samples.size else 0.0
            q75, q25 = (
                np.percentile(samples, [75, 25]) if samples.size else (0.0, 0.0)
            )
            iqr = float(q75 - q25)
            object.__setattr__(self, "median", med)
            object.__setattr__(self, "iqr", iqr if iqr > 0 else 1.0)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.rate_hz

    def scaled(self) -> np.ndarray:
        """Robust-scaled copy: (x - median) / IQR."""
        return (self.samples - self.median) / self.iqr


@dataclass(frozen=True)
class Hypnogram:
    """Per-epoch stage labels; ``scheme`` is set once stages are merged."""

    subject_id: str
    epoch_s: float
    labels: tuple
    scheme: int = None

    def __post_init__(self):
        if self.epoch_s <= 0:
            raise DataError(f"epoch duration must be positive, got {self.epoch_s}")
        object.__setattr__(self, "labels", tuple(self.labels))
        allowed = (
            set(RAW_STAGES)
            if self.scheme is None
            else set(StageMap.for_scheme(self.scheme).index)
        )
        for i, lab in enumerate(self.labels):
            if lab not in allowed:
                raise DataError(f"unknown stage label {lab!r} at epoch {i}")

    def __len__(self):
        return len(self.labels)

    @property
    def duration_s(self) -> float:
        return len(self.labels) * self.epoch_s


@dataclass(frozen=True)
class StageMap:
    """Total map from stage tokens to training class indices.

    Tokens cover the 6 raw stages plus the merged names of the scheme,
    so merging an already-merged hypnogram is the identity.
    """

    scheme: int
    index: dict
    class_names: tuple

    @classmethod
    def for_scheme(cls, scheme: int) -> "StageMap":
        if scheme == 4:
            names = ("W", "L", "D", "R")
            raw = {"W": 0, "N1": 1, "N2": 1, "N3": 2, "N4": 2, "R": 3}
        elif scheme == 3:
            names = ("W", "N", "R")
            raw = {"W": 0, "N1": 1, "N2": 1, "N3": 1, "N4": 1, "R": 2}
        elif scheme == 5:
            names = ("W", "N1", "N2", "N3", "R")
            raw = {"W": 0, "N1": 1, "N2": 2, "N3": 3, "N4": 3, "R": 4}
        else:
            raise ConfigError(f"class scheme must be 3, 4 or 5, got {scheme}")
        index = dict(raw)
        for i, n in enumerate(names):
            index[n] = i
        return cls(scheme=scheme, index=index, class_names=names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def to_indices(self, labels) -> np.ndarray:
        out = np.empty(len(labels), dtype=np.int64)
        for i, lab in enumerate(labels):
            if lab not in self.index:
                raise DataError(f"unknown stage label {lab!r} at epoch {i}")
            out[i] = self.index[lab]
        return out


def merge_stages(h: Hypnogram, scheme: int) -> Hypnogram:
    """Map raw stages onto the 3/4/5-class training scheme.

    4-class: N1/N2 -> L, N3/N4 -> D. 3-class: all NREM -> N.
    5-class: identity except N4 -> N3. Idempotent within a scheme.
    """
    sm = StageMap.for_scheme(scheme)
    merged = []
    for i, lab in enumerate(h.labels):
        if lab not in sm.index:
            raise DataError(f"unknown stage label {lab!r} at epoch {i}")
        merged.append(sm.class_names[sm.index[lab]])
    return Hypnogram(h.subject_id, h.epoch_s, tuple(merged), scheme=scheme)


def widen_epochs(signal: np.ndarray, labels, rate_hz: float, epoch_s: float = 20.0):
    """Turn 20 s annotations into 30 s segments spanning [t-5, t+25).

    Annotations without the 5 s margin on either side are dropped.
    Returns (segments (n, 30*rate), kept labels).
    """
    if epoch_s != 20.0:
        raise ConfigError(f"widen_epochs expects 20 s annotations, got {epoch_s} s")
    signal = np.asarray(signal, dtype=np.float64)
    f = rate_hz
    if f <= 0 or (5.0 * f) != int(5.0 * f):
        raise ConfigError(f"rate {f} Hz does not give whole-sample 5 s margins")
    seg_len = int(30.0 * f)
    segments = []
    kept = []
    for k, lab in enumerate(labels):
        start = int((20.0 * k - 5.0) * f)
        stop = start + seg_len
        if start < 0 or stop > signal.size:
            continue
        segments.append(signal[start:stop])
        kept.append(lab)
    if segments:
        return np.stack(segments), list(kept)
    return np.empty((0, seg_len)), []


def resample(signal: np.ndarray, from_hz: int, to_hz: int = 200) -> np.ndarray:
    """Integer-ratio decimation behind a windowed-sinc anti-alias filter.

    Cutoff 0.45 * to_hz; Blackman window over 16 * ratio + 1 taps,
    normalized to unit DC gain; replicate-edge padding.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if from_hz <= 0 or to_hz <= 0:
        raise ConfigError(f"rates must be positive: {from_hz} -> {to_hz}")
    if from_hz == to_hz:
        return signal.copy()
    if from_hz < to_hz or from_hz % to_hz != 0:
        raise ConfigError(
            f"unsupported rate pair {from_hz} -> {to_hz}: "
            "the source rate must be an integer multiple of the target"
        )
    ratio = from_hz // to_hz
    ntaps = 16 * ratio + 1
    half = ntaps // 2
    t = np.arange(ntaps) - half
    fc = 0.45 * to_hz / from_hz  # cycles per input sample
    taps = 2 * fc * np.sinc(2 * fc * t) * np.blackman(ntaps)
    taps /= taps.sum()
    padded = np.concatenate(
        [np.full(half, signal[0]), signal, np.full(half, signal[-1])]
    )
    smooth = np.convolve(padded, taps, mode="valid")
    return smooth[::ratio]


def split_subjects(subject_ids, ratios=(80, 10, 10), seed: int = 0):
    """Deterministic subject-wise split; returns (train, eval, test) lists.

    Eval/test sizes round their shares; train takes the remainder. With
    fewer than 10 subjects some splits may come back empty.
    """
    ratios = tuple(ratios)
    if len(ratios) != 3 or sum(ratios) != 100:
        raise ConfigError(f"ratios must be three numbers summing to 100, got {ratios}")
    ids = sorted(str(s) for s in subject_ids)
    if len(set(ids)) != len(ids):
        raise DataError("duplicate subject ids in split input")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_eval = int(n * ratios[1] / 100 + 0.5)
    n_test = int(n * ratios[2] / 100 + 0.5)
    n_train = n - n_eval - n_test
    if n_train < 0:
        raise ConfigError(f"ratios {ratios} leave no training subjects for n={n}")
    train = shuffled[:n_train]
    ev = shuffled[n_train : n_train + n_eval]
    test = shuffled[n_train + n_eval :]
    return train, ev, test


@dataclass
class SequenceBatch:
    """A block of contiguous-epoch sequences ready for the network."""

    signal: np.ndarray  # (B, 1, T*i)
    labels: np.ndarray  # (B, T) int64
    subject_ids: list
    start_epochs: list

    def __post_init__(self):
        if self.signal.ndim != 3 or self.signal.shape[1] != 1:
            raise ShapeError(f"signal must be (B, 1, T*i), got {self.signal.shape}")
        if self.labels.shape[0] != self.signal.shape[0]:
            raise ShapeError(
                f"labels batch {self.labels.shape[0]} != signal batch {self.signal.shape[0]}"
            )


def make_sequences(rec: Recording, h: Hypnogram, t_epochs: int, stride: int = None,
                   stage_map: StageMap = None):
    """Cut a recording into sequences of T contiguous epochs.

    Applies the recording's robust scaling, maps labels through the
    hypnogram's scheme (raw labels use the 5-class map), and drops the
    trailing partial window. Returns a list of single-item
    SequenceBatch objects; use ``collate`` to merge them into batches.
    """
    if t_epochs < 1:
        raise ConfigError(f"sequence length must be >= 1 epoch, got {t_epochs}")
    stride = t_epochs if stride is None else stride
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    spe = h.epoch_s * rec.rate_hz
    if spe != int(spe):
        raise DataError(
            f"epoch duration {h.epoch_s} s at {rec.rate_hz} Hz is not a whole sample count"
        )
    spe = int(spe)
    if rec.samples.size // spe < len(h.labels):
        raise DataError(
            f"signal covers {rec.samples.size / rec.rate_hz:.1f} s but hypnogram "
            f"declares {h.duration_s:.1f} s"
        )
    n_epochs = len(h.labels)  # trailing unlabeled samples are ignored
    if stage_map is None:
        stage_map = StageMap.for_scheme(h.scheme if h.scheme is not None else 5)
    idx = stage_map.to_indices(h.labels[:n_epochs])
    scaled = rec.scaled()
    out = []
    if n_epochs < t_epochs:
        warnings.warn(
            f"recording {rec.subject_id}: {n_epochs} epochs is shorter than one "
            f"sequence of {t_epochs}; no sequences produced"
        )
        return out
    for k, start in enumerate(range(0, n_epochs - t_epochs + 1, stride)):
        sig = scaled[start * spe : (start + t_epochs) * spe]
        out.append(
            SequenceBatch(
                signal=sig.reshape(1, 1, -1).copy(),
                labels=idx[start : start + t_epochs].reshape(1, -1).copy(),
                subject_ids=[rec.subject_id],
                start_epochs=[start],
            )
        )
    return out


def collate(items, batch_size: int):
    """Merge single-sequence batches into batches of up to batch_size."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    out = []
    for i in range(0, len(items), batch_size):
        chunk = items[i : i + batch_size]
        out.append(
            SequenceBatch(
                signal=np.concatenate([c.signal for c in chunk], axis=0),
                labels=np.concatenate([c.labels for c in chunk], axis=0),
                subject_ids=[s for c in chunk for s in c.subject_ids],
                start_epochs=[e for c in chunk for e in c.start_epochs],
            )
        )
    return out


# ---------------------------------------------------------------------------
# CSV ingestion and export

def _parse_manifest(path) -> dict:
    out = {}
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise DataError(f"{path}:{ln}: expected key=value, got {line!r}")
                key, val = line.split("=", 1)
                out[key.strip()] = val.strip()
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    return out


def _manifest_fields(manifest, where: str):
    missing = [k for k in ("rate_hz", "modality", "epoch_s") if k not in manifest]
    if missing:
        raise DataError(f"{where}: manifest missing keys {missing}")
    try:
        rate = float(manifest["rate_hz"])
        epoch_s = float(manifest["epoch_s"])
    except ValueError as e:
        raise DataError(f"{where}: non-numeric rate_hz/epoch_s in manifest") from e
    modality = manifest["modality"]
    if modality not in ("teacher", "student"):
        raise DataError(f"{where}: modality must be teacher or student, got {modality!r}")
    return rate, modality, epoch_s


def _read_signal_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=np.float64, ndmin=1)
    except OSError as e:
        raise DataError(f"cannot read signal {path}: {e}") from e
    except ValueError:
        pass  # locate the offending line for the error message
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                float(line)
            except ValueError:
                raise DataError(f"{path}:{ln}: not a decimal float: {line!r}") from None
    raise DataError(f"{path}: malformed signal CSV")


def _read_hypnogram_csv(path, subject_id: str, epoch_s: float) -> Hypnogram:
    labels = {}
    try:
        fh = open(path)
    except OSError as e:
        raise DataError(f"cannot read hypnogram {path}: {e}") from e
    with fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path}:{ln}: expected epoch,stage, got {line!r}")
            try:
                idx = int(parts[0])
            except ValueError:
                raise DataError(f"{path}:{ln}: bad epoch index {parts[0]!r}") from None
            stage = parts[1].strip()
            if stage not in RAW_STAGES:
                raise DataError(f"{path}:{ln}: unknown stage {stage!r}")
            if idx in labels:
                raise DataError(f"{path}:{ln}: duplicate epoch index {idx}")
            labels[idx] = stage
    if not labels:
        raise DataError(f"{path}: empty hypnogram")
    n = max(labels) + 1
    if sorted(labels) != list(range(n)):
        missing = [i for i in range(n) if i not in labels]
        raise DataError(f"{path}: missing epoch indices {missing[:5]}")
    return Hypnogram(subject_id, epoch_s, tuple(labels[i] for i in range(n)))


def ingest_csv(path, manifest=None):
    """Load one subject directory -> (Recording, Hypnogram).

    ``path`` holds ``<modality>.csv`` and ``hypnogram.csv``; the
    manifest (dict, file path, or ``path/manifest.txt`` by default)
    declares rate_hz, modality and epoch_s.
    """
    path = os.fspath(path)
    if manifest is None:
        manifest = _parse_manifest(os.path.join(path, "manifest.txt"))
    elif not isinstance(manifest, dict):
        manifest = _parse_manifest(manifest)
    rate, modality, epoch_s = _manifest_fields(manifest, path)
    subject_id = os.path.basename(os.path.normpath(path))
    if subject_id.startswith("subject-"):
        subject_id = subject_id[len("subject-") :]
    samples = _read_signal_csv(os.path.join(path, f"{modality}.csv"))
    hyp = _read_hypnogram_csv(os.path.join(path, "hypnogram.csv"), subject_id, epoch_s)
    rec = Recording(subject_id, modality, rate, samples)
    if abs(rec.duration_s - hyp.duration_s) > 0.5 / rate:
        raise DataError(
            f"{path}: signal lasts {rec.duration_s:.3f} s but hypnogram "
            f"declares {hyp.duration_s:.3f} s"
        )
    return rec, hyp


def export_subject(path, teacher: Recording, student: Recording, h: Hypnogram):
    """Write a subject directory in the standard layout.

    Floats are written with shortest round-trip repr, so export->ingest
    is value-identical.
    """
    os.makedirs(path, exist_ok=True)
    if teacher.samples.size != student.samples.size or teacher.rate_hz != student.rate_hz:
        raise DataError("teacher and student recordings are not time-aligned")
    for rec in (teacher, student):
        with open(os.path.join(path, f"{rec.modality}.csv"), "w") as fh:
            fh.write("\n".join(map(repr, rec.samples.tolist())))
            fh.write("\n")
    with open(os.path.join(path, "hypnogram.csv"), "w") as fh:
        for i, lab in enumerate(h.labels):
            fh.write(f"{i},{lab}\n")
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        rate = teacher.rate_hz
        fh.write(f"rate_hz={int(rate) if rate == int(rate) else rate}\n")
        fh.write("modality=teacher\n")
        fh.write(f"epoch_s={int(h.epoch_s) if h.epoch_s == int(h.epoch_s) else h.epoch_s}\n")
