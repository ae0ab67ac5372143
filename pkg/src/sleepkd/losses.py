"""Classification and distillation losses.

All losses return scalar DiffArrays built from autodiff ops, so they
can be mixed and backpropagated through the student network. Teacher
quantities enter as plain ndarrays (constants): the teacher is frozen
during distillation, so no gradient path is needed on its side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray
from .errors import ConfigError, DataError, NumericsError, ShapeError

AT_EPS = 1e-12


@dataclass
class LossConfig:
    """Knobs for the combined training loss."""

    beta: float = 0.5
    temperature: float = 1.0
    weight_scheme: str = "inverse"
    kd_direction: str = "teacher"
    # indices into the network's captured feature list; None means all
    at_layers: list = field(default=None)

    def validate(self):
        problems = []
        if not 0.0 <= self.beta <= 1.0:
            problems.append(f"beta must be in [0, 1], got {self.beta}")
        if self.temperature <= 0.0:
            problems.append(f"temperature must be positive, got {self.temperature}")
        if self.weight_scheme not in ("inverse", "proportional"):
            problems.append(f"unknown weight_scheme {self.weight_scheme!r}")
        if self.kd_direction not in ("teacher", "student"):
            problems.append(f"unknown kd_direction {self.kd_direction!r}")
        if problems:
            raise ConfigError("; ".join(problems))


def class_weights(counts, scheme: str = "inverse") -> np.ndarray:
    """Per-class loss weights from label counts.

    "inverse" weights each class by total/(n_classes * count), so rarer
    stages weigh more; [100, 50, 25, 25] gives [0.5, 1, 2, 2].
    "proportional" is the reverse ratio (rarer stages weigh less).
    Absent classes get weight 0 rather than inf.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size < 2:
        raise ShapeError(f"counts must be a 1-D vector of >= 2 classes, got {counts.shape}")
    if np.any(counts < 0):
        raise DataError("class counts must be non-negative")
    total = counts.sum()
    c = counts.size
    w = np.zeros(c)
    nz = counts > 0
    if scheme == "inverse":
        w[nz] = total / (c * counts[nz])
    elif scheme == "proportional":
        w[nz] = (c * counts[nz]) / total
    else:
        raise ConfigError(f"unknown weight scheme {scheme!r}")
    return w


def _onehot_weights(labels: np.ndarray, n_classes: int, weights: np.ndarray) -> np.ndarray:
    if labels.ndim != 2:
        raise ShapeError(f"labels must be (B, T), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ConfigError(
            f"labels out of range [0, {n_classes}): "
            f"min {labels.min()}, max {labels.max()}"
        )
    b, t = labels.shape
    w = np.zeros((b, n_classes, t))
    w[np.arange(b)[:, None], labels, np.arange(t)[None, :]] = weights[labels]
    return w


def wce_loss(logits: DiffArray, labels: np.ndarray, weights: np.ndarray) -> DiffArray:
    """Class-weighted cross-entropy, normalized by the summed weights.

    logits: (B, C, T); labels: (B, T) ints; weights: (C,).
    Equals the weighted mean of per-position negative log-likelihoods.
    """
    if logits.data.ndim != 3:
        raise ShapeError(f"logits must be (B, C, T), got {logits.data.shape}")
    c = logits.data.shape[1]
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (c,):
        raise ShapeError(f"weights shape {weights.shape}, expected ({c},)")
    labels = np.asarray(labels)
    if labels.shape != (logits.data.shape[0], logits.data.shape[2]):
        raise ShapeError(
            f"labels shape {labels.shape} does not match logits {logits.data.shape}"
        )
    wmat = _onehot_weights(labels, c, weights)
    den = wmat.sum()
    if den <= 0.0:
        raise NumericsError("no label carries positive weight; cannot normalize the loss")
    lp = ad.log_softmax(logits, 1.0)
    return ad.scale(ad.sum_all(ad.mul_const(lp, wmat)), -1.0 / den)


# ---------------------------------------------------------------------------
# feature distillation: normalized attention-map transfer

def attention_map(features: DiffArray) -> DiffArray:
    """Channel-summed squared activations, (B, C, L) -> (B, 1, L)."""
    return ad.channel_sum(ad.mul(features, features))


def _normalize_attention(q: DiffArray) -> DiffArray:
    norm = ad.sqrt_safe(ad.batch_sum(ad.mul(q, q)))
    return ad.batch_mul(q, ad.recip(ad.add_const(norm, AT_EPS)))


def attention_target(features: np.ndarray) -> np.ndarray:
    """Teacher-side normalized attention map, plain numpy.

    Mirrors the autodiff path op for op so identical activations give a
    bit-identical map (self-distillation reaches an exact zero loss).
    """
    if features.ndim != 3:
        raise ShapeError(f"features must be (B, C, L), got {features.shape}")
    s = features * features
    q = s.sum(axis=1, keepdims=True)
    ss = (q * q).sum(axis=(1, 2), keepdims=True)
    n = np.sqrt(ss)
    return q * (1.0 / (n + AT_EPS))


def at_loss(student_features, teacher_attention) -> DiffArray:
    """Attention-transfer loss: sum over layers of the batch-mean L2
    distance between L2-normalized attention maps.

    student_features: list of (B, C_s, L_j) DiffArrays.
    teacher_attention: list of (B, 1, L_j) ndarrays from
    ``attention_target`` (channel widths may differ; lengths must match).
    Each layer term lies in [0, 2].
    """
    if len(student_features) != len(teacher_attention):
        raise ShapeError(
            f"{len(student_features)} student layers vs "
            f"{len(teacher_attention)} teacher maps"
        )
    if not student_features:
        raise ShapeError("at_loss needs at least one layer pair")
    total = None
    for sf, ta in zip(student_features, teacher_attention):
        ta = np.asarray(ta, dtype=np.float64)
        if ta.shape != (sf.data.shape[0], 1, sf.data.shape[2]):
            raise ShapeError(
                f"attention target {ta.shape} does not match features {sf.data.shape}"
            )
        qn = _normalize_attention(attention_map(sf))
        d = ad.add_const(qn, -ta)
        dist = ad.sqrt_safe(ad.batch_sum(ad.mul(d, d)))
        term = ad.mean_reduce(dist)
        total = term if total is None else ad.add(total, term)
    return total


# ---------------------------------------------------------------------------
# response distillation: softened-output KL

def kd_loss(student_logits: DiffArray, teacher_logits: np.ndarray,
            temperature: float = 1.0, direction: str = "teacher") -> DiffArray:
    """KL divergence between temperature-softened class distributions,
    averaged over batch and time positions.

    direction "teacher" is KL(p_teacher || p_student), the usual
    soft-target form; "student" reverses the arguments.
    """
    if student_logits.data.ndim != 3:
        raise ShapeError(f"logits must be (B, C, T), got {student_logits.data.shape}")
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if teacher_logits.shape != student_logits.data.shape:
        raise ShapeError(
            f"teacher logits {teacher_logits.shape} vs student {student_logits.data.shape}"
        )
    t = float(temperature)
    if t <= 0.0:
        raise ConfigError(f"temperature must be positive, got {t}")
    b, _, tt = student_logits.data.shape
    npos = b * tt
    lp_t = ad.log_softmax_np(teacher_logits / t if t != 1.0 else teacher_logits)
    lp_s = ad.log_softmax(student_logits, t)
    if direction == "teacher":
        p_t = np.exp(lp_t)
        const = (p_t * lp_t).sum() * (1.0 / npos)
        cross = ad.scale(ad.sum_all(ad.mul_const(lp_s, p_t)), -1.0 / npos)
        return ad.add_const(cross, const)
    if direction == "student":
        p_s = ad.exp(lp_s)
        gap = ad.add_const(lp_s, -lp_t)
        return ad.scale(ad.sum_all(ad.mul(p_s, gap)), 1.0 / npos)
    raise ConfigError(f"unknown direction {direction!r}")


def combined_loss(student_logits: DiffArray, labels: np.ndarray, weights: np.ndarray,
                  teacher_logits=None, beta: float = 0.5, temperature: float = 1.0,
                  direction: str = "teacher") -> DiffArray:
    """(1 - beta) * weighted cross-entropy + beta * T^2 * KL distillation.

    With beta == 0 this returns the cross-entropy node itself (bit-equal)
    and never reads the teacher logits, which may then be None.
    """
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must be in [0, 1], got {beta}")
    wce = wce_loss(student_logits, labels, weights)
    if beta == 0.0:
        return wce
    if teacher_logits is None:
        raise ConfigError("beta > 0 requires teacher logits")
    kd = kd_loss(student_logits, teacher_logits, temperature, direction)
    return ad.add(ad.scale(wce, 1.0 - beta), ad.scale(kd, beta * temperature * temperature))
