"""Cross-modal knowledge distillation for 1-D physiological-signal sleep staging.

A teacher network trained on a rich signal (e.g. EEG) transfers attention-map
and softened-output knowledge to a student network on a poorer signal
(e.g. ECG), on top of a U-shaped fully-convolutional segmentation backbone
with its own reverse-mode autodiff engine.
"""

__version__ = "0.1.0"

from .autodiff import DiffArray, Tape, grad_check
from .data import (
    Hypnogram,
    Recording,
    StageMap,
    ingest_csv,
    export_subject,
    make_sequences,
    merge_stages,
    resample,
    split_subjects,
    widen_epochs,
)
from .errors import ConfigError, DataError, NumericsError, ShapeError, SleepKDError
from .losses import (
    LossConfig,
    at_loss,
    attention_target,
    class_weights,
    combined_loss,
    kd_loss,
    wce_loss,
)
from .metrics import EvalReport, confusion_matrix, format_tables, report, weighted_f1
from .model import NetConfig, SegNet, load_checkpoint, save_checkpoint
from .optim import Adam
from .spectral import band_power, cdsa_matrix, welch_psd
from .synth import make_dataset, stationary_distribution, synth_subject
from .training import (
    ExperimentConfig,
    RunLog,
    build_bundle,
    distill_features,
    dump_bottleneck,
    evaluate,
    run_comparison,
    train_student,
    train_teacher,
)

__all__ = [
    "Adam",
    "ConfigError",
    "DataError",
    "DiffArray",
    "EvalReport",
    "ExperimentConfig",
    "Hypnogram",
    "LossConfig",
    "NetConfig",
    "NumericsError",
    "Recording",
    "RunLog",
    "SegNet",
    "ShapeError",
    "SleepKDError",
    "StageMap",
    "Tape",
    "at_loss",
    "attention_target",
    "band_power",
    "build_bundle",
    "cdsa_matrix",
    "class_weights",
    "combined_loss",
    "confusion_matrix",
    "distill_features",
    "dump_bottleneck",
    "evaluate",
    "export_subject",
    "format_tables",
    "grad_check",
    "ingest_csv",
    "kd_loss",
    "load_checkpoint",
    "make_dataset",
    "make_sequences",
    "merge_stages",
    "report",
    "resample",
    "run_comparison",
    "save_checkpoint",
    "split_subjects",
    "stationary_distribution",
    "synth_subject",
    "train_student",
    "train_teacher",
    "wce_loss",
    "weighted_f1",
    "welch_psd",
    "widen_epochs",
    "__version__",
]
