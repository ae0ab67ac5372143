"""Teacher pretraining, two-stage distillation, evaluation, comparison.

Distillation runs in two stages. Stage 1 pulls the student's attention
maps toward the frozen teacher's (feature transfer); stage 2 trains the
classification objective, optionally blended with softened-output KL
against the teacher. The teacher is frozen throughout, so its attention
maps and logits are precomputed once per dataset and reused across
epochs (and across methods in a comparison).

RunLog files are line-delimited JSON with deterministic fields only;
wall-clock timings go to a separate .timings.json sidecar so that
identical seeded runs produce bit-identical logs.
"""

from __future__ import annotations

import json
import os
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import data as dat
from . import losses, metrics, model, optim
from .errors import ConfigError, DataError, NumericsError, ShapeError

METHODS = ("teacher-base", "student-base", "FB+WCE", "RB+WCE", "FB+RB+WCE")
FEATURE_STAGE = "feature_training"
CLASSIFIER_STAGE = "classifier_training"


@dataclass
class ExperimentConfig:
    """One training run: method, data locations, schedule, model size."""

    method: str = "student-base"
    data_dir: str = None
    checkpoint_dir: str = "checkpoints"
    log_dir: str = "logs"
    scheme: int = 4
    seed: int = 0
    epochs: int = 60
    feature_epochs: int = 30
    teacher_epochs: int = 40
    lr: float = 1e-3
    batch_size: int = 8
    t_epochs: int = 36
    rate_hz: int = 200
    base_filters: int = 8
    kernel_size: int = 5
    patience: int = 15
    split_seed: int = 0
    split_ratios: tuple = (80, 10, 10)
    loss: losses.LossConfig = field(default_factory=losses.LossConfig)
    teacher_checkpoint: str = None
    init_checkpoint: str = None
    run_name: str = None

    def validate(self):
        problems = []
        if self.method not in METHODS:
            problems.append(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.scheme not in (3, 4, 5):
            problems.append(f"scheme must be 3, 4 or 5, got {self.scheme}")
        for name in ("epochs", "feature_epochs", "teacher_epochs", "batch_size",
                     "t_epochs", "patience"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            problems.append(f"lr must be positive, got {self.lr}")
        if self.rate_hz < 1:
            problems.append(f"rate_hz must be >= 1, got {self.rate_hz}")
        try:
            self.loss.validate()
        except ConfigError as e:
            problems.append(str(e))
        if self.method in ("RB+WCE", "FB+RB+WCE") and self.loss.beta == 0.0:
            problems.append(f"{self.method} needs beta > 0; got 0 (that is {METHODS[1]})")
        if problems:
            raise ConfigError("; ".join(problems))

    def step2_beta(self) -> float:
        """Effective beta for the classification stage of this method."""
        if self.method in ("student-base", "teacher-base", "FB+WCE"):
            return 0.0
        return self.loss.beta


# ---------------------------------------------------------------------------
# dataset assembly

@dataclass
class PairedBatch:
    """Time-aligned teacher/student signal block with one label set."""

    teacher: np.ndarray
    student: np.ndarray
    labels: np.ndarray
    subject_ids: list
    start_epochs: list


@dataclass
class DatasetBundle:
    train: list
    eval_: list
    test: list
    stage_map: dat.StageMap
    class_weights: np.ndarray
    samples_per_epoch: int
    rate_hz: float
    t_epochs: int


def load_subject_dirs(data_dir):
    """Read every subject-* directory -> (teacher, student, hypnogram)."""
    if not data_dir or not os.path.isdir(data_dir):
        raise ConfigError(f"data directory not found: {data_dir!r}")
    triples = []
    for name in sorted(os.listdir(data_dir)):
        sub = os.path.join(data_dir, name)
        if not (name.startswith("subject-") and os.path.isdir(sub)):
            continue
        manifest = dat._parse_manifest(os.path.join(sub, "manifest.txt"))
        t_rec, hyp = dat.ingest_csv(sub, dict(manifest, modality="teacher"))
        s_rec, _ = dat.ingest_csv(sub, dict(manifest, modality="student"))
        triples.append((t_rec, s_rec, hyp))
    if not triples:
        raise DataError(f"no subject-* directories under {data_dir}")
    return triples


def _resample_rec(rec: dat.Recording, to_hz: int) -> dat.Recording:
    if rec.rate_hz == to_hz:
        return rec
    out = dat.resample(rec.samples, int(rec.rate_hz), int(to_hz))
    return dat.Recording(rec.subject_id, rec.modality, float(to_hz), out)


def build_bundle(subjects, cfg: ExperimentConfig) -> DatasetBundle:
    """Resample, merge stages, split subject-wise, cut paired sequences."""
    sm = dat.StageMap.for_scheme(cfg.scheme)
    by_id = {}
    for t_rec, s_rec, hyp in subjects:
        if t_rec.subject_id in by_id:
            raise DataError(f"duplicate subject id {t_rec.subject_id}")
        by_id[t_rec.subject_id] = (t_rec, s_rec, hyp)
    train_ids, eval_ids, test_ids = dat.split_subjects(
        by_id, cfg.split_ratios, cfg.split_seed
    )
    spe = cfg.rate_hz * 30
    if int(spe) != spe:
        raise ConfigError(f"rate {cfg.rate_hz} Hz gives fractional samples per epoch")

    def cut(ids):
        items = []
        for sid in ids:
            t_rec, s_rec, hyp = by_id[sid]
            hyp = hyp if hyp.scheme == cfg.scheme else dat.merge_stages(hyp, cfg.scheme)
            t40 = _resample_rec(t_rec, cfg.rate_hz)
            s40 = _resample_rec(s_rec, cfg.rate_hz)
            t_seqs = dat.make_sequences(t40, hyp, cfg.t_epochs, stage_map=sm)
            s_seqs = dat.make_sequences(s40, hyp, cfg.t_epochs, stage_map=sm)
            for ts, ss in zip(t_seqs, s_seqs):
                items.append((ts, ss))
        batches = []
        for i in range(0, len(items), cfg.batch_size):
            chunk = items[i : i + cfg.batch_size]
            batches.append(
                PairedBatch(
                    teacher=np.concatenate([c[0].signal for c in chunk]),
                    student=np.concatenate([c[1].signal for c in chunk]),
                    labels=np.concatenate([c[0].labels for c in chunk]),
                    subject_ids=[s for c in chunk for s in c[0].subject_ids],
                    start_epochs=[e for c in chunk for e in c[0].start_epochs],
                )
            )
        return batches

    train, ev, test = cut(train_ids), cut(eval_ids), cut(test_ids)
    if not train:
        raise DataError("training split produced no sequences")
    counts = np.zeros(sm.n_classes)
    for b in train:
        counts += np.bincount(b.labels.reshape(-1), minlength=sm.n_classes)
    weights = losses.class_weights(counts, cfg.loss.weight_scheme)
    return DatasetBundle(
        train=train,
        eval_=ev,
        test=test,
        stage_map=sm,
        class_weights=weights,
        samples_per_epoch=int(spe),
        rate_hz=float(cfg.rate_hz),
        t_epochs=cfg.t_epochs,
    )


def load_bundle(cfg: ExperimentConfig) -> DatasetBundle:
    return build_bundle(load_subject_dirs(cfg.data_dir), cfg)


# ---------------------------------------------------------------------------
# run logging

class RunLog:
    """Per-epoch records (deterministic) plus wall-clock sidecar data."""

    def __init__(self, run_name: str):
        self.run_name = run_name
        self.records = []
        self.timings = {}
        self.best = {}

    def add(self, **record):
        self.records.append(record)

    def save(self, log_dir):
        os.makedirs(log_dir, exist_ok=True)
        path = os.path.join(log_dir, f"{self.run_name}.jsonl")
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        side = os.path.join(log_dir, f"{self.run_name}.timings.json")
        with open(side, "w") as fh:
            json.dump({"timings": self.timings, "best": self.best}, fh, indent=2)
        return path


# ---------------------------------------------------------------------------
# teacher target caches

def _select_layers(loss_cfg: losses.LossConfig, n_features: int):
    layers = loss_cfg.at_layers
    if layers is None:
        return list(range(n_features))
    layers = [int(i) for i in layers]
    bad = [i for i in layers if not 0 <= i < n_features]
    if bad:
        raise ConfigError(f"at_layers indices {bad} outside [0, {n_features})")
    if not layers:
        raise ConfigError("at_layers must not be empty")
    return layers


def _check_congruent(student_feats, teacher_feats):
    for j, (sf, tf) in enumerate(zip(student_feats, teacher_feats)):
        if sf.data.shape[2] != tf.shape[2] or sf.data.shape[0] != tf.shape[0]:
            raise ShapeError(
                f"feature layer {j}: student {sf.data.shape} vs teacher {tf.shape} "
                "(teacher and student configs have drifted apart)"
            )


def teacher_targets(teacher: model.SegNet, batches, layers, need_attention=True,
                    need_logits=True):
    """Precompute per-batch attention targets and logits of a frozen net."""
    attn = []
    logits = []
    for b in batches:
        lg, feats = teacher.forward_with_features(b.teacher, training=False)
        attn.append(
            [losses.attention_target(feats[j].data) for j in layers]
            if need_attention
            else None
        )
        logits.append(lg.data if need_logits else None)
    return attn, logits


# ---------------------------------------------------------------------------
# training loops

def _net_config(cfg: ExperimentConfig, bundle: DatasetBundle) -> model.NetConfig:
    return model.NetConfig(
        n_classes=bundle.stage_map.n_classes,
        samples_per_epoch=bundle.samples_per_epoch,
        base_filters=cfg.base_filters,
        kernel_size=cfg.kernel_size,
    )


def _eval_predictions(net: model.SegNet, batches, signal: str):
    """Greedy per-epoch predictions in split order."""
    rows = []
    for bi, b in enumerate(batches):
        x = b.teacher if signal == "teacher" else b.student
        logits = net.forward(x, training=False).data
        pred = logits.argmax(axis=1)
        rows.append((bi, b.labels, pred, logits))
    return rows


def _eval_wf1(net, batches, signal, n_classes) -> float:
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    for _, labels, pred, _ in _eval_predictions(net, batches, signal):
        conf += metrics.confusion_matrix(labels.reshape(-1), pred.reshape(-1), n_classes)
    if conf.sum() == 0:
        return 0.0
    return metrics.weighted_f1(conf)


def _finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericsError(f"{what} became non-finite ({value}); aborting the run")
    return value


def _ckpt_path(cfg: ExperimentConfig, tag: str) -> str:
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    return os.path.join(cfg.checkpoint_dir, f"{tag}.ckpt")


def _run_name(cfg: ExperimentConfig, fallback: str) -> str:
    return cfg.run_name if cfg.run_name else fallback


def train_teacher(cfg: ExperimentConfig, bundle: DatasetBundle = None):
    """WCE-only training on the teacher modality; keeps the best-eval net."""
    cfg.validate()
    if bundle is None:
        bundle = load_bundle(cfg)
    run_name = _run_name(cfg, f"teacher-seed{cfg.seed}")
    log = RunLog(run_name)
    net = model.SegNet(_net_config(cfg, bundle), seed=cfg.seed)
    path = _ckpt_path(cfg, run_name)
    _classifier_stage(
        cfg, bundle, net, signal="teacher", beta=0.0, teacher_logits=None,
        max_epochs=cfg.teacher_epochs, log=log, ckpt_path=path,
    )
    log.save(cfg.log_dir)
    return net, log, path


def _classifier_stage(cfg, bundle, net, signal, beta, teacher_logits, max_epochs,
                      log, ckpt_path):
    t0 = time.perf_counter()
    opt = optim.Adam(net.parameters(), cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    weights = bundle.class_weights
    n_classes = bundle.stage_map.n_classes
    best_wf1 = -1.0
    best_epoch = -1
    since_best = 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(bundle.train))
        total = 0.0
        for bi in order:
            b = bundle.train[bi]
            x = b.teacher if signal == "teacher" else b.student
            opt.zero_grad()
            with ad.Tape() as tape:
                logits = net.forward(x, training=True)
                loss = losses.combined_loss(
                    logits, b.labels, weights,
                    None if beta == 0.0 else teacher_logits[bi],
                    beta=beta, temperature=cfg.loss.temperature,
                    direction=cfg.loss.kd_direction,
                )
                tape.backward(loss)
            opt.step()
            total += _finite(loss.item(), "training loss")
        train_loss = total / len(bundle.train)
        wf1 = _eval_wf1(net, bundle.eval_, signal, n_classes)
        log.add(epoch=epoch, stage=CLASSIFIER_STAGE, train_loss=train_loss,
                eval_wf1=wf1)
        if wf1 > best_wf1:
            best_wf1 = wf1
            best_epoch = epoch
            since_best = 0
            model.save_checkpoint(net, ckpt_path)
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    log.timings["classifier_stage_s"] = time.perf_counter() - t0
    log.best.update(
        {"eval_wf1": best_wf1, "epoch": best_epoch, "checkpoint": ckpt_path}
    )
    best = model.load_checkpoint(ckpt_path)
    # keep training-mode state out of the returned net
    for (_, p), (_, q) in zip(net.named_parameters(), best.named_parameters()):
        p.data = q.data
    for (_, b_), (_, q_) in zip(net.named_buffers(), best.named_buffers()):
        b_[...] = q_
    return best_wf1, best_epoch


def distill_features(cfg: ExperimentConfig, bundle: DatasetBundle,
                     teacher: model.SegNet, log: RunLog = None,
                     ckpt_path: str = None):
    """Stage 1: align student attention maps with the frozen teacher's.

    Returns (student net loaded with the best-eval-loss weights, log).
    """
    cfg.validate()
    teacher.freeze()
    run_name = _run_name(cfg, f"{cfg.method}-seed{cfg.seed}")
    if log is None:
        log = RunLog(run_name)
    if ckpt_path is None:
        ckpt_path = _ckpt_path(cfg, run_name + "-features")
    t0 = time.perf_counter()
    net = model.SegNet(_net_config(cfg, bundle), seed=cfg.seed)
    n_feats = 2 * model.DEPTH + 1
    layers = _select_layers(cfg.loss, n_feats)
    train_attn, _ = teacher_targets(teacher, bundle.train, layers, need_logits=False)
    eval_attn, _ = teacher_targets(teacher, bundle.eval_, layers, need_logits=False)

    def feature_loss(batch, attn, training):
        _, feats = net.forward_with_features(batch.student, training=training)
        sel = [feats[j] for j in layers]
        _check_congruent(sel, attn)
        return losses.at_loss(sel, attn)

    opt = optim.Adam(net.parameters(), cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    best_loss = np.inf
    best_epoch = -1
    since_best = 0
    for epoch in range(1, cfg.feature_epochs + 1):
        order = rng.permutation(len(bundle.train))
        total = 0.0
        for bi in order:
            opt.zero_grad()
            with ad.Tape() as tape:
                loss = feature_loss(bundle.train[bi], train_attn[bi], True)
                tape.backward(loss)
            opt.step()
            total += _finite(loss.item(), "feature loss")
        train_loss = total / len(bundle.train)
        ev = 0.0
        for bi, b in enumerate(bundle.eval_):
            with ad.Tape():
                ev += feature_loss(b, eval_attn[bi], False).item()
        ev = _finite(ev / max(len(bundle.eval_), 1), "eval feature loss")
        log.add(epoch=epoch, stage=FEATURE_STAGE, train_loss=train_loss, eval_loss=ev)
        if ev < best_loss:
            best_loss = ev
            best_epoch = epoch
            since_best = 0
            model.save_checkpoint(net, ckpt_path)
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    log.timings["feature_stage_s"] = time.perf_counter() - t0
    log.best.update(
        {
            "feature_eval_loss": best_loss,
            "feature_epoch": best_epoch,
            "feature_checkpoint": ckpt_path,
        }
    )
    return model.load_checkpoint(ckpt_path), log


def train_student(cfg: ExperimentConfig, bundle: DatasetBundle = None,
                  teacher: model.SegNet = None, init_student: model.SegNet = None):
    """Run the student method end to end (stage 1 where applicable, then
    stage 2). Returns (net, log, checkpoint path)."""
    cfg.validate()
    if cfg.method == "teacher-base":
        return train_teacher(cfg, bundle)
    if bundle is None:
        bundle = load_bundle(cfg)
    needs_teacher = cfg.method in ("FB+WCE", "RB+WCE", "FB+RB+WCE")
    if needs_teacher and teacher is None:
        if not cfg.teacher_checkpoint:
            raise ConfigError(f"method {cfg.method} requires a teacher checkpoint")
        teacher = model.load_checkpoint(cfg.teacher_checkpoint)
    if teacher is not None:
        teacher.freeze()
    run_name = _run_name(cfg, f"{cfg.method}-seed{cfg.seed}")
    log = RunLog(run_name)
    ckpt_path = _ckpt_path(cfg, run_name)

    if cfg.method in ("FB+WCE", "FB+RB+WCE"):
        if init_student is None and cfg.init_checkpoint:
            init_student = model.load_checkpoint(cfg.init_checkpoint)
        if init_student is None:
            init_student, log = distill_features(cfg, bundle, teacher, log=log)
        net = init_student
    else:
        net = model.SegNet(_net_config(cfg, bundle), seed=cfg.seed)

    beta = cfg.step2_beta()
    teacher_logits = None
    if beta > 0.0:
        _, teacher_logits = teacher_targets(
            teacher, bundle.train, [], need_attention=False
        )
    _classifier_stage(
        cfg, bundle, net, signal="student", beta=beta,
        teacher_logits=teacher_logits, max_epochs=cfg.epochs, log=log,
        ckpt_path=ckpt_path,
    )
    log.save(cfg.log_dir)
    return net, log, ckpt_path


# ---------------------------------------------------------------------------
# evaluation

def evaluate(net, batches, stage_map: dat.StageMap, signal: str = "student",
             dump_path: str = None) -> metrics.EvalReport:
    """Eval-mode predictions over a split -> EvalReport (+ CSV dump).

    The dump has one row per scored epoch:
    sequence,epoch,true,pred,logit_0..logit_{C-1}.
    """
    if isinstance(net, (str, os.PathLike)):
        net = model.load_checkpoint(net)
    if net.config.n_classes != stage_map.n_classes:
        raise ConfigError(
            f"checkpoint has {net.config.n_classes} classes but the dataset "
            f"scheme defines {stage_map.n_classes}"
        )
    n_classes = stage_map.n_classes
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    rows = []
    seq = 0
    for _, labels, pred, logits in _eval_predictions(net, batches, signal):
        conf += metrics.confusion_matrix(labels.reshape(-1), pred.reshape(-1), n_classes)
        for item in range(labels.shape[0]):
            for e in range(labels.shape[1]):
                rows.append(
                    [seq, e, int(labels[item, e]), int(pred[item, e])]
                    + [float(v) for v in logits[item, :, e]]
                )
            seq += 1
    if dump_path:
        os.makedirs(os.path.dirname(dump_path) or ".", exist_ok=True)
        header = "sequence,epoch,true,pred," + ",".join(
            f"logit_{c}" for c in range(n_classes)
        )
        with open(dump_path, "w") as fh:
            fh.write(header + "\n")
            for r in rows:
                fh.write(",".join(map(repr, r[:4])) + ",")
                fh.write(",".join(map(repr, r[4:])) + "\n")
    return metrics.report(conf, stage_map.class_names)


# ---------------------------------------------------------------------------
# bottleneck feature comparison

BOTTLENECK_INDEX = model.DEPTH  # feature list: 5 encoder maps, then this


def _epoch_cosines(a: np.ndarray, b: np.ndarray, n_epochs: int) -> np.ndarray:
    """Cosine similarity per scoring epoch between two (C, Lb) maps."""
    if a.shape != b.shape:
        raise ShapeError(f"bottleneck maps differ: {a.shape} vs {b.shape}")
    lb = a.shape[1]
    out = np.empty(n_epochs)
    for e in range(n_epochs):
        lo = e * lb // n_epochs
        hi = max((e + 1) * lb // n_epochs, lo + 1)
        va = a[:, lo:hi].reshape(-1)
        vb = b[:, lo:hi].reshape(-1)
        na = np.linalg.norm(va)
        nb = np.linalg.norm(vb)
        out[e] = float(va @ vb / (na * nb)) if na > 0 and nb > 0 else 0.0
    return out


def dump_bottleneck(teacher: model.SegNet, base: model.SegNet,
                    distilled: model.SegNet, batch: PairedBatch, out_dir: str):
    """Export bottleneck activations of one sequence for all three nets.

    Writes <name>.csv matrices (channels x bottleneck length) and a
    summary JSON with per-epoch cosine similarities against the teacher.
    Returns the summary dict.
    """
    for name, net in (("base", base), ("distilled", distilled)):
        if net.config.n_classes != teacher.config.n_classes or \
                net.config.base_filters != teacher.config.base_filters:
            raise ConfigError(f"{name} net config differs from the teacher's")
    os.makedirs(out_dir, exist_ok=True)
    n_epochs = batch.labels.shape[1]
    maps = {}
    preds = {}
    for name, net, sig in (
        ("teacher", teacher, batch.teacher),
        ("base", base, batch.student),
        ("distilled", distilled, batch.student),
    ):
        logits, feats = net.forward_with_features(sig[:1], training=False)
        maps[name] = feats[BOTTLENECK_INDEX].data[0]
        preds[name] = logits.data[0].argmax(axis=0)
        np.savetxt(os.path.join(out_dir, f"{name}.csv"), maps[name], delimiter=",")
    cos_base = _epoch_cosines(maps["teacher"], maps["base"], n_epochs)
    cos_dist = _epoch_cosines(maps["teacher"], maps["distilled"], n_epochs)
    truth = batch.labels[0]
    case1 = (preds["distilled"] == truth) & (preds["base"] != truth)
    summary = {
        "base_vs_teacher_mean_cosine": float(cos_base.mean()),
        "distilled_vs_teacher_mean_cosine": float(cos_dist.mean()),
        "per_epoch_cosine_base": [float(v) for v in cos_base],
        "per_epoch_cosine_distilled": [float(v) for v in cos_dist],
        "case1_epochs": [int(i) for i in np.flatnonzero(case1)],
        "true": [int(v) for v in truth],
        "pred_base": [int(v) for v in preds["base"]],
        "pred_distilled": [int(v) for v in preds["distilled"]],
        "pred_teacher": [int(v) for v in preds["teacher"]],
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


# ---------------------------------------------------------------------------
# multi-method comparison

def run_comparison(cfg: ExperimentConfig, seeds, methods=None, subjects=None,
                   out_dir: str = None):
    """Train the teacher once, then every method per seed; evaluate all on
    the test split and write pooled tables.

    The stage-1 checkpoint is shared between FB+WCE and FB+RB+WCE for a
    given seed (identical objective, identical trajectory).
    """
    methods = list(methods) if methods else ["student-base", "RB+WCE", "FB+WCE", "FB+RB+WCE"]
    bad = [m for m in methods if m not in METHODS or m == "teacher-base"]
    if bad:
        raise ConfigError(f"methods {bad} not runnable in a comparison")
    cfg.validate()
    if subjects is None:
        subjects = load_subject_dirs(cfg.data_dir)
    bundle = build_bundle(subjects, cfg)
    out_dir = out_dir or cfg.log_dir
    os.makedirs(out_dir, exist_ok=True)

    t_cfg = replace(cfg, method="teacher-base", run_name=f"teacher-seed{cfg.seed}")
    teacher, t_log, t_ckpt = train_teacher(t_cfg, bundle)
    teacher.freeze()
    results = {
        "teacher-base": {
            "eval_wf1": {str(cfg.seed): t_log.best["eval_wf1"]},
            "checkpoints": {str(cfg.seed): t_ckpt},
        }
    }
    reports = {
        "teacher-base": evaluate(teacher, bundle.test, bundle.stage_map, "teacher")
    }

    pooled = {m: np.zeros((bundle.stage_map.n_classes,) * 2, dtype=np.int64) for m in methods}
    for m in methods:
        results[m] = {"eval_wf1": {}, "test_wf1": {}, "checkpoints": {}}
    for seed in seeds:
        step1_cache = None
        for m in methods:
            run_cfg = replace(
                cfg, method=m, seed=seed, run_name=f"{m}-seed{seed}"
            )
            init = None
            if m in ("FB+WCE", "FB+RB+WCE"):
                if step1_cache is None:
                    _, f_log = distill_features(
                        replace(run_cfg, run_name=f"features-seed{seed}"),
                        bundle, teacher,
                    )
                    f_log.save(cfg.log_dir)
                    step1_cache = _ckpt_path(cfg, f"features-seed{seed}-features")
                init = model.load_checkpoint(step1_cache)
            net, log, ckpt = train_student(
                run_cfg, bundle, teacher=teacher if m != "student-base" else None,
                init_student=init,
            )
            rep = evaluate(net, bundle.test, bundle.stage_map, "student")
            pooled[m] += rep.confusion
            results[m]["eval_wf1"][str(seed)] = log.best["eval_wf1"]
            results[m]["test_wf1"][str(seed)] = rep.weighted_f1
            results[m]["checkpoints"][str(seed)] = ckpt
    for m in methods:
        results[m]["eval_wf1_mean"] = float(
            np.mean(list(results[m]["eval_wf1"].values()))
        )
        results[m]["test_wf1_mean"] = float(
            np.mean(list(results[m]["test_wf1"].values()))
        )
        reports[m] = metrics.report(pooled[m], bundle.stage_map.class_names)
    tables = metrics.format_tables(reports, bundle.stage_map.class_names)
    with open(os.path.join(out_dir, "comparison.json"), "w") as fh:
        json.dump(results, fh, indent=2)
    with open(os.path.join(out_dir, "tables.txt"), "w") as fh:
        fh.write(tables + "\n")
    return results, reports, tables
