"""Acceptance gate: one test per shipped criterion, at stated tolerances.

Run the fast criteria only with:  pytest tests/test_acceptance.py -m "not slow"
"""

import os
import time

import numpy as np
import pytest

import sleepkd.autodiff as ad
from sleepkd import data as dat
from sleepkd import losses, metrics, model, optim, synth, training

RNG = np.random.default_rng(20260814)


def _leaf(*shape, scale=1.0):
    return ad.param(scale * RNG.standard_normal(shape))


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness for every op and every loss


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    tol_op, tol_comp = 1e-4, 1e-3
    worst_ops = {}

    def check(name, builder, params):
        err = ad.grad_check(builder, params, rng=np.random.default_rng(1))
        worst_ops[name] = err
        assert err < tol_op, f"{name}: {err:.2e}"

    a, b = _leaf(2, 3, 8), _leaf(2, 3, 8)
    check("add", lambda: ad.sum_all(ad.mul(ad.add(a, b), ad.add(a, b))), [a, b])
    check("sub", lambda: ad.sum_all(ad.mul(ad.sub(a, b), ad.sub(a, b))), [a, b])
    check("mul", lambda: ad.sum_all(ad.mul(a, b)), [a, b])
    check("scale", lambda: ad.sum_all(ad.mul(ad.scale(a, 1.7), a)), [a])
    c = np.linspace(-1, 1, 48).reshape(2, 3, 8)
    check("add_const", lambda: ad.sum_all(ad.mul(ad.add_const(a, c), a)), [a])
    check("mul_const", lambda: ad.sum_all(ad.mul(ad.mul_const(a, c), a)), [a])
    g = _leaf(2, 1, 1)
    check("batch_mul", lambda: ad.sum_all(ad.mul(ad.batch_mul(a, g), a)), [a, g])
    pos = ad.param(0.5 + RNG.random((2, 3, 8)))
    check("recip", lambda: ad.sum_all(ad.mul(ad.recip(pos), pos)), [pos])
    check("exp", lambda: ad.sum_all(ad.exp(ad.scale(a, 0.3))), [a])
    check("sqrt_safe", lambda: ad.sum_all(ad.sqrt_safe(ad.add_const(ad.mul(a, a), 0.1))), [a])
    check("channel_sum", lambda: ad.sum_all(ad.mul(ad.channel_sum(a), ad.channel_sum(a))), [a])
    check("batch_sum", lambda: ad.sum_all(ad.mul(ad.batch_sum(a), ad.batch_sum(a))), [a])
    check("sum_all", lambda: ad.mul(ad.sum_all(a), ad.sum_all(a)), [a])
    check("mean_reduce", lambda: ad.mul(ad.mean_reduce(a), ad.mean_reduce(a)), [a])
    x = _leaf(1, 2, 14)
    w = _leaf(3, 2, 5, scale=0.5)
    bias = _leaf(3)
    check("conv1d", lambda: ad.sum_all(ad.mul(ad.conv1d(x, w, bias), ad.conv1d(x, w, bias))), [x, w, bias])
    perm = ad.param(RNG.permutation(16).astype(np.float64).reshape(1, 2, 8))
    check("maxpool2", lambda: ad.sum_all(ad.mul(ad.maxpool2(perm), ad.maxpool2(perm))), [perm])
    check("upsample2", lambda: ad.sum_all(ad.mul(ad.upsample2(a), ad.upsample2(a))), [a])
    check("avgpool1d", lambda: ad.sum_all(ad.mul(ad.avgpool1d(a, 4), ad.avgpool1d(a, 4))), [a])
    check("crop_length", lambda: ad.sum_all(ad.mul(ad.crop_length(a, 1, 5), ad.crop_length(a, 1, 5))), [a])
    check("concat_channels", lambda: ad.sum_all(ad.mul(ad.concat_channels([a, b]), ad.concat_channels([a, b]))), [a, b])
    off = ad.param(RNG.standard_normal((2, 3, 8)) + 0.3)  # keep off the ELU kink
    check("elu", lambda: ad.sum_all(ad.mul(ad.elu(off), ad.elu(off))), [off])
    check("log_softmax", lambda: ad.sum_all(ad.mul(ad.log_softmax(a, 2.0), ad.log_softmax(a, 2.0))), [a])
    gamma, beta_p = _leaf(3), _leaf(3)

    def bn_train():
        y, _, _ = ad.batchnorm_train(a, gamma, beta_p)
        return ad.sum_all(ad.mul(y, y))

    check("batchnorm_train", bn_train, [a, gamma, beta_p])
    mu = RNG.standard_normal(3)
    var = 0.5 + RNG.random(3)
    check(
        "batchnorm_eval",
        lambda: ad.sum_all(ad.mul(ad.batchnorm_eval(a, gamma, beta_p, mu, var),
                                  ad.batchnorm_eval(a, gamma, beta_p, mu, var))),
        [a, gamma, beta_p],
    )

    # full losses as composites
    logits = _leaf(2, 4, 5)
    labels = RNG.integers(0, 4, size=(2, 5))
    weights = 0.5 + RNG.random(4)
    err = ad.grad_check(lambda: losses.wce_loss(logits, labels, weights), [logits],
                        rng=np.random.default_rng(2))
    assert err < tol_comp, f"wce: {err:.2e}"
    feats = [_leaf(2, 3, 6), _leaf(2, 5, 4)]
    targets = [losses.attention_target(RNG.standard_normal(f.data.shape)) for f in feats]
    err = ad.grad_check(lambda: losses.at_loss(feats, targets), feats,
                        rng=np.random.default_rng(3))
    assert err < tol_comp, f"at: {err:.2e}"
    t_logits = RNG.standard_normal((2, 4, 5))
    for direction in ("teacher", "student"):
        err = ad.grad_check(
            lambda: losses.kd_loss(logits, t_logits, 2.0, direction), [logits],
            rng=np.random.default_rng(4))
        assert err < tol_comp, f"kd[{direction}]: {err:.2e}"
    err = ad.grad_check(
        lambda: losses.combined_loss(logits, labels, weights, t_logits,
                                     beta=0.4, temperature=2.0), [logits],
        rng=np.random.default_rng(5))
    assert err < tol_comp, f"combined: {err:.2e}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"criterion 1 took {elapsed:.1f} s"
    print(f"criterion 1: PASS - {len(worst_ops)} ops < 1e-4, 4 losses < 1e-3, "
          f"{elapsed:.1f} s")


# ---------------------------------------------------------------------------
# criterion 2: loss oracles, 100 randomized shapes each, 1e-10


def _wce_oracle(z, labels, w):
    b, c, t = z.shape
    num = den = 0.0
    for i in range(b):
        for k in range(t):
            lse = np.log(np.exp(z[i, :, k] - z[i, :, k].max()).sum()) + z[i, :, k].max()
            y = labels[i, k]
            num += w[y] * (lse - z[i, y, k])
            den += w[y]
    return num / den


def _at_oracle(feats, targets):
    total = 0.0
    for f, t in zip(feats, targets):
        b = f.shape[0]
        acc = 0.0
        for i in range(b):
            q = (f[i] ** 2).sum(axis=0)
            n = q / (np.sqrt((q**2).sum()) + losses.AT_EPS)
            acc += np.sqrt(((n - t[i, 0]) ** 2).sum())
        total += acc / b
    return total


def _kd_oracle(zs, zt, temp, direction):
    b, c, t = zs.shape
    total = 0.0
    for i in range(b):
        for k in range(t):
            es = np.exp(zs[i, :, k] / temp - (zs[i, :, k] / temp).max())
            et = np.exp(zt[i, :, k] / temp - (zt[i, :, k] / temp).max())
            ps, pt = es / es.sum(), et / et.sum()
            if direction == "teacher":
                total += (pt * (np.log(pt) - np.log(ps))).sum()
            else:
                total += (ps * (np.log(ps) - np.log(pt))).sum()
    return total / (b * t)


def test_criterion_2_loss_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    for trial in range(100):
        b, c, t = rng.integers(1, 4), rng.integers(2, 6), rng.integers(1, 7)
        z = ad.DiffArray(rng.standard_normal((b, c, t)) * 2)
        labels = rng.integers(0, c, size=(b, t))
        w = 0.1 + rng.random(c)
        got = losses.wce_loss(z, labels, w).item()
        assert abs(got - _wce_oracle(z.data, labels, w)) < 1e-10
    for trial in range(100):
        n_layers = int(rng.integers(1, 4))
        b = int(rng.integers(1, 3))
        feats = [ad.DiffArray(rng.standard_normal((b, int(rng.integers(2, 5)),
                                                   int(rng.integers(3, 13)))))
                 for _ in range(n_layers)]
        targets = [losses.attention_target(rng.standard_normal(f.data.shape))
                   for f in feats]
        got = losses.at_loss(feats, targets).item()
        want = _at_oracle([f.data for f in feats], targets)
        assert abs(got - want) < 1e-10
    for trial in range(100):
        b, c, t = rng.integers(1, 4), rng.integers(2, 6), rng.integers(1, 7)
        zs = ad.DiffArray(rng.standard_normal((b, c, t)) * 2)
        zt = rng.standard_normal((b, c, t)) * 2
        temp = float(rng.choice([0.7, 1.0, 2.0, 4.0]))
        direction = "teacher" if trial % 2 == 0 else "student"
        got = losses.kd_loss(zs, zt, temp, direction).item()
        assert abs(got - _kd_oracle(zs.data, zt, temp, direction)) < 1e-10
    for trial in range(100):
        b, c, t = rng.integers(1, 4), rng.integers(2, 6), rng.integers(1, 7)
        zs = ad.DiffArray(rng.standard_normal((b, c, t)))
        zt = rng.standard_normal((b, c, t))
        labels = rng.integers(0, c, size=(b, t))
        w = 0.1 + rng.random(c)
        beta = float(rng.choice([0.0, 0.25, 0.5, 1.0]))
        temp = float(rng.choice([1.0, 2.0]))
        got = losses.combined_loss(zs, labels, w, zt if beta > 0 else None,
                                   beta=beta, temperature=temp).item()
        want = (1 - beta) * _wce_oracle(zs.data, labels, w)
        if beta > 0:
            want += beta * temp * temp * _kd_oracle(zs.data, zt, temp, "teacher")
        assert abs(got - want) < 1e-10
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"criterion 2 took {elapsed:.1f} s"
    print(f"criterion 2: PASS - 4 losses x 100 shapes within 1e-10, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# criterion 3: analytic anchors


def test_criterion_3_analytic_anchors():
    for c in (2, 3, 4, 5):
        z = ad.DiffArray(np.full((2, c, 6), 1.234))
        labels = RNG.integers(0, c, size=(2, 6))
        w = 0.5 + RNG.random(c)
        assert abs(losses.wce_loss(z, labels, w).item() - np.log(c)) < 1e-12
    f = RNG.standard_normal((2, 3, 10))
    target = losses.attention_target(f)
    self_loss = losses.at_loss([ad.DiffArray(f.copy())], [target]).item()
    assert self_loss == 0.0
    z = RNG.standard_normal((2, 4, 6))
    assert losses.kd_loss(ad.DiffArray(z.copy()), z.copy(), 2.0).item() == 0.0
    zs = ad.DiffArray(RNG.standard_normal((2, 4, 6)))
    labels = RNG.integers(0, 4, size=(2, 6))
    w = np.ones(4)
    wce = losses.wce_loss(zs, labels, w)
    comb = losses.combined_loss(zs, labels, w, None, beta=0.0)
    assert comb.item() == wce.item()
    assert comb.data.tobytes() == wce.data.tobytes()
    print("criterion 3: PASS - ln C, self-AT = 0, KD(p,p) = 0, beta=0 bit-equal")


# ---------------------------------------------------------------------------
# criterion 4: architecture contract at full scale


def test_criterion_4_architecture_contract():
    t0 = time.perf_counter()
    spe = 6000  # 30 s at 200 Hz
    x = RNG.standard_normal((2, 1, 36 * spe))
    for c in (3, 5):
        net = model.SegNet(model.NetConfig(n_classes=c, samples_per_epoch=spe,
                                           base_filters=8), seed=0)
        out = net.forward(x, training=False)
        assert out.data.shape == (2, c, 36)
    teacher = model.SegNet(model.NetConfig(n_classes=4, samples_per_epoch=spe,
                                           base_filters=8), seed=0)
    student = model.SegNet(model.NetConfig(n_classes=4, samples_per_epoch=spe,
                                           base_filters=4), seed=1)
    out_t, feats_t = teacher.forward_with_features(x, training=False)
    out_s, feats_s = student.forward_with_features(x, training=False)
    assert out_t.data.shape == out_s.data.shape == (2, 4, 36)
    assert len(feats_t) == len(feats_s) == 11
    for ft, fs in zip(feats_t, feats_s):
        assert ft.data.shape[0] == fs.data.shape[0]
        assert ft.data.shape[2] == fs.data.shape[2]
    # variable-length inference: half-length sequence through the same net
    out18 = teacher.forward(x[:, :, : 18 * spe], training=False)
    assert out18.data.shape == (2, 4, 18)
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0, f"criterion 4 took {elapsed:.1f} s"
    print(f"criterion 4: PASS - (2,C,36) for C in 3/4/5, 11 congruent features, "
          f"T=18 ok, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# criterion 5: weighted-F1 oracle


def _wf1_reference(conf):
    c = conf.shape[0]
    total = conf.sum()
    score = 0.0
    for k in range(c):
        tp = conf[k, k]
        fn = conf[k].sum() - tp
        fp = conf[:, k].sum() - tp
        support = tp + fn
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        score += support * f1
    return score / total


def test_criterion_5_weighted_f1_oracle():
    rng = np.random.default_rng(5)
    for trial in range(100):
        c = int(rng.integers(2, 7))
        conf = rng.integers(0, 40, size=(c, c)).astype(np.int64)
        conf[rng.integers(0, c), rng.integers(0, c)] += 1  # keep it non-empty
        got = metrics.weighted_f1(conf)
        assert abs(got - _wf1_reference(conf)) < 1e-12
    hand = np.array([[8, 2], [1, 9]], dtype=np.int64)
    got = metrics.weighted_f1(hand)
    assert abs(got - 113.0 / 133.0) < 1e-12
    assert round(got, 4) == 0.8496
    print("criterion 5: PASS - 100 matrices within 1e-12, hand case 0.8496")


# ---------------------------------------------------------------------------
# criterion 6: preprocessing bit-exactness


def test_criterion_6_preprocessing():
    canonical = ("W", "N1", "N2", "N3", "N4", "R")
    hyp = dat.Hypnogram("x", 30.0, canonical)
    assert dat.merge_stages(hyp, 5).labels == ("W", "N1", "N2", "N3", "N3", "R")
    assert dat.merge_stages(hyp, 4).labels == ("W", "L", "L", "D", "D", "R")
    assert dat.merge_stages(hyp, 3).labels == ("W", "N", "N", "N", "N", "R")

    rate = 200
    n_epochs = 12
    signal = np.arange(n_epochs * 20 * rate, dtype=np.float64)
    labels = [f"e{i}" for i in range(n_epochs)]
    segs, kept = dat.widen_epochs(signal, labels, rate)
    k = kept.index("e5")  # the epoch scored at t = 100 s
    np.testing.assert_array_equal(segs[k], np.arange(19000, 25000))

    ids = [f"{i:03d}" for i in range(23)]
    for seed in range(1000):
        tr, ev, te = dat.split_subjects(ids, (80, 10, 10), seed)
        parts = list(tr) + list(ev) + list(te)
        assert len(parts) == len(ids)
        assert set(parts) == set(ids)
        assert not (set(tr) & set(ev)) and not (set(tr) & set(te))
        assert not (set(ev) & set(te))
    print("criterion 6: PASS - merges exact, widen [19000,25000), 1000 disjoint splits")


# ---------------------------------------------------------------------------
# criterion 7: synthetic end-to-end distillation ordering (slow)


@pytest.mark.slow
def test_criterion_7_end_to_end_distillation(tmp_path):
    t0 = time.perf_counter()
    assert synth.GENERATOR_VERSION == 1
    subjects = synth.make_dataset(20, 120.0, base_seed=100)
    cfg = training.ExperimentConfig(
        method="student-base",
        scheme=4,
        seed=1,
        epochs=12,
        feature_epochs=6,
        teacher_epochs=20,
        lr=3e-3,
        batch_size=8,
        t_epochs=36,
        rate_hz=40,
        base_filters=2,
        kernel_size=5,
        patience=8,
        split_seed=0,
        checkpoint_dir=str(tmp_path / "ck"),
        log_dir=str(tmp_path / "lg"),
        loss=losses.LossConfig(beta=0.3, temperature=4.0),
    )
    results, reports, tables = training.run_comparison(
        cfg, seeds=[1, 2, 3], subjects=subjects, out_dir=str(tmp_path / "out")
    )
    elapsed = time.perf_counter() - t0
    teacher_eval = results["teacher-base"]["eval_wf1"][str(cfg.seed)]
    teacher_test = reports["teacher-base"].weighted_f1
    base_mean = results["student-base"]["test_wf1_mean"]
    gaps = {m: results[m]["test_wf1_mean"] - base_mean
            for m in ("FB+WCE", "RB+WCE", "FB+RB+WCE")}
    print(f"criterion 7: teacher eval {teacher_eval:.4f} test {teacher_test:.4f}; "
          f"student-base mean {base_mean:.4f}; "
          + ", ".join(f"{m} +{g:.4f}" for m, g in gaps.items())
          + f"; {elapsed / 60:.1f} min")
    assert teacher_eval >= 0.95
    assert base_mean < teacher_test
    assert results["student-base"]["eval_wf1_mean"] < teacher_eval
    for m, gap in gaps.items():
        assert gap >= 0.02, f"{m} gap {gap:.4f} < 0.02"
    assert elapsed <= 3600.0, f"criterion 7 took {elapsed / 60:.1f} min"
    print("criterion 7: PASS")


# ---------------------------------------------------------------------------
# criterion 8: overfit sanity (slow-ish)


@pytest.mark.slow
def test_criterion_8_overfit_four_sequences():
    t0 = time.perf_counter()
    subjects = synth.make_dataset(1, 80.0, base_seed=42)
    sm = dat.StageMap.for_scheme(4)
    _, s_rec, hyp = subjects[0]
    s40 = dat.Recording(s_rec.subject_id, s_rec.modality, 40.0,
                        dat.resample(s_rec.samples, 200, 40))
    seqs = dat.make_sequences(s40, hyp, 36, stage_map=sm)[:4]
    assert len(seqs) == 4
    counts = np.bincount(np.concatenate([s.labels.reshape(-1) for s in seqs]),
                         minlength=4)
    weights = losses.class_weights(counts, "inverse")
    net = model.SegNet(model.NetConfig(n_classes=4, samples_per_epoch=40 * 30,
                                       base_filters=4, kernel_size=5), seed=0)
    opt = optim.Adam(net.parameters(), 3e-3)
    steps = 0
    acc = 0.0
    while steps < 500:
        for s in seqs:
            opt.zero_grad()
            with ad.Tape() as tape:
                logits = net.forward(s.signal, training=True)
                loss = losses.wce_loss(logits, s.labels, weights)
                tape.backward(loss)
            opt.step()
            steps += 1
        if steps % 20 == 0:
            hits = total = 0
            for s in seqs:
                pred = net.forward(s.signal, training=False).data.argmax(axis=1)
                hits += int((pred == s.labels).sum())
                total += s.labels.size
            acc = hits / total
            if acc >= 0.99:
                break
    elapsed = time.perf_counter() - t0
    print(f"criterion 8: accuracy {acc:.4f} after {steps} steps, {elapsed:.1f} s")
    assert acc >= 0.99, f"only {acc:.4f} after {steps} steps"
    assert steps <= 500
    assert elapsed < 300.0, f"criterion 8 took {elapsed:.1f} s"
    print("criterion 8: PASS")


# ---------------------------------------------------------------------------
# criterion 9: bit-identical reruns


def test_criterion_9_reproducibility(tmp_path):
    subjects = synth.make_dataset(4, 20.0, base_seed=3)
    blobs = []
    for trial in ("a", "b"):
        cfg = training.ExperimentConfig(
            method="student-base", scheme=4, seed=5, epochs=2,
            feature_epochs=1, teacher_epochs=1, lr=3e-3, batch_size=2,
            t_epochs=8, rate_hz=40, base_filters=1, kernel_size=3,
            patience=5, split_seed=0, split_ratios=(50, 25, 25),
            checkpoint_dir=str(tmp_path / trial / "ck"),
            log_dir=str(tmp_path / trial / "lg"),
        )
        bundle = training.build_bundle(subjects, cfg)
        _, log, ckpt = training.train_student(cfg, bundle)
        log_path = os.path.join(cfg.log_dir, f"{log.run_name}.jsonl")
        blobs.append((open(ckpt, "rb").read(), open(log_path, "rb").read()))
    assert blobs[0][0] == blobs[1][0], "checkpoints differ between identical runs"
    assert blobs[0][1] == blobs[1][1], "run logs differ between identical runs"
    print("criterion 9: PASS - checkpoint and RunLog bytes identical")
