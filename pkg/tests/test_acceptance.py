"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
prints one PASS/FAIL line per criterion.
"""
from __future__ import annotations

import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

from gradcheck import max_relative_error, random_toy
from hasanet.cli import main
from hasanet.dsp import AudioSignal, frame_count, mix_at_snr, snr_db, stft_magnitude
from hasanet.evaluation import lcc, srcc
from hasanet.hearing import Audiogram, Configuration, nalr_gains
from hasanet.labels import attach_labels, surrogate_label_file
from hasanet.nn import ModelConfig, ModelParams, branch_parameter_count, model_forward, parameter_count
from hasanet.synth import (
    CorpusManifest,
    CorpusSplit,
    UtteranceRecord,
    TRAIN_SNRS,
    build_test_manifest,
    build_train_manifest,
)
from hasanet.train import (
    LossTerms,
    Mode,
    TaskTerms,
    TrainConfig,
    TrainingData,
    fit,
    intelligibility_loss,
    make_examples,
    model_config_for,
    quality_loss,
)

CRITERIA = {
    "test_gradient_correctness": "gradient correctness: >=20 toy models vs central differences, rel err < 1e-6, < 60 s",
    "test_loss_equation_oracle": "loss-equation oracle: 100 random batches vs scalar transcription, <= 1e-12",
    "test_overfit_sanity": "overfit sanity: 10 utterances, 200 epochs, training LCC >= 0.95 both tasks, < 5 min",
    "test_mtl_ablation_plumbing": "MTL ablation: comparison report produced; single-task count differs by one branch",
    "test_metric_oracles": "metric oracles: lcc/srcc vs brute force on 1000 pairs <= 1e-12; tie case",
    "test_cardinalities": "cardinalities: 4158x2 TRAIN per category; 1600 test utterances; 19200 per test split",
    "test_dsp_checks": "DSP: mix SNR within 1e-9 dB; frame-count law; 1 kHz tone peak at bin 32",
    "test_nalr_checks": "NAL-R: zero-loss and flat-60 gains exact; monotone over 1000 random audiograms",
    "test_demo_determinism": "determinism: demo twice with fixed seed gives byte-identical outputs",
}


def test_gradient_correctness():
    start = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(2024)
    n_models = 24
    for _ in range(n_models):
        params, batch = random_toy(rng)
        c = params.config
        assert c.input_dim <= 8 and c.hidden <= 6 and c.heads in (1, 2)
        assert all(x.shape[0] <= 5 for x, _, _ in batch)
        worst = max(worst, max_relative_error(params, batch, eps=1e-5))
    elapsed = time.perf_counter() - start
    print(f"{n_models} models, worst relative error {worst:.2e}, {elapsed:.1f} s")
    assert worst < 1e-6
    assert elapsed < 60


def _scalar_loss(true, utter, frames):
    # direct transcription with Python floats only
    total = 0.0
    for y, u, fs in zip(true, utter, frames):
        frame_sum = 0.0
        for s in fs:
            frame_sum += (y - s) * (y - s)
        total += (y - u) * (y - u) + frame_sum / len(fs)
    return total / len(true)


def test_loss_equation_oracle():
    r = random.Random(77)
    worst = 0.0
    for _ in range(100):
        n = r.randint(1, 32)
        sets = []
        for _task in range(2):
            true = [r.random() for _ in range(n)]
            utter = [r.random() for _ in range(n)]
            frames = [[r.random() for _ in range(r.randint(1, 60))] for _ in range(n)]
            sets.append((true, utter, frames))
        batch = LossTerms(*(TaskTerms(t, u, [np.array(f) for f in fr]) for t, u, fr in sets))
        worst = max(worst, abs(quality_loss(batch) - _scalar_loss(*sets[0])))
        worst = max(worst, abs(intelligibility_loss(batch) - _scalar_loss(*sets[1])))
    print(f"worst deviation {worst:.1e}")
    assert worst <= 1e-12


def test_overfit_sanity(tmp_path, bank):
    from hasanet.demo import generate_audio

    start = time.perf_counter()
    audio = generate_audio(tmp_path, 10, 0, 0)
    ids = [e.id for e in bank]
    noise = audio["train_noise"][0]
    records = [
        UtteranceRecord(f"u{i}", CorpusSplit.TRAIN, str(c), "pink", str(noise), 0.1 * i,
                        float(TRAIN_SNRS[i % len(TRAIN_SNRS)]), ids[(i * 4) % len(ids)])
        for i, c in enumerate(audio["train_clean"])
    ]
    manifest = attach_labels(CorpusManifest(records, 0, "overfit"), surrogate_label_file(records, bank))
    examples = make_examples(manifest.records, bank)
    # VAL is the training set itself and patience exceeds the epoch budget, so
    # all 200 epochs run
    config = TrainConfig(batch_size=10, max_epochs=200, patience=1000, seed=0, record_wall_time=False)
    result = fit(TrainingData(examples, examples), ModelParams.init(ModelConfig(), 0), config)
    assert len(result.history) == 200
    preds = [model_forward(ex.features, result.best_params).utterance_scores for ex in examples]
    lq = lcc([ex.quality for ex in examples], [p["quality"] for p in preds])
    li = lcc([ex.intelligibility for ex in examples], [p["intelligibility"] for p in preds])
    elapsed = time.perf_counter() - start
    first = [h.train_total for h in result.history[:3]]
    print(f"training LCC quality {lq:.5f}, intelligibility {li:.5f}; first losses {first}; {elapsed:.0f} s")
    assert first[0] > first[1] > first[2]
    assert lq >= 0.95 and li >= 0.95
    assert elapsed < 300


def _demo(out: Path, ablation: bool = True) -> int:
    args = ["-q", "demo", "--out-dir", str(out), "--seed", "5", "--n-train", "4", "--n-test", "1",
            "--epochs", "2", "--jobs", "1"]
    return main(args + ([] if ablation else ["--no-ablation"]))


@pytest.fixture(scope="module")
def demo_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    assert _demo(root / "a") == 0
    assert _demo(root / "b") == 0
    return root / "a", root / "b"


def test_mtl_ablation_plumbing(demo_runs):
    out, _ = demo_runs
    text = (out / "ablation.txt").read_text()
    assert text.startswith("*** SURROGATE LABELS")
    for title in ("quality (HASQI)", "intelligibility (HASPI)"):
        assert f"Performance of {title} prediction: single-task vs multi-task" in text
    lines = [line.split() for line in text.splitlines()]
    rows = [l for l in lines if l and l[0] in ("Single-task", "Multi-task")]
    assert len(rows) == 4 and all(len(r) == 7 for r in rows)

    full = ModelConfig()
    for mode in (Mode.QUALITY_ONLY, Mode.INTELLIGIBILITY_ONLY):
        single = model_config_for(mode, full)
        diff = parameter_count(full) - parameter_count(single)
        assert diff == branch_parameter_count(full) == 4 * 128 * 128 + 128 + 1
        assert ModelParams.init(full).size - ModelParams.init(single).size == diff

    # the demo trained all three modes from one seed: every history has the
    # same number of epochs and the single-task histories carry one task
    hist = {m: (out / m / "history.jsonl").read_text().splitlines() for m in ("multitask", "quality_only", "intelligibility_only")}
    assert len({len(h) for h in hist.values()}) == 1
    assert '"train_L_I": null' in hist["quality_only"][0] and '"train_L_Q": null' in hist["intelligibility_only"][0]


def _brute_ranks(a):
    order = sorted(range(len(a)), key=lambda i: a[i])
    ranks = [0.0] * len(a)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and a[order[j + 1]] == a[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _brute_pearson(a, b):
    n = len(a)
    ma, mb = math.fsum(a) / n, math.fsum(b) / n
    cov = math.fsum((x - ma) * (y - mb) for x, y in zip(a, b))
    return cov / math.sqrt(math.fsum((x - ma) ** 2 for x in a) * math.fsum((y - mb) ** 2 for y in b))


def test_metric_oracles():
    r = np.random.default_rng(31)
    worst = 0.0
    for k in range(1000):
        n = int(r.integers(2, 1001))
        if k % 3 == 0:
            a, b = r.integers(0, 10, n).astype(float), r.integers(0, 10, n).astype(float)
        else:
            a, b = r.random(n), r.normal(size=n) + r.random() * np.arange(n)
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            continue
        la, lb = a.tolist(), b.tolist()
        worst = max(worst, abs(lcc(a, b) - _brute_pearson(la, lb)))
        worst = max(worst, abs(srcc(a, b) - _brute_pearson(_brute_ranks(la), _brute_ranks(lb))))
    print(f"worst deviation {worst:.1e}")
    assert worst <= 1e-12
    assert abs(srcc([1, 1, 2], [1, 2, 3]) - math.sqrt(3) / 2) <= 1e-12
    assert abs(srcc([1, 2, 3], [3, 1, 2]) + 0.5) <= 1e-12


def test_cardinalities(bank):
    train = build_train_manifest([f"clean/{i:04d}.wav" for i in range(4620)],
                                 [f"noise/{i:03d}.wav" for i in range(100)], bank, seed=0)
    train_records = train.split(CorpusSplit.TRAIN)
    per_config = {c: 0 for c in Configuration}
    for rec in train_records:
        per_config[bank.get(rec.audiogram_id).configuration] += 1
    assert all(n == 4158 * 2 for n in per_config.values()), per_config
    assert len({r.clean_path for r in train_records}) == 4158

    test = build_test_manifest([f"tclean/{i:03d}.wav" for i in range(100)],
                               [f"tnoise/{i}.wav" for i in range(4)], bank, seed=0)
    seen, unseen = test.split(CorpusSplit.TEST_SEEN), test.split(CorpusSplit.TEST_UNSEEN)
    assert len({r.noisy_key for r in seen + unseen}) == 100 * 4 * 4 == 1600
    assert len(seen) == len(unseen) == 19200


def test_dsp_checks():
    r = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        n = int(r.integers(600, 20000))
        clean = r.normal(size=n) * r.uniform(0.01, 2)
        noise = r.normal(size=n + int(r.integers(0, 5000)))
        target = float(r.uniform(-20, 20))
        mixed = mix_at_snr(AudioSignal(clean), AudioSignal(noise), target, rng=r)
        worst = max(worst, abs(snr_db(clean, mixed.samples - clean) - target))
    assert worst < 1e-9
    for n in list(range(512, 4000, 37)) + [16000, 16127, 16128]:
        assert frame_count(n) == (n - 512) // 256 + 1
        assert stft_magnitude(AudioSignal(np.ones(n))).frames.shape == (frame_count(n), 257)
    t = np.arange(16000) / 16000
    spec = stft_magnitude(AudioSignal(np.sin(2 * np.pi * 1000 * t)))
    assert np.all(np.argmax(spec.frames, axis=1) == 32)


def test_nalr_checks():
    assert nalr_gains(Audiogram([0] * 6)).tolist() == [0, 0, 1, 0, 0, 0]
    np.testing.assert_allclose(nalr_gains(Audiogram([60] * 6)), [10.6, 19.6, 28.6, 26.6, 25.6, 25.6], atol=1e-12)
    r = np.random.default_rng(5)
    for _ in range(1000):
        h = r.uniform(0, 110, 6)
        raised = np.minimum(h + r.uniform(0, 10, 6) * (r.random(6) < 0.5), 120)
        assert np.all(nalr_gains(Audiogram(raised)) >= nalr_gains(Audiogram(h)) - 1e-12)


def test_demo_determinism(demo_runs):
    a, b = demo_runs
    names = ["manifest.tsv", "labels.tsv", "manifest.labeled.tsv", "ablation.txt", "ablation.json"]
    for mode in ("multitask", "quality_only", "intelligibility_only"):
        names += [f"{mode}/{f}" for f in ("history.jsonl", "report.txt", "report.json", "predictions.tsv", "params.hprm")]
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert (a / "multitask" / "report.txt").read_text().startswith("*** SURROGATE LABELS")
