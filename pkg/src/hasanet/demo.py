"""Desk-scale end-to-end run on generated audio with surrogate labels.

Clean "utterances" are voiced harmonic complexes with a gliding pitch,
formant-like spectral tilt and syllable-rate amplitude modulation. Training
and test noises are disjoint synthetic families, mirroring the unseen-noise
test condition.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, AudioSignal, write_wav
from .evaluation import ablation_dict, ablation_table, build_report, write_predictions
from .hearing import builtin_pattern_bank
from .io import atomic_write_text
from .labels import attach_labels, surrogate_label_file, write_labels
from .nn import ModelConfig, ModelParams, model_forward, save_params
from .synth import (
    CorpusSplit,
    build_test_manifest,
    build_train_manifest,
    merge_manifests,
    write_manifest,
)
from .train import Mode, TrainConfig, fit, make_examples, model_config_for, prepare

logger = logging.getLogger(__name__)

TRAIN_NOISES = ("pink", "hum", "babble")
TEST_NOISES = ("engine", "white", "street", "babycry")


def synth_utterance(rng: np.random.Generator, duration_s: float) -> np.ndarray:
    n = int(duration_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(90, 220) * (1 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    formants = rng.uniform([300, 900, 2200], [900, 2000, 3200])
    x = np.zeros(n)
    for k in range(1, 40):
        fk = k * f0.mean()
        if fk > 7000:
            break
        amp = sum(np.exp(-0.5 * ((fk - f) / 150.0) ** 2) for f in formants) + 0.05 / k
        x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    syllables = np.clip(np.sin(2 * np.pi * rng.uniform(3, 5) * t + rng.uniform(0, np.pi)), 0, None) ** 0.7
    x *= syllables
    x += 0.02 * rng.standard_normal(n) * syllables
    return x / np.max(np.abs(x)) * 0.5


def _colored(rng, n, exponent):
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    f[0] = f[1]
    return np.fft.irfft(spectrum / f ** (exponent / 2), n)


def synth_noise(kind: str, rng: np.random.Generator, duration_s: float) -> np.ndarray:
    n = int(duration_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        x = _colored(rng, n, 1.0)
    elif kind == "hum":
        x = sum(np.sin(2 * np.pi * 50 * k * t) / k for k in range(1, 12)) + 0.1 * rng.standard_normal(n)
    elif kind == "engine":
        rpm = 30 + 3 * np.sin(2 * np.pi * 0.3 * t)
        x = sum(np.sin(2 * np.pi * np.cumsum(rpm * k) / SAMPLE_RATE) / k for k in range(1, 20))
        x += 0.5 * _colored(rng, n, 2.0) / 50
    elif kind == "babble":
        x = sum(synth_utterance(rng, duration_s) for _ in range(5))
    elif kind == "street":
        x = _colored(rng, n, 1.5)
        bursts = (rng.random(n // 1600 + 1) < 0.2).repeat(1600)[:n]
        x = x * (1 + 3 * bursts)
    elif kind == "babycry":
        f0 = 450 + 120 * np.sin(2 * np.pi * 1.5 * t) ** 2
        phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
        x = sum(np.sin(k * phase) / k for k in range(1, 10))
        x *= np.clip(np.sin(2 * np.pi * 0.8 * t), 0, None)
        x += 0.05 * rng.standard_normal(n)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return x / np.max(np.abs(x)) * 0.5


def generate_audio(out_dir: Path, n_train: int, n_test: int, seed: int) -> dict[str, list[Path]]:
    """Write clean and noise WAV files; returns their paths per group."""
    rng = np.random.default_rng([seed, 7])
    groups: dict[str, list[Path]] = {"train_clean": [], "test_clean": [], "train_noise": [], "test_noise": []}
    for group, count in (("train_clean", n_train), ("test_clean", n_test)):
        d = out_dir / group
        d.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            path = d / f"utt{i:03d}.wav"
            write_wav(path, AudioSignal(synth_utterance(rng, rng.uniform(0.6, 1.0))))
            groups[group].append(path)
    for group, kinds in (("train_noise", TRAIN_NOISES), ("test_noise", TEST_NOISES)):
        d = out_dir / group
        d.mkdir(parents=True, exist_ok=True)
        for kind in kinds:
            path = d / f"{kind}.wav"
            write_wav(path, AudioSignal(synth_noise(kind, rng, 3.0)))
            groups[group].append(path)
    return groups


@dataclass
class DemoSettings:
    seed: int = 0
    n_train_clean: int = 10
    n_test_clean: int = 3
    epochs: int = 4
    patience: int = 5
    batch_size: int = 16
    learning_rate: float = 0.001
    hidden: int = 100
    dense: int = 128
    heads: int = 4
    ablation: bool = True
    jobs: int = 1

    def model_config(self, mode: Mode) -> ModelConfig:
        return model_config_for(mode, ModelConfig(hidden=self.hidden, dense=self.dense, heads=self.heads))

    def train_config(self, mode: Mode) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.epochs,
            patience=self.patience,
            seed=self.seed,
            mode=mode,
            record_wall_time=False,
        )


def predict_records(examples, params) -> dict[str, dict[str, float | None]]:
    out = {}
    for ex in examples:
        scores = model_forward(ex.features, params).utterance_scores
        out[ex.id] = {t: scores.get(t) for t in ("quality", "intelligibility")}
    return out


def run_demo(out_dir: str | Path, settings: DemoSettings | None = None) -> dict[str, Path]:
    """Generate audio, build manifests, label, train, predict and evaluate.

    Every output file depends only on ``settings``; two runs with the same
    settings produce byte-identical manifests, histories and reports.
    """
    settings = settings or DemoSettings()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bank = builtin_pattern_bank()
    audio = generate_audio(out / "audio", settings.n_train_clean, settings.n_test_clean, settings.seed)

    train_m = build_train_manifest(audio["train_clean"], audio["train_noise"], bank, settings.seed)
    test_m = build_test_manifest(audio["test_clean"], audio["test_noise"], bank, settings.seed, strict=False)
    manifest = merge_manifests(train_m, test_m)
    write_manifest(out / "manifest.tsv", manifest)
    logger.info("manifest: %d records", len(manifest))

    labels = surrogate_label_file(manifest, bank, jobs=settings.jobs)
    write_labels(out / "labels.tsv", labels)
    manifest = attach_labels(manifest, labels)
    write_manifest(out / "manifest.labeled.tsv", manifest)

    data = prepare(manifest, bank, jobs=settings.jobs)
    test_examples = make_examples(
        manifest.split(CorpusSplit.TEST_SEEN, CorpusSplit.TEST_UNSEEN), bank, jobs=settings.jobs
    )
    echo = {k: v for k, v in vars(settings).items() if k != "jobs"}
    modes = [Mode.MULTITASK] + ([Mode.QUALITY_ONLY, Mode.INTELLIGIBILITY_ONLY] if settings.ablation else [])
    reports = {}
    paths = {"manifest": out / "manifest.tsv", "labels": out / "labels.tsv"}
    for mode in modes:
        tag = mode.value.lower()
        params = ModelParams.init(settings.model_config(mode), settings.seed)
        result = fit(data, params, settings.train_config(mode))
        run_dir = out / tag
        save_params(run_dir / "params.hprm", result.best_params)
        atomic_write_text(run_dir / "history.jsonl", result.history_jsonl())
        preds = predict_records(test_examples, result.best_params)
        write_predictions(run_dir / "predictions.tsv", preds, json.dumps({"demo": echo, "mode": mode.value}, sort_keys=True))
        report = build_report(preds, manifest, bank)
        report.meta = {"demo": echo, "mode": mode.value, "best_epoch": result.best_epoch}
        report.write(run_dir)
        reports[mode] = report
        paths[f"{tag}_report"] = run_dir / "report.txt"
        paths[f"{tag}_history"] = run_dir / "history.jsonl"
    if settings.ablation:
        singles = {"quality": reports[Mode.QUALITY_ONLY], "intelligibility": reports[Mode.INTELLIGIBILITY_ONLY]}
        atomic_write_text(out / "ablation.txt", ablation_table(singles, reports[Mode.MULTITASK]))
        atomic_write_text(
            out / "ablation.json", json.dumps(ablation_dict(singles, reports[Mode.MULTITASK]), indent=2, sort_keys=True) + "\n"
        )
        paths["ablation"] = out / "ablation.txt"
    return paths
