"""Train a small model on generated audio with surrogate labels.

Clean utterances are synthetic voiced sounds; the labels come from the
band-SNR surrogate, not HASQI/HASPI. A reduced network keeps this to well
under a minute on one core.
"""
from __future__ import annotations

import tempfile
from pathlib import Path

from hasanet.demo import generate_audio
from hasanet.hearing import builtin_pattern_bank
from hasanet.labels import attach_labels, surrogate_label_file
from hasanet.nn import ModelConfig, ModelParams
from hasanet.synth import build_train_manifest
from hasanet.train import TrainConfig, fit, prepare

bank = builtin_pattern_bank()
workdir = Path(tempfile.mkdtemp())
audio = generate_audio(workdir, n_train=6, n_test=0, seed=1)
manifest = build_train_manifest(audio["train_clean"], audio["train_noise"], bank, seed=1)
manifest = attach_labels(manifest, surrogate_label_file(manifest, bank))
data = prepare(manifest, bank)
print(f"{len(data.train)} training and {len(data.val)} validation utterances")

seed = 0
params = ModelParams.init(ModelConfig(hidden=16, dense=32, heads=4), seed)
result = fit(data, params, TrainConfig(batch_size=8, max_epochs=8, patience=3, seed=seed))
for rec in result.history:
    print(f"epoch {rec.epoch}: train {rec.train_total:.4f} (Q {rec.train_L_Q:.4f}, I {rec.train_L_I:.4f}) val {rec.val_total:.4f}")
print("best epoch:", result.best_epoch)
