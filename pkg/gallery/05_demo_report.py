"""Run the whole desk-scale pipeline and print its reports.

This is what ``hasanet demo`` does: generate audio, build train and test
manifests, label them with the surrogate oracle, train the multi-task model
and both single-task models, then report MSE/LCC/SRCC per hearing-loss
configuration on seen and unseen patterns.
"""
from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from hasanet.demo import DemoSettings, run_demo

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
paths = run_demo(out, DemoSettings(n_train_clean=6, n_test_clean=2, epochs=3))
print(paths["multitask_report"].read_text())
print(paths["ablation"].read_text())
print("outputs in", out)
