import json
import math
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hasanet.evaluation import (
    ALL,
    CorrelationUndefined,
    EvalError,
    ablation_dict,
    ablation_table,
    build_report,
    decile_histogram,
    lcc,
    mse,
    read_predictions,
    srcc,
    write_predictions,
)
from hasanet.labels import SURROGATE_PROVENANCE, LabelFile, LabelRow, attach_labels
from hasanet.synth import build_test_manifest


def brute_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def brute_ranks(a):
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


def test_mse_examples():
    assert mse([0.2, 0.4], [0.2, 0.4]) == 0
    assert mse([0, 1], [1, 0]) == 1.0
    assert mse([0.1, 0.5, 0.9], [0.4, 0.8, 1.2]) == pytest.approx(0.09, abs=1e-15)
    with pytest.raises(ValueError):
        mse([1, 2], [1])
    with pytest.raises(ValueError):
        mse([], [])


def test_lcc_examples(rng):
    y = rng.random(20)
    assert lcc(y, y) == pytest.approx(1.0, abs=1e-15)
    assert lcc(y, -y) == pytest.approx(-1.0, abs=1e-15)
    assert abs(lcc(y, 3.5 * y + 2) - 1.0) <= 1e-12
    with pytest.raises(CorrelationUndefined, match="undefined correlation"):
        lcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(CorrelationUndefined):
        srcc([1, 2, 3], [2, 2, 2])


def test_srcc_examples(rng):
    y = rng.random(30)
    assert srcc(y, np.exp(3 * y)) == pytest.approx(1.0, abs=1e-15)
    assert srcc([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5, abs=1e-15)
    # average ranks [1.5, 1.5, 3] vs [1, 2, 3]: 1.5 / sqrt(1.5 * 2)
    assert srcc([1, 1, 2], [1, 2, 3]) == pytest.approx(math.sqrt(3) / 2, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 200), st.booleans())
def test_metrics_match_brute_force(seed, n, ties):
    r = np.random.default_rng(seed)
    a = r.integers(0, 5, n).astype(float) if ties else r.random(n)
    b = r.random(n)
    if np.ptp(a) == 0:
        return
    assert abs(lcc(a, b) - brute_pearson(list(a), list(b))) <= 1e-12
    assert abs(srcc(a, b) - brute_pearson(brute_ranks(list(a)), brute_ranks(list(b)))) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_srcc_monotone_invariance(seed):
    r = np.random.default_rng(seed)
    a, b = r.random(50), r.random(50)
    assert srcc(a, b) == pytest.approx(srcc(np.log(a), b ** 3), abs=1e-12)


def test_decile_histogram():
    assert decile_histogram([0.0, 0.05, 0.1, 0.95, 1.0]) == [2, 1, 0, 0, 0, 0, 0, 0, 0, 2]


@pytest.fixture
def test_manifest(bank):
    m = build_test_manifest([f"c{i}.wav" for i in range(3)], ["a.wav", "b.wav"], bank, seed=0, strict=False)
    r = np.random.default_rng(0)
    rows = [LabelRow(rec.id, float(r.random()), float(r.random())) for rec in m.records]
    return attach_labels(m, LabelFile(rows, SURROGATE_PROVENANCE))


def perfect(manifest):
    return {r.id: {"quality": r.quality, "intelligibility": r.intelligibility} for r in manifest.records}


def test_perfect_predictor(test_manifest, bank):
    report = build_report(perfect(test_manifest), test_manifest, bank)
    for row in report.rows + report.averages:
        assert row.mse == 0
        assert row.lcc == pytest.approx(1.0, abs=1e-12) and row.srcc == pytest.approx(1.0, abs=1e-12)


def test_partition_and_structure(test_manifest, bank, rng):
    preds = {k: {t: float(rng.random()) for t in v} for k, v in perfect(test_manifest).items()}
    report = build_report(preds, test_manifest, bank)
    for task in ("quality", "intelligibility"):
        for split in ("SEEN", "UNSEEN"):
            per = [r for r in report.rows if (r.task, r.split) == (task, split) and r.configuration != ALL]
            assert len(per) == 6
            assert sum(r.n for r in per) == report.get(task, split).n == 3 * 2 * 4 * 12
            assert all(r.mse >= 0 and -1 <= r.lcc <= 1 and -1 <= r.srcc <= 1 for r in per)
    text = report.to_text()
    assert text.startswith("*** SURROGATE LABELS")
    table = text.splitlines()[2:12]
    assert "Seen" in table[1] and "Unseen" in table[1]
    assert table[2].split() == ["Configuration", "MSE", "LCC", "SRCC", "MSE", "LCC", "SRCC"]
    assert [line.split()[0] for line in table[3:9]] == [
        "Flat", "Sloping", "Rising", "CookieBite", "NoiseNotched", "HighFrequency"]
    assert all(len(line.split()) == 7 for line in table[3:9])


def test_report_order_independent_and_files(test_manifest, bank, rng, tmp_path):
    preds = {k: {t: float(rng.random()) for t in v} for k, v in perfect(test_manifest).items()}
    a = build_report(preds, test_manifest, bank)
    shuffled = test_manifest.with_records(list(reversed(test_manifest.records)))
    b = build_report(dict(reversed(list(preds.items()))), shuffled, bank)
    assert a.to_json() == b.to_json()
    a.write(tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["watermark"] == "SURROGATE LABELS"
    assert sum(data["true_score_deciles"]["quality"]["SEEN"]) == a.get("quality", "SEEN").n
    scatter = (tmp_path / "scatter_quality.tsv").read_text().splitlines()
    assert len(scatter) == 2 + len(test_manifest)


def test_report_coverage_errors(test_manifest, bank):
    preds = perfect(test_manifest)
    gone = sorted(preds)[3]
    del preds[gone]
    with pytest.raises(EvalError, match=re.escape(gone)):
        build_report(preds, test_manifest, bank)
    preds = perfect(test_manifest)
    preds[gone] = {"quality": 0.5, "intelligibility": None}
    with pytest.raises(EvalError, match="intelligibility"):
        build_report(preds, test_manifest, bank)


def test_single_task_report(test_manifest, bank):
    preds = {k: {"quality": v["quality"], "intelligibility": None} for k, v in perfect(test_manifest).items()}
    report = build_report(preds, test_manifest, bank)
    assert report.tasks == ("quality",)
    multi = build_report(perfect(test_manifest), test_manifest, bank)
    text = ablation_table({"quality": report}, multi)
    assert "Single-task" in text and "Multi-task" in text
    d = ablation_dict({"quality": report}, multi)
    assert set(d["tasks"]["quality"]) == {"Single-task", "Multi-task"}


def test_predictions_round_trip(tmp_path):
    preds = {"b": {"quality": 0.25, "intelligibility": None}, "a": {"quality": 0.1, "intelligibility": 0.9}}
    write_predictions(tmp_path / "p.tsv", preds, "demo")
    assert read_predictions(tmp_path / "p.tsv") == preds
    (tmp_path / "bad.tsv").write_text("id\tq\ti\n")
    with pytest.raises(EvalError):
        read_predictions(tmp_path / "bad.tsv")
