"""MSE / LCC / SRCC metrics and per-configuration evaluation reports."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .hearing import CONFIGURATIONS, PatternBank, builtin_pattern_bank
from .io import atomic_write_text
from .labels import WATERMARK, is_surrogate
from .synth import CorpusManifest, CorpusSplit

TASKS = ("quality", "intelligibility")
TASK_TITLES = {"quality": "quality (HASQI)", "intelligibility": "intelligibility (HASPI)"}
SPLITS = {"SEEN": CorpusSplit.TEST_SEEN, "UNSEEN": CorpusSplit.TEST_UNSEEN}
ALL = "ALL"
PREDICTIONS_HEADER = "#hasa-predictions v1"


class CorrelationUndefined(ValueError):
    pass


class EvalError(ValueError):
    pass


def _pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty input")
    return a, b


def mse(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.mean((a - b) ** 2))


def lcc(y_true, y_pred) -> float:
    """Pearson linear correlation coefficient."""
    a, b = _pair(y_true, y_pred)
    if a.size < 2:
        raise CorrelationUndefined("undefined correlation: need at least 2 points")
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = float(da @ da), float(db @ db)
    if saa == 0.0 or sbb == 0.0:
        raise CorrelationUndefined("undefined correlation: constant input")
    return float(np.clip((da @ db) / math.sqrt(saa * sbb), -1.0, 1.0))


def srcc(y_true, y_pred) -> float:
    """Spearman rank correlation; tied values share their average rank."""
    a, b = _pair(y_true, y_pred)
    return lcc(rankdata(a, method="average"), rankdata(b, method="average"))


# -- predictions file -------------------------------------------------------------


def predictions_to_text(predictions: Mapping[str, Mapping[str, float | None]], provenance: str = "") -> str:
    lines = [f"{PREDICTIONS_HEADER} {provenance}".rstrip(), "id\tquality\tintelligibility"]
    for rid in sorted(predictions):
        p = predictions[rid]
        cells = ["" if p.get(t) is None else repr(float(p[t])) for t in TASKS]
        lines.append("\t".join([rid, *cells]))
    return "\n".join(lines) + "\n"


def predictions_from_text(text: str) -> dict[str, dict[str, float | None]]:
    lines = text.splitlines()
    if len(lines) < 2 or not lines[0].startswith(PREDICTIONS_HEADER):
        raise EvalError(f"predictions file must start with {PREDICTIONS_HEADER!r}")
    out = {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        f = line.split("\t")
        if len(f) != 3:
            raise EvalError(f"line {lineno}: expected 3 fields")
        if f[0] in out:
            raise EvalError(f"line {lineno}: duplicate id {f[0]}")
        out[f[0]] = {t: (float(v) if v else None) for t, v in zip(TASKS, f[1:])}
    return out


def write_predictions(path, predictions, provenance: str = "") -> None:
    atomic_write_text(path, predictions_to_text(predictions, provenance))


def read_predictions(path) -> dict[str, dict[str, float | None]]:
    return predictions_from_text(Path(path).read_text())


# -- report -------------------------------------------------------------------------


@dataclass
class MetricRow:
    task: str
    split: str
    configuration: str
    n: int
    mse: float
    lcc: float | None
    srcc: float | None


def _safe(fn, a, b):
    try:
        return fn(a, b)
    except CorrelationUndefined:
        return None


def metric_row(task, split, configuration, y_true, y_pred) -> MetricRow:
    return MetricRow(
        task, split, configuration, len(y_true), mse(y_true, y_pred), _safe(lcc, y_true, y_pred), _safe(srcc, y_true, y_pred)
    )


def decile_histogram(values: Sequence[float]) -> list[int]:
    """Counts in [0, 0.1), [0.1, 0.2), ..., [0.9, 1.0]."""
    idx = np.minimum((np.asarray(values, dtype=np.float64) * 10).astype(int), 9)
    return np.bincount(idx, minlength=10).tolist()


@dataclass
class EvalReport:
    rows: list[MetricRow]
    averages: list[MetricRow]
    """Per (task, split): unweighted mean of the per-configuration metrics."""
    histograms: dict[str, dict[str, list[int]]]
    scatter: dict[str, list[tuple[str, str, str, float, float]]]
    label_provenance: str = ""
    tasks: tuple[str, ...] = TASKS
    meta: dict = field(default_factory=dict)

    @property
    def watermarked(self) -> bool:
        return is_surrogate(self.label_provenance)

    def get(self, task: str, split: str, configuration: str = ALL) -> MetricRow:
        for r in self.rows:
            if (r.task, r.split, r.configuration) == (task, split, configuration):
                return r
        raise KeyError((task, split, configuration))

    def average(self, task: str, split: str) -> MetricRow:
        for r in self.averages:
            if (r.task, r.split) == (task, split):
                return r
        raise KeyError((task, split))

    def to_dict(self) -> dict:
        return {
            "format": "hasa-report v1",
            "watermark": WATERMARK if self.watermarked else None,
            "label_provenance": self.label_provenance,
            "tasks": list(self.tasks),
            "meta": self.meta,
            "rows": [asdict(r) for r in self.rows],
            "configuration_averages": [asdict(r) for r in self.averages],
            "true_score_deciles": self.histograms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        out = []
        if self.watermarked:
            out += [f"*** {WATERMARK}: ground truth is the surrogate oracle, not HASQI/HASPI ***", ""]
        for task in self.tasks:
            out.append(f"Performance of {TASK_TITLES[task]} prediction on seen and unseen test sets")
            out += _table(
                [(c, self.get(task, "SEEN", c), self.get(task, "UNSEEN", c)) for c in self._configs()]
                + [
                    ("All (pooled)", self.get(task, "SEEN"), self.get(task, "UNSEEN")),
                    ("Average (per-config)", self.average(task, "SEEN"), self.average(task, "UNSEEN")),
                ]
            )
            out.append("")
            out.append(f"Distribution of true {task} scores (percent per decile, seen / unseen)")
            for split in SPLITS:
                counts = self.histograms[task][split]
                total = max(sum(counts), 1)
                out.append(f"  {split:<7}" + " ".join(f"{100 * c / total:5.1f}" for c in counts))
            out.append("")
        return "\n".join(out)

    def _configs(self) -> list[str]:
        present = {r.configuration for r in self.rows if r.configuration != ALL}
        return [str(c) for c in CONFIGURATIONS if str(c) in present]

    def scatter_text(self, task: str) -> str:
        lines = [f"# {task}: true vs predicted" + (f" [{WATERMARK}]" if self.watermarked else ""),
                 "id\tsplit\tconfiguration\ttrue\tpredicted"]
        lines += [f"{i}\t{s}\t{c}\t{t!r}\t{p!r}" for i, s, c, t, p in self.scatter[task]]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        atomic_write_text(out_dir / "report.txt", self.to_text())
        atomic_write_text(out_dir / "report.json", self.to_json())
        for task in self.tasks:
            atomic_write_text(out_dir / f"scatter_{task}.tsv", self.scatter_text(task))


def _fmt(v: float | None, digits: int = 4) -> str:
    return "   n/a" if v is None else f"{v:.{digits}f}"


def _table(rows: list[tuple[str, MetricRow, MetricRow]]) -> list[str]:
    head1 = f"{'':<22}{'Seen':^27}   {'Unseen':^27}"
    head2 = f"{'Configuration':<22}" + ("{:>9}{:>9}{:>9}".format("MSE", "LCC", "SRCC")) * 1 + "   " + "{:>9}{:>9}{:>9}".format("MSE", "LCC", "SRCC")
    lines = [head1, head2]
    for name, seen, unseen in rows:
        cells = [_fmt(seen.mse), _fmt(seen.lcc), _fmt(seen.srcc), _fmt(unseen.mse), _fmt(unseen.lcc), _fmt(unseen.srcc)]
        lines.append(f"{name:<22}" + "".join(f"{c:>9}" for c in cells[:3]) + "   " + "".join(f"{c:>9}" for c in cells[3:]))
    return lines


def build_report(
    predictions: Mapping[str, Mapping[str, float | None]],
    manifest: CorpusManifest,
    bank: PatternBank | None = None,
) -> EvalReport:
    """Metrics per (task, seen/unseen split, configuration) over the test records.

    Records are sorted by id before aggregation so the result does not depend
    on input order. Tasks with no predictions at all are skipped.
    """
    bank = bank if bank is not None else builtin_pattern_bank()
    records = sorted(manifest.split(CorpusSplit.TEST_SEEN, CorpusSplit.TEST_UNSEEN), key=lambda r: r.id)
    if not records:
        raise EvalError("manifest has no test records")
    missing = [r.id for r in records if r.id not in predictions]
    if missing:
        raise EvalError(f"missing predictions for {len(missing)} record(s): {missing[:10]}")
    unlabeled = [r.id for r in records if not r.labeled]
    if unlabeled:
        raise EvalError(f"test records without labels: {unlabeled[:10]}")
    tasks = tuple(t for t in TASKS if any(predictions[r.id].get(t) is not None for r in records))
    if not tasks:
        raise EvalError("predictions contain no scores")
    for t in tasks:
        gaps = [r.id for r in records if predictions[r.id].get(t) is None]
        if gaps:
            raise EvalError(f"missing {t} predictions for: {gaps[:10]}")

    config_of = {r.id: str(bank.get(r.audiogram_id).configuration) for r in records}
    rows, averages = [], []
    histograms: dict[str, dict[str, list[int]]] = {}
    scatter: dict[str, list] = {}
    for task in tasks:
        histograms[task] = {}
        scatter[task] = [
            (r.id, r.split.value, config_of[r.id], getattr(r, task), float(predictions[r.id][task])) for r in records
        ]
        for split_name, split in SPLITS.items():
            subset = [r for r in records if r.split is split]
            if not subset:
                continue
            y = np.array([getattr(r, task) for r in subset])
            p = np.array([predictions[r.id][task] for r in subset])
            cfg = np.array([config_of[r.id] for r in subset])
            per_config = []
            for c in CONFIGURATIONS:
                mask = cfg == str(c)
                if mask.any():
                    per_config.append(metric_row(task, split_name, str(c), y[mask], p[mask]))
            rows.extend(per_config)
            rows.append(metric_row(task, split_name, ALL, y, p))
            averages.append(
                MetricRow(
                    task,
                    split_name,
                    "AVERAGE",
                    sum(r.n for r in per_config),
                    float(np.mean([r.mse for r in per_config])),
                    _mean_or_none([r.lcc for r in per_config]),
                    _mean_or_none([r.srcc for r in per_config]),
                )
            )
            histograms[task][split_name] = decile_histogram(y)
    return EvalReport(rows, averages, histograms, scatter, manifest.label_provenance, tasks)


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


# -- single-task vs multi-task comparison ---------------------------------------------


def ablation_rows(single: EvalReport, multi: EvalReport, task: str) -> dict[str, dict[str, dict]]:
    out = {}
    for name, report in (("Single-task", single), ("Multi-task", multi)):
        out[name] = {
            split: {k: getattr(report.get(task, split), k) for k in ("mse", "lcc", "srcc", "n")} for split in SPLITS
        }
    return out


def ablation_table(single_reports: Mapping[str, EvalReport], multi: EvalReport) -> str:
    """Single-task vs multi-task comparison, one table per task (pooled test sets).

    ``single_reports`` maps task name to the report of the model trained on
    that task alone.
    """
    out = []
    if multi.watermarked:
        out += [f"*** {WATERMARK} ***", ""]
    for task, single in single_reports.items():
        out.append(f"Performance of {TASK_TITLES[task]} prediction: single-task vs multi-task")
        out += _table(
            [
                ("Single-task", single.get(task, "SEEN"), single.get(task, "UNSEEN")),
                ("Multi-task", multi.get(task, "SEEN"), multi.get(task, "UNSEEN")),
            ]
        )
        out.append("")
    return "\n".join(out)


def ablation_dict(single_reports: Mapping[str, EvalReport], multi: EvalReport) -> dict:
    return {
        "watermark": WATERMARK if multi.watermarked else None,
        "tasks": {task: ablation_rows(single, multi, task) for task, single in single_reports.items()},
    }
