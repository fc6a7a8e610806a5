"""Ground-truth providers: label-file ingestion and a surrogate intrusive oracle.

The real targets are HASQI (quality) and HASPI (intelligibility) scores
computed by external tools and delivered as a label file. So the pipeline can
run without those tools, :func:`surrogate_labels` maps an audibility-weighted
third-octave band SNR through two sigmoids. It is not HASQI/HASPI, and every
report built on it is watermarked ``SURROGATE LABELS``.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .dsp import AudioSignal, DSPError
from .hearing import Audiogram, PatternBank, apply_nalr, builtin_pattern_bank, interpolate_log_freq, nalr_gains
from .io import atomic_write_text
from .synth import CorpusManifest, UtteranceRecord, realize_signals

LABEL_HEADER = "#hasa-labels v1"
SURROGATE_PROVENANCE = "surrogate-v1 (band-SNR oracle, not HASQI/HASPI)"
WATERMARK = "SURROGATE LABELS"

THIRD_OCTAVE_CENTERS = 1000.0 * 2.0 ** (np.arange(-6, 9) / 3.0)  # 250 Hz .. 6.3 kHz
BAND_SNR_LIMITS = (-40.0, 40.0)


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LabelRow:
    id: str
    quality: float
    intelligibility: float


@dataclass
class LabelFile:
    rows: list[LabelRow]
    provenance: str = ""

    def to_text(self) -> str:
        lines = [f"{LABEL_HEADER} {self.provenance}".rstrip()]
        lines += [f"{r.id}\t{r.quality!r}\t{r.intelligibility!r}" for r in self.rows]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LabelFile":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(LABEL_HEADER):
            raise LabelError(f"label file must start with {LABEL_HEADER!r}")
        provenance = lines[0][len(LABEL_HEADER) :].strip()
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise LabelError(f"line {lineno}: expected 3 tab-separated fields")
            try:
                rows.append(LabelRow(fields[0], float(fields[1]), float(fields[2])))
            except ValueError:
                raise LabelError(f"line {lineno}: scores must be numbers") from None
        return cls(rows, provenance)


def read_labels(path: str | Path) -> LabelFile:
    return LabelFile.from_text(Path(path).read_text())


def write_labels(path: str | Path, labels: LabelFile) -> None:
    atomic_write_text(path, labels.to_text())


def is_surrogate(provenance: str) -> bool:
    return provenance.startswith("surrogate")


def attach_labels(manifest: CorpusManifest, label_file: LabelFile) -> CorpusManifest:
    """Return a copy of ``manifest`` with every record carrying both labels.

    The label file must cover every record id exactly once, with no extras,
    and all scores in [0, 1].
    """
    seen: dict[str, LabelRow] = {}
    dupes = []
    for row in label_file.rows:
        if row.id in seen:
            dupes.append(row.id)
        seen[row.id] = row
    if dupes:
        raise LabelError(f"duplicate id(s) in label file: {sorted(set(dupes))[:10]}")
    bad = [r.id for r in label_file.rows if not (0.0 <= r.quality <= 1.0 and 0.0 <= r.intelligibility <= 1.0)]
    if bad:
        raise LabelError(f"score out of range [0, 1] for id(s): {bad[:10]}")
    ids = {r.id for r in manifest.records}
    missing = [r.id for r in manifest.records if r.id not in seen]
    extra = sorted(set(seen) - ids)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing label(s) for {len(missing)} record(s): {missing[:10]}")
        if extra:
            parts.append(f"unknown id(s) in label file: {extra[:10]}")
        raise LabelError("; ".join(parts))
    records = [
        replace(r, quality=seen[r.id].quality, intelligibility=seen[r.id].intelligibility)
        for r in manifest.records
    ]
    return manifest.with_records(records, label_provenance=label_file.provenance)


def labels_of(manifest: CorpusManifest) -> LabelFile:
    rows = [LabelRow(r.id, r.quality, r.intelligibility) for r in manifest.records if r.labeled]
    return LabelFile(rows, manifest.label_provenance)


# -- surrogate oracle ------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateParams:
    quality_slope: float = 0.25
    quality_midpoint_db: float = 8.0
    intelligibility_slope: float = 0.45
    intelligibility_midpoint_db: float = -2.0

    def __post_init__(self):
        if self.quality_slope <= 0 or self.intelligibility_slope <= 0:
            raise ValueError("sigmoid slopes must be positive")


def scores_from_effective_snr(s_db: float, params: SurrogateParams = SurrogateParams()) -> tuple[float, float]:
    q = expit(params.quality_slope * (s_db - params.quality_midpoint_db))
    i = expit(params.intelligibility_slope * (s_db - params.intelligibility_midpoint_db))
    return float(q), float(i)


def band_energies(x: np.ndarray, sample_rate_hz: int, centers: np.ndarray = THIRD_OCTAVE_CENTERS) -> np.ndarray:
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), d=1.0 / sample_rate_hz)
    lo, hi = centers * 2.0 ** (-1 / 6), centers * 2.0 ** (1 / 6)
    return np.array([power[(freqs >= a) & (freqs < b)].sum() for a, b in zip(lo, hi)])


def audibility_weights(audiogram: Audiogram, centers: np.ndarray = THIRD_OCTAVE_CENTERS) -> np.ndarray:
    """``clamp(1 - residual / 100, 0, 1)`` with residual = threshold minus NAL-R gain."""
    threshold = interpolate_log_freq(centers, audiogram.levels)
    gain = interpolate_log_freq(centers, nalr_gains(audiogram))
    residual = np.maximum(threshold - gain, 0.0)
    return np.clip(1.0 - residual / 100.0, 0.0, 1.0)


def effective_snr(
    clean: np.ndarray, noise: np.ndarray, audiogram: Audiogram, sample_rate_hz: int = 16000
) -> float:
    """Audibility-weighted mean of the per-band SNRs (dB) of the amplified signals."""
    if not np.any(clean) or not np.any(noise):
        raise DSPError("degenerate power")
    amp_clean = apply_nalr(AudioSignal(clean, sample_rate_hz), audiogram).samples
    amp_noise = apply_nalr(AudioSignal(noise, sample_rate_hz), audiogram).samples
    tiny = np.finfo(float).tiny
    ec = band_energies(amp_clean, sample_rate_hz) + tiny
    en = band_energies(amp_noise, sample_rate_hz) + tiny
    band_snr = np.clip(10.0 * np.log10(ec / en), *BAND_SNR_LIMITS)
    w = audibility_weights(audiogram)
    if w.sum() == 0.0:
        w = np.ones_like(w)
    return float(np.sum(w * band_snr) / np.sum(w))


def surrogate_from_signals(
    clean: np.ndarray,
    noise: np.ndarray,
    audiogram: Audiogram,
    params: SurrogateParams = SurrogateParams(),
    sample_rate_hz: int = 16000,
) -> tuple[float, float]:
    return scores_from_effective_snr(effective_snr(clean, noise, audiogram, sample_rate_hz), params)


def surrogate_labels(
    record: UtteranceRecord, bank: PatternBank | None = None, params: SurrogateParams = SurrogateParams()
) -> tuple[float, float]:
    """Surrogate ``(quality, intelligibility)`` for one realisable record."""
    bank = bank if bank is not None else builtin_pattern_bank()
    signals = realize_signals(record, bank)
    return surrogate_from_signals(signals.clean, signals.noise, bank.audiogram(record.audiogram_id), params)


def _surrogate_job(args):
    return surrogate_labels(*args)


def surrogate_label_file(
    manifest: CorpusManifest | Sequence[UtteranceRecord],
    bank: PatternBank | None = None,
    params: SurrogateParams = SurrogateParams(),
    jobs: int = 1,
) -> LabelFile:
    records = manifest.records if isinstance(manifest, CorpusManifest) else list(manifest)
    bank = bank if bank is not None else builtin_pattern_bank()
    if jobs > 1 and len(records) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_surrogate_job, [(r, bank, params) for r in records], chunksize=16))
    else:
        scores = [surrogate_labels(r, bank, params) for r in records]
    rows = [LabelRow(r.id, q, i) for r, (q, i) in zip(records, scores)]
    return LabelFile(rows, SURROGATE_PROVENANCE)
