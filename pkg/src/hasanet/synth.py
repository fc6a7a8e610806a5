"""Seeded corpus manifests and realisation of records into model inputs.

A manifest is built in two phases: :func:`build_train_manifest` /
:func:`build_test_manifest` fix every random choice (noise, SNR, noise segment
position, audiogram), and :mod:`hasanet.labels` attaches ground-truth scores
afterwards. :func:`realize` turns one record into features deterministically.
"""
from __future__ import annotations

import enum
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dsp import (
    AudioSignal,
    Spectrogram,
    noise_gain,
    noise_segment,
    read_wav,
    rms_normalize,
    segment_offset,
    stft_magnitude,
)
from .io import atomic_write_text
from .hearing import Audiogram, PatternBank, Split, apply_nalr, builtin_pattern_bank

TRAIN_SNRS = (-15, -10, -5, 0, 5, 10, 15)
TEST_SNRS = (-6, 0, 6, 12)
VAL_FRACTION = 0.1
PATTERNS_PER_CATEGORY = 2
STANDARD_TEST_CLEAN = 100
STANDARD_TEST_NOISES = 4
PRESENTATION_RMS = 0.01

MANIFEST_HEADER = "#hasa-manifest v1"
COLUMNS = (
    "id",
    "split",
    "clean_path",
    "noise_name",
    "noise_path",
    "noise_position",
    "snr_db",
    "audiogram_id",
    "quality",
    "intelligibility",
)


class CorpusSplit(str, enum.Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST_SEEN = "TEST_SEEN"
    TEST_UNSEEN = "TEST_UNSEEN"

    def __str__(self) -> str:
        return self.value


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    split: CorpusSplit
    clean_path: str
    noise_name: str
    noise_path: str
    noise_position: float
    snr_db: float
    audiogram_id: str
    quality: float | None = None
    intelligibility: float | None = None

    @property
    def labeled(self) -> bool:
        return self.quality is not None and self.intelligibility is not None

    @property
    def noisy_key(self) -> tuple:
        """Identity of the noisy utterance, independent of the audiogram."""
        return (self.clean_path, self.noise_path, self.snr_db, self.noise_position)


@dataclass
class CorpusManifest:
    records: list[UtteranceRecord]
    seed: int
    digest: str
    version: str = __version__
    label_provenance: str = ""
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})[:5]
            raise ManifestError(f"duplicate record ids: {dupes}")
        self._index = {r.id: r for r in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, record_id: str) -> UtteranceRecord:
        return self._index[record_id]

    def split(self, *splits: CorpusSplit) -> list[UtteranceRecord]:
        return [r for r in self.records if r.split in splits]

    @property
    def is_labeled(self) -> bool:
        return all(r.labeled for r in self.records)

    def with_records(self, records: list[UtteranceRecord], **changes) -> "CorpusManifest":
        return CorpusManifest(
            records=records,
            seed=changes.get("seed", self.seed),
            digest=changes.get("digest", self.digest),
            version=self.version,
            label_provenance=changes.get("label_provenance", self.label_provenance),
        )


def _digest(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _names(paths: Sequence) -> list[str]:
    return [Path(p).stem for p in paths]


def _pick(rng: np.random.Generator, pool: list, k: int) -> list:
    idx = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
    return [pool[i] for i in sorted(idx)]


def build_train_manifest(
    clean_list: Sequence,
    noise_list: Sequence,
    bank: PatternBank | None = None,
    seed: int = 0,
    snrs: Sequence[float] = TRAIN_SNRS,
) -> CorpusManifest:
    """Assign one (noise, SNR) pair to every clean utterance and fan out over audiograms.

    A seeded 10% of utterances (rounded down, at least one) is held out as
    VAL. Each TRAIN utterance is paired with two SEEN patterns drawn per
    configuration; each VAL utterance with one.
    """
    bank = bank if bank is not None else builtin_pattern_bank()
    if not clean_list:
        raise ManifestError("clean_list is empty")
    if not noise_list:
        raise ManifestError("noise_list is empty")
    n = len(clean_list)
    if n < 2:
        raise ManifestError("need at least 2 clean utterances (one is held out for validation)")
    configs = [c for c in bank.configurations if bank.select(c, Split.SEEN)]
    if not configs:
        raise ManifestError("bank has no SEEN patterns")

    rng = np.random.default_rng(seed)
    n_val = max(1, int(n * VAL_FRACTION))
    val_idx = set(int(i) for i in rng.choice(n, size=n_val, replace=False))
    noise_names = _names(noise_list)

    records = []
    for i, clean in enumerate(clean_list):
        k = int(rng.integers(len(noise_list)))
        snr = float(snrs[int(rng.integers(len(snrs)))])
        position = float(rng.random())
        split = CorpusSplit.VAL if i in val_idx else CorpusSplit.TRAIN
        per_config = 1 if split is CorpusSplit.VAL else PATTERNS_PER_CATEGORY
        for config in configs:
            for entry in _pick(rng, bank.select(config, Split.SEEN), per_config):
                records.append(
                    UtteranceRecord(
                        id=f"{split.value.lower()}-{i:05d}-{entry.id}",
                        split=split,
                        clean_path=str(clean),
                        noise_name=noise_names[k],
                        noise_path=str(noise_list[k]),
                        noise_position=position,
                        snr_db=snr,
                        audiogram_id=entry.id,
                    )
                )
    digest = _digest(
        {
            "kind": "train",
            "clean": _names(clean_list),
            "noise": noise_names,
            "snrs": list(snrs),
            "bank": bank.to_text(),
            "seed": seed,
            "val_fraction": VAL_FRACTION,
        }
    )
    return CorpusManifest(records=records, seed=seed, digest=digest)


def build_test_manifest(
    clean_list: Sequence,
    noise_list: Sequence,
    bank: PatternBank | None = None,
    seed: int = 0,
    snrs: Sequence[float] = TEST_SNRS,
    strict: bool = True,
) -> CorpusManifest:
    """Cross every clean utterance with every noise and SNR, twice per configuration.

    Each configuration contributes two SEEN patterns (a seeded draw, fixed for
    the whole set) to TEST_SEEN and two UNSEEN patterns to TEST_UNSEEN, and
    both splits share the same noisy utterances. ``strict`` enforces the
    100-utterance, 4-noise layout.
    """
    bank = bank if bank is not None else builtin_pattern_bank()
    if strict and (len(clean_list) != STANDARD_TEST_CLEAN or len(noise_list) != STANDARD_TEST_NOISES):
        raise ManifestError(
            f"expected {STANDARD_TEST_CLEAN} clean and {STANDARD_TEST_NOISES} noise files, "
            f"got {len(clean_list)} and {len(noise_list)}"
        )
    if not clean_list or not noise_list:
        raise ManifestError("clean_list and noise_list must be non-empty")
    noise_names = _names(noise_list)
    if len(set(noise_names)) != len(noise_names):
        raise ManifestError("noise file names must be unique")

    rng = np.random.default_rng([seed, 1])
    groups = []
    for config in bank.configurations:
        seen = bank.select(config, Split.SEEN)
        unseen = bank.select(config, Split.UNSEEN)
        if len(seen) < PATTERNS_PER_CATEGORY or len(unseen) < PATTERNS_PER_CATEGORY:
            raise ManifestError(f"{config}: need {PATTERNS_PER_CATEGORY} seen and unseen patterns")
        groups.append((CorpusSplit.TEST_SEEN, _pick(rng, seen, PATTERNS_PER_CATEGORY)))
        groups.append((CorpusSplit.TEST_UNSEEN, _pick(rng, unseen, PATTERNS_PER_CATEGORY)))

    records = []
    for c, clean in enumerate(clean_list):
        for k, noise in enumerate(noise_list):
            for snr in snrs:
                position = float(rng.random())
                for split, entries in groups:
                    for entry in entries:
                        records.append(
                            UtteranceRecord(
                                id=f"{split.value.lower()}-{c:03d}-{noise_names[k]}-{snr:+g}dB-{entry.id}",
                                split=split,
                                clean_path=str(clean),
                                noise_name=noise_names[k],
                                noise_path=str(noise),
                                noise_position=position,
                                snr_db=float(snr),
                                audiogram_id=entry.id,
                            )
                        )
    expected = len(clean_list) * len(noise_list) * len(snrs) * sum(len(e) for _, e in groups)
    if len(records) != expected:
        raise ManifestError(f"record count {len(records)} != expected {expected}")
    digest = _digest(
        {
            "kind": "test",
            "clean": _names(clean_list),
            "noise": noise_names,
            "snrs": list(snrs),
            "bank": bank.to_text(),
            "seed": seed,
        }
    )
    return CorpusManifest(records=records, seed=seed, digest=digest)


def merge_manifests(*manifests: CorpusManifest) -> CorpusManifest:
    records = [r for m in manifests for r in m.records]
    digest = hashlib.sha256("".join(m.digest for m in manifests).encode()).hexdigest()[:16]
    provenance = {m.label_provenance for m in manifests if m.label_provenance}
    return CorpusManifest(
        records=records,
        seed=manifests[0].seed,
        digest=digest,
        label_provenance=";".join(sorted(provenance)),
    )


# -- manifest file ---------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _rel(path: str, base: Path) -> str:
    p = Path(path)
    if not p.is_absolute():
        return path
    return os.path.relpath(p, base)


def manifest_to_text(manifest: CorpusManifest, base_dir: str | Path | None = None) -> str:
    """Serialise to the tab-separated manifest format.

    Absolute paths are written relative to ``base_dir`` so a manifest and its
    audio can be moved together.
    """
    base = Path(base_dir).resolve() if base_dir is not None else None
    lines = [
        MANIFEST_HEADER,
        f"#seed\t{manifest.seed}",
        f"#version\t{manifest.version}",
        f"#digest\t{manifest.digest}",
        f"#labels\t{manifest.label_provenance}",
        "\t".join(COLUMNS),
    ]
    for r in manifest.records:
        clean = _rel(r.clean_path, base) if base else r.clean_path
        noise = _rel(r.noise_path, base) if base else r.noise_path
        row = (r.id, r.split.value, clean, r.noise_name, noise, r.noise_position,
               r.snr_db, r.audiogram_id, r.quality, r.intelligibility)
        lines.append("\t".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def manifest_from_text(text: str, base_dir: str | Path | None = None) -> CorpusManifest:
    lines = text.splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ManifestError(f"manifest must start with {MANIFEST_HEADER!r}")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].partition("\t")
        meta[key] = value
        i += 1
    if i >= len(lines) or tuple(lines[i].split("\t")) != COLUMNS:
        raise ManifestError("missing or malformed column header")
    base = Path(base_dir) if base_dir is not None else None

    def resolve(p: str) -> str:
        if base is None or Path(p).is_absolute():
            return p
        return str((base / p).resolve())

    def opt(v: str) -> float | None:
        return float(v) if v else None

    records = []
    for lineno, line in enumerate(lines[i + 1 :], start=i + 2):
        if not line:
            continue
        f = line.split("\t")
        if len(f) != len(COLUMNS):
            raise ManifestError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(f)}")
        try:
            records.append(
                UtteranceRecord(
                    id=f[0],
                    split=CorpusSplit(f[1]),
                    clean_path=resolve(f[2]),
                    noise_name=f[3],
                    noise_path=resolve(f[4]),
                    noise_position=float(f[5]),
                    snr_db=float(f[6]),
                    audiogram_id=f[7],
                    quality=opt(f[8]),
                    intelligibility=opt(f[9]),
                )
            )
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from None
    return CorpusManifest(
        records=records,
        seed=int(meta.get("seed", 0)),
        digest=meta.get("digest", ""),
        version=meta.get("version", __version__),
        label_provenance=meta.get("labels", ""),
    )


def write_manifest(path: str | Path, manifest: CorpusManifest) -> None:
    path = Path(path)
    atomic_write_text(path, manifest_to_text(manifest, base_dir=path.parent))


def read_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    return manifest_from_text(path.read_text(), base_dir=path.parent)


# -- realisation -----------------------------------------------------------------


@lru_cache(maxsize=64)
def _load(path: str) -> AudioSignal:
    return read_wav(path)


@dataclass(frozen=True)
class RealizedSignals:
    clean: np.ndarray
    noise: np.ndarray
    """Noise segment already scaled to the record's SNR."""
    amplified: np.ndarray
    """NAL-R amplified mixture, the signal the model hears."""


def realize_signals(record: UtteranceRecord, bank: PatternBank | None = None) -> RealizedSignals:
    """Mix and amplify a record's audio (clean and scaled noise kept for oracles)."""
    bank = bank if bank is not None else builtin_pattern_bank()
    if not Path(record.clean_path).exists():
        raise FileNotFoundError(record.clean_path)
    if not Path(record.noise_path).exists():
        raise FileNotFoundError(record.noise_path)
    clean = rms_normalize(_load(record.clean_path), PRESENTATION_RMS)
    noise = _load(record.noise_path)
    offset = segment_offset(len(noise), len(clean), record.noise_position)
    seg = noise_segment(noise, len(clean), offset)
    scaled = noise_gain(clean.power, float(np.mean(seg**2)), record.snr_db) * seg
    mixture = AudioSignal(clean.samples + scaled, clean.sample_rate_hz)
    amplified = apply_nalr(mixture, bank.audiogram(record.audiogram_id))
    return RealizedSignals(clean.samples, scaled, amplified.samples)


def realize(record: UtteranceRecord, bank: PatternBank | None = None) -> tuple[Spectrogram, Audiogram]:
    """Features for one record: STFT magnitude of the amplified mixture, plus its audiogram."""
    bank = bank if bank is not None else builtin_pattern_bank()
    signals = realize_signals(record, bank)
    spec = stft_magnitude(AudioSignal(signals.amplified))
    return spec, bank.audiogram(record.audiogram_id)


def _realize_job(args):
    record, bank = args
    return realize(record, bank)


def realize_many(
    records: Sequence[UtteranceRecord], bank: PatternBank | None = None, jobs: int = 1
) -> list[tuple[Spectrogram, Audiogram]]:
    """Realise records in order, optionally across a process pool."""
    bank = bank if bank is not None else builtin_pattern_bank()
    if jobs <= 1 or len(records) < 2:
        return [realize(r, bank) for r in records]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_realize_job, [(r, bank) for r in records], chunksize=16))


def unlabeled(manifest: CorpusManifest) -> CorpusManifest:
    """Copy of ``manifest`` with every label removed."""
    return manifest.with_records(
        [replace(r, quality=None, intelligibility=None) for r in manifest.records], label_provenance=""
    )
