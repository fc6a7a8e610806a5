"""Audiograms, the six-way configuration taxonomy and NAL-R linear fitting."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dsp import AudioSignal, DSPError

AUDIOGRAM_FREQS = np.array([250.0, 500.0, 1000.0, 2000.0, 4000.0, 6000.0])
HEARING_LOSS_DB = 20.0
MAX_THRESHOLD_DB = 120.0

BANK_RESOURCE = "patterns_v1.tsv"
BANK_HEADER = "#hasa-patterns v1"

# NAL-R linear prescription (Byrne & Dillon, 1986):
#   X = 0.05 (H500 + H1000 + H2000);  G(f) = X + 0.31 H(f) + k(f)
NALR_X_FACTOR = 0.05
NALR_SLOPE = 0.31
NALR_CORRECTIONS = np.array([-17.0, -8.0, 1.0, -1.0, -2.0, -2.0])


class Configuration(str, enum.Enum):
    FLAT = "Flat"
    SLOPING = "Sloping"
    RISING = "Rising"
    COOKIE_BITE = "CookieBite"
    NOISE_NOTCHED = "NoiseNotched"
    HIGH_FREQUENCY = "HighFrequency"

    def __str__(self) -> str:
        return self.value


CONFIGURATIONS = tuple(Configuration)


class Split(str, enum.Enum):
    SEEN = "SEEN"
    UNSEEN = "UNSEEN"

    def __str__(self) -> str:
        return self.value


class HearingError(ValueError):
    pass


@dataclass(frozen=True)
class Audiogram:
    """Hearing thresholds in dB HL at 250, 500, 1000, 2000, 4000 and 6000 Hz."""

    thresholds_db_hl: tuple[float, ...]
    configuration: Configuration | None = None
    id: str = ""

    def __post_init__(self):
        th = tuple(float(v) for v in self.thresholds_db_hl)
        if len(th) != len(AUDIOGRAM_FREQS):
            raise HearingError(f"expected 6 thresholds, got {len(th)}")
        if any(not 0.0 <= v <= MAX_THRESHOLD_DB for v in th):
            raise HearingError(f"thresholds must lie in [0, {MAX_THRESHOLD_DB:g}] dB HL: {th}")
        object.__setattr__(self, "thresholds_db_hl", th)
        if self.configuration is not None:
            object.__setattr__(self, "configuration", Configuration(self.configuration))

    @property
    def levels(self) -> np.ndarray:
        return np.array(self.thresholds_db_hl)

    @property
    def is_hearing_loss(self) -> bool:
        return max(self.thresholds_db_hl) > HEARING_LOSS_DB


def _is_flat(h):
    return h.max() - h.min() <= 10


def _is_sloping(h):
    return bool(np.all(np.diff(h) >= 0)) and h[-1] - h[0] >= 15


def _is_rising(h):
    return bool(np.all(np.diff(h) <= 0)) and h[0] - h[-1] >= 15


def _is_cookie_bite(h):
    # peak strictly between 500 and 4000 Hz, i.e. at 1000 or 2000 Hz
    peak = h.max()
    return h[2:4].max() == peak and h[0] <= peak - 15 and h[-1] <= peak - 15


def _is_noise_notched(h):
    return h[4] >= h[3] and h[4] - h[5] >= 10


def _is_high_frequency(h):
    return bool(np.all(h[:3] <= 20)) and bool(np.all(h[4:] >= 40))


_PREDICATES = (
    (Configuration.FLAT, _is_flat),
    (Configuration.SLOPING, _is_sloping),
    (Configuration.RISING, _is_rising),
    (Configuration.COOKIE_BITE, _is_cookie_bite),
    (Configuration.NOISE_NOTCHED, _is_noise_notched),
    (Configuration.HIGH_FREQUENCY, _is_high_frequency),
)


def classify_configuration(audiogram: Audiogram | Sequence[float]) -> Configuration:
    """Return the first configuration whose shape predicate matches.

    Predicates are tried in the order flat, sloping, rising, cookie-bite,
    noise-notched, high-frequency.
    """
    levels = audiogram.levels if isinstance(audiogram, Audiogram) else np.asarray(audiogram, float)
    if levels.shape != AUDIOGRAM_FREQS.shape:
        raise HearingError("expected 6 thresholds")
    for config, predicate in _PREDICATES:
        if predicate(levels):
            return config
    raise HearingError(f"unclassifiable audiogram: {levels.tolist()}")


@dataclass(frozen=True)
class PatternEntry:
    audiogram: Audiogram
    split: Split

    @property
    def id(self) -> str:
        return self.audiogram.id

    @property
    def configuration(self) -> Configuration:
        return self.audiogram.configuration


class PatternBank:
    """An ordered, immutable collection of labelled audiograms with seen/unseen tags."""

    def __init__(self, entries: Iterable[PatternEntry]):
        self._entries = tuple(entries)
        ids = [e.id for e in self._entries]
        if len(set(ids)) != len(ids):
            raise HearingError("duplicate audiogram ids in bank")
        self._by_id = {e.id: e for e in self._entries}

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, i: int) -> PatternEntry:
        return self._entries[i]

    def get(self, audiogram_id: str) -> PatternEntry:
        try:
            return self._by_id[audiogram_id]
        except KeyError:
            raise HearingError(f"unknown audiogram id {audiogram_id!r}") from None

    def audiogram(self, audiogram_id: str) -> Audiogram:
        return self.get(audiogram_id).audiogram

    def select(self, configuration: Configuration | None = None, split: Split | None = None) -> list[PatternEntry]:
        return [
            e
            for e in self._entries
            if (configuration is None or e.configuration == configuration)
            and (split is None or e.split == split)
        ]

    @property
    def configurations(self) -> list[Configuration]:
        return [c for c in CONFIGURATIONS if self.select(c)]

    def validate(self, full: bool = True) -> list[str]:
        """Return a list of problems; an empty list means the bank is valid.

        With ``full`` the standard layout is also enforced: 42 patterns, 7 per
        configuration, split 5 seen and 2 unseen.
        """
        problems = []
        for e in self._entries:
            try:
                got = classify_configuration(e.audiogram)
            except HearingError as exc:
                problems.append(f"{e.id}: {exc}")
                continue
            if got != e.configuration:
                problems.append(f"{e.id}: labelled {e.configuration} but classifies as {got}")
            if not e.audiogram.is_hearing_loss:
                problems.append(f"{e.id}: no threshold above {HEARING_LOSS_DB:g} dB HL")
        if full:
            if len(self._entries) != 42:
                problems.append(f"bank has {len(self._entries)} patterns, expected 42")
            for c in CONFIGURATIONS:
                n_seen = len(self.select(c, Split.SEEN))
                n_unseen = len(self.select(c, Split.UNSEEN))
                if (n_seen, n_unseen) != (5, 2):
                    problems.append(f"{c}: {n_seen} seen / {n_unseen} unseen, expected 5 / 2")
        return problems

    def to_text(self) -> str:
        lines = [BANK_HEADER]
        for e in self._entries:
            levels = "\t".join(str(int(round(v))) for v in e.audiogram.thresholds_db_hl)
            lines.append(f"{e.configuration}\t{e.split}\t{levels}")
        return "\n".join(lines) + "\n"


def parse_bank(text: str) -> PatternBank:
    """Parse the plain-text bank table (category, split tag, six thresholds).

    Pattern ids are assigned as ``<category>-<k>`` with ``k`` counting from 1
    within each category in file order.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != BANK_HEADER:
        raise HearingError(f"bank file must start with {BANK_HEADER!r}")
    counters: dict[Configuration, int] = {}
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise HearingError(f"line {lineno}: expected 8 tab-separated fields, got {len(fields)}")
        try:
            config = Configuration(fields[0])
            split = Split(fields[1])
            levels = [int(v) for v in fields[2:]]
        except ValueError as exc:
            raise HearingError(f"line {lineno}: {exc}") from None
        counters[config] = counters.get(config, 0) + 1
        ag = Audiogram(tuple(levels), config, id=f"{config}-{counters[config]}")
        entries.append(PatternEntry(ag, split))
    return PatternBank(entries)


def load_bank(path: str | Path) -> PatternBank:
    return parse_bank(Path(path).read_text())


_BUILTIN: PatternBank | None = None


def builtin_pattern_bank() -> PatternBank:
    """The frozen 42-pattern bank shipped with the package."""
    global _BUILTIN
    if _BUILTIN is None:
        text = resources.files("hasanet.data").joinpath(BANK_RESOURCE).read_text()
        _BUILTIN = parse_bank(text)
    return _BUILTIN


# -- NAL-R ---------------------------------------------------------------------


def nalr_gains(audiogram: Audiogram, corrections: np.ndarray | None = None) -> np.ndarray:
    """NAL-R insertion gains in dB at the six audiogram frequencies.

    Negative prescriptions are clamped to 0 dB. ``corrections`` overrides the
    per-frequency constants ``k(f)``.
    """
    h = audiogram.levels
    k = NALR_CORRECTIONS if corrections is None else np.asarray(corrections, float)
    x = NALR_X_FACTOR * (h[1] + h[2] + h[3])
    return np.maximum(0.0, x + NALR_SLOPE * h + k)


def interpolate_log_freq(freqs_hz: np.ndarray, anchor_values: np.ndarray) -> np.ndarray:
    """Interpolate values given at the audiogram frequencies, linear in log frequency.

    Values are held constant below 250 Hz and above 6000 Hz (including DC).
    """
    f = np.clip(np.asarray(freqs_hz, float), AUDIOGRAM_FREQS[0], AUDIOGRAM_FREQS[-1])
    return np.interp(np.log2(f), np.log2(AUDIOGRAM_FREQS), anchor_values)


def gain_curve(n_samples: int, sample_rate_hz: int, gains_db: np.ndarray) -> np.ndarray:
    """Linear amplitude gain for every rfft bin of an ``n_samples`` signal."""
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate_hz)
    return 10.0 ** (interpolate_log_freq(freqs, gains_db) / 20.0)


def apply_gains(signal: AudioSignal, gains_db: np.ndarray) -> AudioSignal:
    """Zero-phase filter: scale each frequency bin by the interpolated gain."""
    n = len(signal)
    if n == 0:
        raise DSPError("empty signal")
    spectrum = np.fft.rfft(signal.samples)
    out = np.fft.irfft(spectrum * gain_curve(n, signal.sample_rate_hz, gains_db), n=n)
    return AudioSignal(out, signal.sample_rate_hz)


def apply_nalr(signal: AudioSignal, audiogram: Audiogram, corrections: np.ndarray | None = None) -> AudioSignal:
    """Amplify ``signal`` with the NAL-R prescription for ``audiogram``."""
    return apply_gains(signal, nalr_gains(audiogram, corrections))
