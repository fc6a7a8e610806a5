"""Audio primitives: WAV I/O, STFT magnitude features and SNR mixing.

All functions are pure; random choices (the noise segment offset) are made
by the caller and passed in explicitly.
"""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WINDOW_SIZE = 512
HOP_SIZE = 256
N_BINS = WINDOW_SIZE // 2 + 1

SPECTROGRAM_MAGIC = b"HSPC"


class DSPError(ValueError):
    """Raised for invalid audio input (too short, silent, wrong format)."""


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise DSPError("sample rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DSPError("only mono signals are supported")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def power(self) -> float:
        """Mean squared amplitude over the whole signal."""
        return float(np.mean(self.samples**2)) if len(self) else 0.0


@dataclass(frozen=True)
class Spectrogram:
    """Linear STFT magnitudes, one row per frame and 257 bins per row."""

    frames: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE
    window_size: int = WINDOW_SIZE
    hop_size: int = HOP_SIZE

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def hamming(n: int = WINDOW_SIZE) -> np.ndarray:
    """Symmetric Hamming window, ``0.54 - 0.46 cos(2 pi k / (n - 1))``."""
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_count(n_samples: int) -> int:
    if n_samples < WINDOW_SIZE:
        raise DSPError("utterance too short")
    return (n_samples - WINDOW_SIZE) // HOP_SIZE + 1


def stft_magnitude(signal: AudioSignal) -> Spectrogram:
    """Magnitude spectrogram with a 512-point Hamming window and hop 256.

    The trailing partial frame is dropped, so a signal of ``n`` samples gives
    ``(n - 512) // 256 + 1`` frames.
    """
    if signal.sample_rate_hz != SAMPLE_RATE:
        raise DSPError(f"expected {SAMPLE_RATE} Hz audio, got {signal.sample_rate_hz}")
    n_frames = frame_count(len(signal))
    windows = np.lib.stride_tricks.sliding_window_view(signal.samples, WINDOW_SIZE)
    windows = windows[: (n_frames - 1) * HOP_SIZE + 1 : HOP_SIZE]
    mags = np.abs(np.fft.rfft(windows * hamming(), n=WINDOW_SIZE, axis=1))
    return Spectrogram(frames=mags, sample_rate_hz=signal.sample_rate_hz)


def noise_segment(noise: AudioSignal, length: int, offset: int) -> np.ndarray:
    if offset < 0 or offset + length > len(noise):
        raise DSPError(
            f"noise segment [{offset}, {offset + length}) outside noise of length {len(noise)}"
        )
    return noise.samples[offset : offset + length]


def segment_offset(noise_len: int, clean_len: int, position: float) -> int:
    """Map a uniform draw ``position`` in [0, 1) to a valid segment start."""
    if noise_len < clean_len:
        raise DSPError("noise shorter than clean utterance")
    span = noise_len - clean_len + 1
    return min(int(np.floor(position * span)), span - 1)


def noise_gain(clean_power: float, noise_power: float, snr_db: float) -> float:
    """Scale factor on the noise so that ``10 log10(Pc / (g^2 Pn)) == snr_db``."""
    if clean_power <= 0.0 or noise_power <= 0.0:
        raise DSPError("degenerate power")
    return float(np.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(
    clean: AudioSignal,
    noise: AudioSignal,
    snr_db: float,
    offset: int | None = None,
    rng: np.random.Generator | None = None,
) -> AudioSignal:
    """Add a noise segment to ``clean`` at the requested SNR.

    The segment of ``noise`` starting at ``offset`` (or at a uniformly random
    position drawn from ``rng`` when ``offset`` is None) is cut to the clean
    length and scaled. Powers are measured over the full utterance.
    """
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise DSPError("sample rates differ")
    if len(noise) < len(clean):
        raise DSPError("noise shorter than clean utterance")
    if offset is None:
        rng = rng if rng is not None else np.random.default_rng()
        offset = int(rng.integers(0, len(noise) - len(clean) + 1))
    seg = noise_segment(noise, len(clean), offset)
    g = noise_gain(clean.power, float(np.mean(seg**2)), snr_db)
    return AudioSignal(clean.samples + g * seg, clean.sample_rate_hz)


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return float(10.0 * np.log10(np.mean(clean**2) / np.mean(noise**2)))


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def rms_normalize(signal: AudioSignal, target_rms: float) -> AudioSignal:
    if target_rms <= 0:
        raise DSPError("target RMS must be positive")
    current = rms(signal.samples) if len(signal) else 0.0
    if current == 0.0:
        raise DSPError("degenerate power")
    return AudioSignal(signal.samples * (target_rms / current), signal.sample_rate_hz)


# -- WAV I/O -----------------------------------------------------------------


def read_wav(path: str | Path) -> AudioSignal:
    """Read a 16-bit PCM mono 16 kHz WAV file into floats in [-1, 1)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise DSPError(f"{path}: only mono WAV is supported")
        if fh.getsampwidth() != 2:
            raise DSPError(f"{path}: only 16-bit PCM WAV is supported")
        if fh.getframerate() != SAMPLE_RATE:
            raise DSPError(f"{path}: expected {SAMPLE_RATE} Hz, got {fh.getframerate()} Hz")
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioSignal(data, SAMPLE_RATE)


def write_wav(path: str | Path, signal: AudioSignal) -> None:
    if signal.sample_rate_hz != SAMPLE_RATE:
        raise DSPError(f"expected {SAMPLE_RATE} Hz audio")
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(signal.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


# -- spectrogram serialisation -------------------------------------------------


def spectrogram_to_bytes(spec: Spectrogram) -> bytes:
    frames = np.ascontiguousarray(spec.frames, dtype="<f4")
    header = SPECTROGRAM_MAGIC + struct.pack("<III", frames.shape[0], frames.shape[1], spec.sample_rate_hz)
    return header + frames.tobytes()


def spectrogram_from_bytes(blob: bytes) -> Spectrogram:
    if blob[:4] != SPECTROGRAM_MAGIC:
        raise DSPError("not a spectrogram file (bad magic)")
    n_frames, n_bins, sr = struct.unpack("<III", blob[4:16])
    body = blob[16:]
    if len(body) != 4 * n_frames * n_bins:
        raise DSPError("truncated spectrogram file")
    frames = np.frombuffer(body, dtype="<f4").reshape(n_frames, n_bins).astype(np.float64)
    return Spectrogram(frames=frames, sample_rate_hz=sr)


def save_spectrogram(path: str | Path, spec: Spectrogram) -> None:
    Path(path).write_bytes(spectrogram_to_bytes(spec))


def load_spectrogram(path: str | Path) -> Spectrogram:
    return spectrogram_from_bytes(Path(path).read_bytes())
