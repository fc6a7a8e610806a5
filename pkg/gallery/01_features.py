"""Turn a waveform into the network's input features.

A one-second 1 kHz tone is framed with a 512-point Hamming window and hop
256, giving 61 frames of 257 magnitude bins. The audiogram is appended to
every frame, scaled by 1/100, for a 263-wide input row.
"""
from __future__ import annotations

import numpy as np

from hasanet.dsp import AudioSignal, frame_count, stft_magnitude
from hasanet.hearing import Audiogram
from hasanet.nn import concat_inputs

t = np.arange(16000) / 16000
tone = AudioSignal(0.1 * np.sin(2 * np.pi * 1000 * t))
spec = stft_magnitude(tone)
print(f"{len(tone)} samples -> {spec.n_frames} frames (law gives {frame_count(len(tone))})")
print("peak bin:", int(np.argmax(spec.frames[10])), "=", 1000 * 512 // 16000, "expected")

audiogram = Audiogram([20, 25, 35, 50, 65, 70])
x = concat_inputs(spec, audiogram)
print("input shape:", x.shape)
print("appended columns of frame 0:", x[0, 257:])
