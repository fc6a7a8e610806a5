"""Classify audiograms and look at the NAL-R prescription for each.

Every pattern in the built-in bank is classified by its shape; the bank
stores five seen and two held-out patterns per configuration. For one
pattern per configuration we print the prescribed insertion gains and
measure how much a broadband noise is amplified in each audiogram band.
"""
from __future__ import annotations

import numpy as np

from hasanet.dsp import AudioSignal
from hasanet.hearing import AUDIOGRAM_FREQS, Split, apply_nalr, builtin_pattern_bank, classify_configuration, nalr_gains

bank = builtin_pattern_bank()
print(f"{len(bank)} patterns; problems: {bank.validate() or 'none'}")

rng = np.random.default_rng(0)
noise = AudioSignal(rng.standard_normal(32000))
spectrum_in = np.abs(np.fft.rfft(noise.samples)) ** 2
freqs = np.fft.rfftfreq(len(noise), 1 / 16000)

print(f"{'pattern':<16}{'class':<15}" + "".join(f"{f:>7}" for f in AUDIOGRAM_FREQS))
for config in bank.configurations:
    entry = bank.select(config, Split.SEEN)[0]
    ag = entry.audiogram
    assert classify_configuration(ag.levels) == config
    gains = nalr_gains(ag)
    out = apply_nalr(noise, ag)
    spectrum_out = np.abs(np.fft.rfft(out.samples)) ** 2
    measured = []
    for f in AUDIOGRAM_FREQS:
        band = (freqs > f / 1.1) & (freqs < f * 1.1)
        measured.append(10 * np.log10(spectrum_out[band].sum() / spectrum_in[band].sum()))
    print(f"{ag.id:<16}{'thresholds':<15}" + "".join(f"{h:7.0f}" for h in ag.levels))
    print(f"{'':<16}{'NAL-R gain':<15}" + "".join(f"{g:7.1f}" for g in gains))
    print(f"{'':<16}{'measured':<15}" + "".join(f"{g:7.1f}" for g in measured))
