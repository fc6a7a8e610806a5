"""Non-intrusive hearing-aid speech quality and intelligibility assessment.

The package is organised as a pipeline:

* :mod:`hasanet.dsp` -- audio I/O, STFT magnitude features, SNR mixing.
* :mod:`hasanet.hearing` -- audiograms, configuration taxonomy, NAL-R fitting.
* :mod:`hasanet.synth` -- seeded corpus manifests and record realisation.
* :mod:`hasanet.labels` -- label files and the surrogate intrusive oracle.
* :mod:`hasanet.nn` -- BLSTM + multi-head attention model with exact gradients.
* :mod:`hasanet.train` -- multi-task loss, RMSprop, early stopping.
* :mod:`hasanet.evaluation` -- MSE / LCC / SRCC and per-configuration reports.
* :mod:`hasanet.cli` -- the ``hasanet`` command line entry point.
"""

__version__ = "0.1.0"
