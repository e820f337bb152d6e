"""Time-domain adversarial post-processing for synthetic speech.

A residual generator learns a small additive waveform that makes fake audio
score as genuine under a frozen detector, while regularization keeps the
change quiet, bounded and mostly out of silent regions.
"""

__version__ = "0.1.0"
