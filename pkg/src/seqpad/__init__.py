"""Spoof detection for fingerprint frame sequences.

Raw Bayer frames are demosaiced, minutiae are located on a reference frame,
and fixed-size patch sequences around each minutia are scored by a
time-distributed CNN followed by a bidirectional LSTM.
"""

from .estimators import BayerDemosaicer, SpoofSequenceClassifier

__version__ = "0.1.0"

__all__ = ["BayerDemosaicer", "SpoofSequenceClassifier", "__version__"]
