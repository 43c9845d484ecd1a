"""Uncertainty-aware somatic-variant vs artifact calling on tumor/normal pileups.

Two classifier heads over the same dense encoder: a deterministic dense head
trained by cross-entropy, and a Gaussian mean-field variational head trained
by minimizing the negative evidence lower bound with the Flipout estimator.
Includes Monte-Carlo predictive inference, temperature-scaling calibration,
expected-calibration-error evaluation, and out-of-distribution experiments
(input noise, reduced sequencing depth).
"""

__version__ = "0.1.0"
