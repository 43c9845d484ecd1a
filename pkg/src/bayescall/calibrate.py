"""Temperature scaling and expected calibration error.

Temperature scaling divides logits by a scalar T > 0 fitted to minimize
validation NLL, leaving argmax decisions unchanged.  ECE partitions max-class
confidences into K equal-width bins and averages |accuracy - confidence| over
bins, weighted by bin occupancy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateDatasetError,
    NumericError,
    RangeError,
    ShapeError,
)
from .nn import check_matrix, log_softmax

LOG_T_LOW = math.log(0.05)
LOG_T_HIGH = math.log(20.0)
BRACKET_TOL = 1e-4


@dataclass
class TemperatureParam:
    T: float

    def __post_init__(self):
        self.T = float(self.T)
        if self.T <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.T}")


def apply_temperature(logits: np.ndarray, T: float) -> np.ndarray:
    """Softmax of logits / T, in stable log-sum-exp form."""
    if T <= 0:
        raise ConfigurationError(f"temperature must be positive, got {T}")
    logits = check_matrix("logits", logits)
    return np.exp(log_softmax(logits / T))


def _mean_nll(logits: np.ndarray, labels: np.ndarray, T: float) -> float:
    logp = log_softmax(logits / T)
    per_example = -logp[np.arange(logits.shape[0]), labels]
    # Summing in sorted order makes the objective exactly permutation-invariant,
    # so the fitted T cannot depend on validation-set order.
    return float(np.sort(per_example).sum() / per_example.size)


def fit_temperature(val_logits: np.ndarray, val_labels: np.ndarray) -> TemperatureParam:
    """Golden-section search for the NLL-minimizing temperature.

    Searches ln T over [ln 0.05, ln 20] until the bracket is narrower than
    1e-4, then keeps whichever of the fitted T and T = 1 has the lower NLL,
    so scaling never hurts validation NLL.
    """
    val_logits = check_matrix("val_logits", val_logits)
    if val_logits.shape[0] == 0:
        raise DegenerateDatasetError("validation set is empty")
    if not np.all(np.isfinite(val_logits)):
        raise NumericError("validation logits contain non-finite values")
    val_labels = np.asarray(val_labels)
    if val_labels.shape != (val_logits.shape[0],):
        raise ShapeError(
            f"labels shape {val_labels.shape} does not match logits rows "
            f"{val_logits.shape[0]}"
        )

    def objective(log_t: float) -> float:
        return _mean_nll(val_logits, val_labels, math.exp(log_t))

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = LOG_T_LOW, LOG_T_HIGH
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = objective(c), objective(d)
    while hi - lo > BRACKET_TOL:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = objective(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = objective(d)
    fitted = math.exp(0.5 * (lo + hi))
    if _mean_nll(val_logits, val_labels, fitted) <= _mean_nll(val_logits, val_labels, 1.0):
        return TemperatureParam(fitted)
    return TemperatureParam(1.0)


@dataclass
class ReliabilityBins:
    """Equal-width confidence bins over [0, 1] with per-bin statistics.

    Empty bins keep zero confidence/accuracy and contribute nothing to ECE.
    """

    k: int
    counts: np.ndarray  # (k,) examples per bin
    mean_confidence: np.ndarray  # (k,)
    accuracy: np.ndarray  # (k,)
    n: int

    @property
    def bin_edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.k + 1)

    def gaps(self) -> np.ndarray:
        return np.abs(self.accuracy - self.mean_confidence)

    def ece(self) -> float:
        return float(np.sum((self.counts / self.n) * self.gaps()))


def _validate_calibration_input(confidences, correctness, k: int):
    if k < 1:
        raise ConfigurationError(f"bin count must be >= 1, got {k}")
    confidences = np.asarray(confidences, dtype=np.float64).reshape(-1)
    correctness = np.asarray(correctness).reshape(-1).astype(np.float64)
    if confidences.size == 0:
        raise DegenerateDatasetError("no predictions to calibrate against")
    if confidences.shape != correctness.shape:
        raise ShapeError(
            f"{confidences.size} confidences vs {correctness.size} correctness flags"
        )
    if confidences.min() < 0.0 or confidences.max() > 1.0:
        raise RangeError("confidences must lie in [0, 1]")
    return confidences, correctness


def reliability_table(confidences, correctness, k: int = 10) -> ReliabilityBins:
    """Bin predictions by confidence: bin floor(c * k), with 1.0 in the last."""
    confidences, correctness = _validate_calibration_input(confidences, correctness, k)
    bins = np.minimum(np.floor(confidences * k).astype(np.int64), k - 1)
    counts = np.bincount(bins, minlength=k)
    conf_sums = np.bincount(bins, weights=confidences, minlength=k)
    correct_sums = np.bincount(bins, weights=correctness, minlength=k)
    occupied = counts > 0
    mean_conf = np.zeros(k)
    acc = np.zeros(k)
    mean_conf[occupied] = conf_sums[occupied] / counts[occupied]
    acc[occupied] = correct_sums[occupied] / counts[occupied]
    return ReliabilityBins(k, counts, mean_conf, acc, confidences.size)


def compute_ece(confidences, correctness, k: int = 10) -> float:
    """Bin-weighted mean absolute gap between accuracy and confidence."""
    return reliability_table(confidences, correctness, k).ece()


def reliability_csv(bins: ReliabilityBins) -> str:
    """CSV rendering of the table; the final line carries the ECE summary."""
    edges = bins.bin_edges
    gaps = bins.gaps()
    lines = ["bin_low,bin_high,count,mean_confidence,accuracy,gap"]
    for i in range(bins.k):
        lines.append(
            f"{edges[i]:.6f},{edges[i + 1]:.6f},{int(bins.counts[i])},"
            f"{bins.mean_confidence[i]:.10g},{bins.accuracy[i]:.10g},{gaps[i]:.10g}"
        )
    lines.append(f"ece,{bins.ece():.10g}")
    return "".join(line + "\n" for line in lines)
