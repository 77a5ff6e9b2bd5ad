"""Outlier scores for scalar observations under Gaussian marginals.

The score of an observation x with marginal mean mu and std sigma is

    S(x) = -log Phi(-z),   z = |x - mu| / sigma,

the negative log tail mass beyond x on the side of x. It is 0-anchored at
log(2) for z = 0, strictly increasing in z, and stays finite far into the
tail (z = 38 gives roughly 726). Everything is computed through log Phi in
the log domain, never through Phi itself, so the far tail does not underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import log_ndtr

if TYPE_CHECKING:  # pragma: no cover
    from .mechanism import MechanismModel

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MarginalStats:
    """Mean and standard deviation of one node's training marginal."""

    mean: float
    std: float


def _require_positive_std(stats: MarginalStats) -> None:
    if not stats.std > 0.0:
        raise ValueError(f"marginal std must be positive, got {stats.std}")


def z_value(stats: MarginalStats, x: float) -> float:
    """Absolute standardized deviation |x - mean| / std."""
    _require_positive_std(stats)
    return abs(x - stats.mean) / stats.std


def outlier_score(stats: MarginalStats, x: float) -> float:
    """S(x) = -log Phi(-|x - mean| / std)."""
    return float(score_values(stats, np.asarray([x]))[0])


def score_values(stats: MarginalStats, xs: np.ndarray) -> np.ndarray:
    """Vectorized outlier score."""
    _require_positive_std(stats)
    z = np.abs(np.asarray(xs, dtype=float) - stats.mean) / stats.std
    return -log_ndtr(-z)


def score_derivative(stats: MarginalStats, x: float) -> float:
    """dS/dx = sign(x - mean) / std * phi(z) / Phi(-z).

    At x = mean the score has a kink; the symmetric subgradient 0 is returned.
    """
    return float(score_derivatives(stats, np.asarray([x]))[0])


def score_derivatives(stats: MarginalStats, xs: np.ndarray) -> np.ndarray:
    """Vectorized dS/dx.

    The hazard ratio phi(z) / Phi(-z) is evaluated as exp(log phi - log Phi)
    which stays accurate for large z (it approaches z from above).
    """
    _require_positive_std(stats)
    xs = np.asarray(xs, dtype=float)
    dev = xs - stats.mean
    z = np.abs(dev) / stats.std
    hazard = np.exp(-0.5 * z * z - _LOG_SQRT_2PI - log_ndtr(-z))
    return np.sign(dev) / stats.std * hazard


def score_of_leaf(model: "MechanismModel", target: int, x: float) -> float:
    """Outlier score of x under the target node's training marginal."""
    stats = model.stats_of(target)
    return outlier_score(stats, x)
