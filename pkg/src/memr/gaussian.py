"""Diagonal Gaussian math and the maximum-entropy sampling priority.

The priority of a (state, action) pair is the half squared Mahalanobis
deviation of the action under the conditional Gaussian fitted to the model
dataset at that state.  Adding the pair with the largest priority maximizes
the first-order gain in joint state-action entropy of the model dataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
PRIORITY_EPS = 1e-6
STD_FLOOR = 1e-3
KNN_DIST_FLOOR = 1e-12


class DegenerateSampleError(ValueError):
    """Raised when a sample set has zero variance or too few points."""


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.ndim != 1 or mean.shape != std.shape or mean.size == 0:
            raise ValueError(f"mean/std shape mismatch: {mean.shape} vs {std.shape}")
        if not np.all(std > 0):
            raise ValueError("std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.size


def _check_dim(g: DiagGaussian, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != g.mean.shape:
        raise ValueError(f"expected vector of length {g.dim}, got shape {x.shape}")
    return x


def log_prob(g: DiagGaussian, x) -> float:
    x = _check_dim(g, x)
    z = (x - g.mean) / g.std
    return float(np.sum(-HALF_LOG_2PI - np.log(g.std) - 0.5 * z * z))


def entropy(g: DiagGaussian) -> float:
    return float(np.sum(0.5 * np.log(2.0 * math.pi * math.e * g.std**2)))


def priority(g: DiagGaussian, a, eps: float = PRIORITY_EPS) -> float:
    """Half squared Mahalanobis deviation of ``a``, floored at ``eps``.

    Per dimension, ``-log(sqrt(2 pi) * pdf(a) * sigma)`` reduces exactly to
    ``(a - mu)**2 / (2 sigma**2)``; dimensions are summed.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    a = _check_dim(g, a)
    z = (a - g.mean) / g.std
    return max(eps, float(0.5 * np.sum(z * z)))


def priorities(mean: np.ndarray, std: np.ndarray, actions: np.ndarray,
               eps: float = PRIORITY_EPS) -> np.ndarray:
    """Vectorized ``priority`` over a batch of rows."""
    z = (actions - mean) / std
    return np.maximum(eps, 0.5 * np.sum(z * z, axis=-1))


def _mle(values: np.ndarray) -> tuple[float, float]:
    mu = float(values.mean())
    var = float(np.mean((values - mu) ** 2))
    return mu, var


def entropy_gain_exact(values: Sequence[float], t: float) -> float:
    """Change in fitted-Gaussian entropy after appending ``t``, by MLE refit."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise DegenerateSampleError("need at least two observations")
    _, var1 = _mle(x)
    if var1 <= 0.0:
        raise DegenerateSampleError("sample variance is zero")
    _, var2 = _mle(np.append(x, t))
    return 0.5 * math.log(var2 / var1)


def entropy_gain_closed_form(n: int, mean: float, var: float, t: float) -> float:
    return 0.5 * math.log((n / (n + 1)) * (1.0 + (t - mean) ** 2 / ((n + 1) * var)))


def entropy_gain_approx(n: int, mean: float, std: float, t: float) -> float:
    if n < 1 or std <= 0:
        raise ValueError("need n >= 1 and std > 0")
    return (t - mean) ** 2 / (2.0 * n * std * std)


def select_max_gain(candidates: Sequence[tuple[object, np.ndarray, DiagGaussian]],
                    eps: float = PRIORITY_EPS) -> int:
    """Index of the candidate whose action has the largest priority.

    ``candidates`` holds ``(state_id, action, conditional)`` triples.  Ties go
    to the lowest index.
    """
    if len(candidates) == 0:
        raise ValueError("no candidates")
    best, best_p = 0, -math.inf
    for i, (_, action, cond) in enumerate(candidates):
        p = priority(cond, action, eps)
        if p > best_p:
            best, best_p = i, p
    return best


def knn_entropy(points, k: int = 3) -> float:
    """Kozachenko-Leonenko differential entropy estimate in nats."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if k < 1 or n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points, got {n}")
    dist, _ = cKDTree(x).query(x, k=k + 1)
    rho = np.maximum(dist[:, k], KNN_DIST_FLOOR)
    log_unit_ball = 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)
    return float(d * np.mean(np.log(rho)) + log_unit_ball + digamma(n) - digamma(k))
