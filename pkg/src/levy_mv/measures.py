"""Wasserstein utilities, moment estimators and convergence-rate fitting."""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .model import ParticleEnsemble

__all__ = [
    "LevelErrorPoint",
    "RateFit",
    "w2_to_dirac0",
    "w2_coupling_bound",
    "w2_exact_1d",
    "w2_empirical_1d",
    "estimate_moment",
    "mse_levels",
    "merge_level_points",
    "fit_rate",
]


def _states(e):
    arr = e.states if isinstance(e, ParticleEnsemble) else np.asarray(e, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.size == 0:
        raise InvalidInputError("empty ensemble")
    return arr


def w2_to_dirac0(ensemble):
    """Exact W2 distance between the empirical measure and the point mass at 0."""
    x = _states(ensemble)
    return math.sqrt(float(np.einsum("ij,ij->", x, x)) / x.shape[0])


def w2_coupling_bound(e1, e2):
    """``sqrt(mean_i |x_i - y_i|**2)``: W2 upper bound under index pairing."""
    x, y = _states(e1), _states(e2)
    if x.shape != y.shape:
        raise InvalidInputError(f"ensembles differ in shape: {x.shape} vs {y.shape}")
    diff = x - y
    return math.sqrt(float(np.einsum("ij,ij->", diff, diff)) / x.shape[0])


def _sample_1d(s):
    arr = np.asarray(s, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise InvalidInputError("one-dimensional samples expected")
    if arr.size == 0:
        raise InvalidInputError("empty sample")
    return arr


def w2_exact_1d(samples1, samples2):
    """Exact W2 between two equal-size 1-D empirical measures (sorted pairing)."""
    x, y = _sample_1d(samples1), _sample_1d(samples2)
    if x.size != y.size:
        raise InvalidInputError(f"sample sizes differ: {x.size} vs {y.size}")
    diff = np.sort(x) - np.sort(y)
    return math.sqrt(float(diff @ diff) / x.size)


def w2_empirical_1d(samples1, samples2):
    """Exact W2 between 1-D empirical measures of possibly different sizes.

    Integrates the squared difference of the two quantile functions, which
    are piecewise constant between the merged breakpoints ``k/n``.
    Coincides with :func:`w2_exact_1d` when sizes match.
    """
    x, y = np.sort(_sample_1d(samples1)), np.sort(_sample_1d(samples2))
    if x.size == y.size:
        return w2_exact_1d(x, y)
    n, m = x.size, y.size
    # breakpoints of both quantile functions on [0, 1], as exact fractions k*m/(n*m)
    cuts = np.union1d(np.arange(1, n + 1) * m, np.arange(1, m + 1) * n)
    widths = np.diff(np.concatenate(([0], cuts))) / (n * m)
    lower = np.concatenate(([0], cuts[:-1]))
    ix = lower // m
    iy = lower // n
    diff = x[ix] - y[iy]
    return math.sqrt(float(np.sum(widths * diff * diff)))


def estimate_moment(ensembles, p):
    """Monte Carlo mean of ``|x|**p`` over all particles of all ensembles."""
    if not p > 0:
        raise InvalidInputError(f"p must be positive, got {p}")
    if isinstance(ensembles, (ParticleEnsemble, np.ndarray)):
        ensembles = [ensembles]
    blocks = [_states(e) for e in ensembles]
    if not blocks:
        raise InvalidInputError("no ensembles given")
    total = 0.0
    count = 0
    for x in blocks:
        norms = np.sqrt(np.einsum("ij,ij->i", x, x))
        total += float(np.sum(norms ** p))
        count += x.shape[0]
    return total / count


@dataclass(frozen=True)
class LevelErrorPoint:
    """Mean squared difference between coupled levels ``level`` and ``level + 1``.

    ``n_samples`` counts the coupled particle pairs behind ``mse``.
    """

    level: int
    mse: float
    m_repetitions: int = 1
    n_samples: int = 1

    def __post_init__(self):
        if not self.mse >= 0:
            raise InvalidInputError(f"mse must be nonnegative, got {self.mse}")
        if self.m_repetitions < 1:
            raise InvalidInputError("m_repetitions must be >= 1")


def mse_levels(fine_values, coarse_values, level=1, m_repetitions=1):
    """Mean of ``|fine - coarse|**2`` over paired terminal samples."""
    f = np.asarray(fine_values, dtype=float)
    c = np.asarray(coarse_values, dtype=float)
    if f.shape != c.shape:
        raise InvalidInputError(f"sample shapes differ: {f.shape} vs {c.shape}")
    if f.size == 0:
        raise InvalidInputError("no samples")
    if f.ndim == 1:
        f, c = f[:, None], c[:, None]
    f = f.reshape(-1, f.shape[-1])
    c = c.reshape(-1, c.shape[-1])
    diff = f - c
    mse = float(np.einsum("ij,ij->", diff, diff)) / f.shape[0]
    return LevelErrorPoint(level=level, mse=mse, m_repetitions=m_repetitions,
                           n_samples=f.shape[0])


def merge_level_points(points):
    """Sample-weighted merge of MSE points for the same level."""
    points = list(points)
    if not points:
        raise InvalidInputError("nothing to merge")
    levels = {p.level for p in points}
    if len(levels) != 1:
        raise InvalidInputError(f"cannot merge points from levels {sorted(levels)}")
    n = sum(p.n_samples for p in points)
    mse = sum(p.mse * p.n_samples for p in points) / n
    return LevelErrorPoint(level=points[0].level, mse=mse,
                           m_repetitions=sum(p.m_repetitions for p in points), n_samples=n)


@dataclass(frozen=True)
class RateFit:
    """OLS fit of ``log2(mse) = -2 beta level + C``."""

    beta: float
    intercept: float
    points: tuple = field(default_factory=tuple)
    residual_norm: float = 0.0

    @property
    def slope(self):
        return -2.0 * self.beta

    def predict_log2_mse(self, level):
        return self.intercept + self.slope * np.asarray(level, dtype=float)


def fit_rate(points):
    """Estimate the strong rate ``beta`` from per-level MSEs.

    ``points`` is a sequence of :class:`LevelErrorPoint` or of
    ``(level, mse)`` pairs.  Raises :class:`DegenerateInputError` when an
    MSE is zero (its logarithm is undefined).
    """
    pts = tuple(p if isinstance(p, LevelErrorPoint) else LevelErrorPoint(int(p[0]), float(p[1]))
                for p in points)
    if len(pts) < 2:
        raise InvalidInputError("need at least two levels to fit a rate")
    levels = np.array([p.level for p in pts], dtype=float)
    if np.unique(levels).size < 2:
        raise InvalidInputError("need at least two distinct levels to fit a rate")
    mse = np.array([p.mse for p in pts], dtype=float)
    if np.any(mse <= 0) or not np.all(np.isfinite(mse)):
        bad = [p.level for p in pts if not (p.mse > 0 and math.isfinite(p.mse))]
        raise DegenerateInputError(f"MSE is zero or non-finite at level(s) {bad}")
    y = np.log2(mse)
    A = np.column_stack([levels, np.ones_like(levels)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * levels + intercept)
    return RateFit(beta=-slope / 2.0, intercept=float(intercept), points=pts,
                   residual_norm=float(np.sqrt(np.mean(resid ** 2))))
