"""McKean-Vlasov coefficient models and particle ensembles.

A model is three coefficient functions of a particle state and of the
ensemble's measure statistics (mean vector and second raw moment).  Each
function has the in-place signature::

    f(x, mean, m2, out) -> None

with ``x`` and ``mean`` of shape ``(d,)``, ``m2`` a float and ``out`` of
shape ``(d,)`` for the drift and ``(d, d)`` for the diffusion and jump
coefficients.  Functions are compiled with :func:`numba.njit` (plain
Python functions are compiled on construction) so the stepping kernel can
call them without leaving machine code.
"""

from dataclasses import dataclass, field
from typing import Callable
import math

import numba
import numpy as np

from .errors import InvalidInputError, NumericOverflowError

__all__ = [
    "MeasureStats",
    "McKeanVlasovModel",
    "ParticleEnsemble",
    "ensemble_stats",
    "eval_coefficients",
    "builtin_paper_model",
    "zero_model",
    "ornstein_uhlenbeck_model",
    "get_model",
    "MODEL_REGISTRY",
]


def _as_dispatcher(fn):
    if isinstance(fn, numba.core.registry.CPUDispatcher):
        return fn
    if not callable(fn):
        raise InvalidInputError(f"coefficient must be callable, got {fn!r}")
    return numba.njit(fn)


@dataclass(frozen=True)
class MeasureStats:
    """Mean and second raw moment of an empirical measure over ``n`` points."""

    mean: np.ndarray
    second_raw_moment: float
    n: int

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "mean", mean)
        if self.n < 1:
            raise InvalidInputError("measure statistics need n >= 1")
        if not (np.all(np.isfinite(mean)) and math.isfinite(self.second_raw_moment)):
            raise InvalidInputError("measure statistics must be finite")
        if self.second_raw_moment < 0:
            raise InvalidInputError("second raw moment must be nonnegative")

    @property
    def w2_to_dirac0(self):
        return math.sqrt(self.second_raw_moment)


@dataclass(frozen=True)
class McKeanVlasovModel:
    """Coefficient triple of a Levy-driven McKean-Vlasov SDE.

    Parameters
    ----------
    dimension : int
        State dimension ``d``.
    drift, diffusion, jump : callable
        In-place coefficient functions (see module docstring).
    ell : float
        Growth exponent of the drift, used by the step-size rule.
    p0 : int
        Even integer >= 2; exponent applied to the jump coefficient in the
        step-size rule.
    name : str
        Label used in manifests.

    The functions must be total and deterministic on finite inputs.  The
    analytic growth and monotonicity conditions behind the scheme are the
    caller's responsibility; :mod:`levy_mv.invariants` probes the ones that
    can be checked numerically.
    """

    dimension: int
    drift: Callable
    diffusion: Callable
    jump: Callable
    ell: float
    p0: int
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise InvalidInputError(f"dimension must be a positive integer, got {self.dimension}")
        if not (self.ell >= 0 and math.isfinite(self.ell)):
            raise InvalidInputError(f"ell must be >= 0, got {self.ell}")
        if int(self.p0) != self.p0 or self.p0 < 2 or int(self.p0) % 2:
            raise InvalidInputError(f"p0 must be an even integer >= 2, got {self.p0}")
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "p0", int(self.p0))
        object.__setattr__(self, "ell", float(self.ell))
        for name in ("drift", "diffusion", "jump"):
            object.__setattr__(self, name, _as_dispatcher(getattr(self, name)))


@dataclass
class ParticleEnsemble:
    """``N`` particle states in ``d`` dimensions at a common time."""

    states: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] < 1 or states.shape[1] < 1:
            raise InvalidInputError(f"ensemble states must be a nonempty (N, d) array, "
                                    f"got shape {states.shape}")
        if not np.all(np.isfinite(states)):
            raise InvalidInputError("ensemble states must be finite")
        if not (self.time >= 0 and math.isfinite(self.time)):
            raise InvalidInputError(f"ensemble time must be finite and >= 0, got {self.time}")
        self.states = states
        self.time = float(self.time)

    @classmethod
    def constant(cls, x0, n_particles, time=0.0):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if int(n_particles) != n_particles or n_particles < 1:
            raise InvalidInputError(f"n_particles must be a positive integer, got {n_particles}")
        return cls(np.tile(x0, (int(n_particles), 1)), time)

    @property
    def n_particles(self):
        return self.states.shape[0]

    @property
    def dimension(self):
        return self.states.shape[1]


def ensemble_stats(ensemble):
    """Mean and second raw moment ``(1/N) sum |x_i|**2`` of the ensemble."""
    states = ensemble.states if isinstance(ensemble, ParticleEnsemble) else np.asarray(ensemble, float)
    if states.ndim == 1:
        states = states[:, None]
    if states.size == 0:
        raise InvalidInputError("empty ensemble")
    if not np.all(np.isfinite(states)):
        raise InvalidInputError("ensemble states must be finite")
    n = states.shape[0]
    mean = states.sum(axis=0) / n
    m2 = float(np.einsum("ij,ij->", states, states) / n)
    return MeasureStats(mean=mean, second_raw_moment=m2, n=n)


def eval_coefficients(model, x, stats):
    """Evaluate ``(b, sigma, c)`` at state ``x`` under measure statistics ``stats``.

    Raises :class:`NumericOverflowError` naming the first coefficient whose
    value is not finite.
    """
    d = model.dimension
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise InvalidInputError(f"state must have shape ({d},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("state must be finite")
    mean = np.atleast_1d(np.asarray(stats.mean, dtype=float))
    m2 = float(stats.second_raw_moment)
    b = np.zeros(d)
    sigma = np.zeros((d, d))
    c = np.zeros((d, d))
    model.drift(x, mean, m2, b)
    model.diffusion(x, mean, m2, sigma)
    model.jump(x, mean, m2, c)
    for name, value in (("drift", b), ("diffusion", sigma), ("jump", c)):
        if not np.all(np.isfinite(value)):
            raise NumericOverflowError("non-finite coefficient value", coefficient=name)
    return b, sigma, c


# -- builtin models ---------------------------------------------------------

@numba.njit(cache=True)
def _ptvd_drift(x, mean, m2, out):
    xv = x[0]
    out[0] = -1.0 - 3.0 * (xv + mean[0]) - xv * abs(xv) ** 0.3


@numba.njit(cache=True)
def _ptvd_diffusion(x, mean, m2, out):
    out[0, 0] = 0.2 * (1.0 + abs(x[0]) ** 1.1 + mean[0])


@numba.njit(cache=True)
def _ptvd_jump(x, mean, m2, out):
    out[0, 0] = 0.2 * (x[0] + mean[0])


def builtin_paper_model():
    """The one-dimensional benchmark with superlinear drift and diffusion.

    ``b(x, m) = -1 - 3(x + m) - x|x|**0.3``,
    ``sigma(x, m) = 0.2(1 + |x|**1.1 + m)``, ``c(x, m) = 0.2(x + m)``
    where ``m`` is the ensemble mean; ``ell = 0.3`` and ``p0 = 8``.
    """
    return McKeanVlasovModel(
        dimension=1, drift=_ptvd_drift, diffusion=_ptvd_diffusion, jump=_ptvd_jump,
        ell=0.3, p0=8, name="paper-ptvd",
    )


@numba.njit(cache=True)
def _zero_vector(x, mean, m2, out):
    out[:] = 0.0


@numba.njit(cache=True)
def _zero_matrix(x, mean, m2, out):
    out[:, :] = 0.0


def zero_model(dimension=1, ell=1.0, p0=2):
    """All coefficients identically zero; particles never move.

    With ``ell > 0`` the step rule gives exactly ``h0`` at the origin.
    """
    return McKeanVlasovModel(
        dimension=dimension, drift=_zero_vector, diffusion=_zero_matrix, jump=_zero_matrix,
        ell=ell, p0=p0, name="zero", params={"dimension": dimension},
    )


def ornstein_uhlenbeck_model(theta=1.0, sigma=1.0, jump=0.0, dimension=1, ell=0.0, p0=2):
    """``dX = -theta X dt + sigma dW + jump dZ`` with isotropic constant noise.

    With ``sigma = jump = 0`` this is the linear ODE ``x' = -theta x``.
    """
    theta, sigma, jump = float(theta), float(sigma), float(jump)

    @numba.njit
    def drift(x, mean, m2, out):
        for j in range(x.shape[0]):
            out[j] = -theta * x[j]

    @numba.njit
    def diffusion(x, mean, m2, out):
        out[:, :] = 0.0
        for j in range(x.shape[0]):
            out[j, j] = sigma

    @numba.njit
    def jump_coeff(x, mean, m2, out):
        out[:, :] = 0.0
        for j in range(x.shape[0]):
            out[j, j] = jump

    return McKeanVlasovModel(
        dimension=dimension, drift=drift, diffusion=diffusion, jump=jump_coeff,
        ell=ell, p0=p0, name="ornstein-uhlenbeck",
        params={"theta": theta, "sigma": sigma, "jump": jump, "dimension": dimension},
    )


MODEL_REGISTRY = {
    "paper-ptvd": builtin_paper_model,
    "zero": zero_model,
    "ornstein-uhlenbeck": ornstein_uhlenbeck_model,
}


def get_model(name, **params):
    """Instantiate a builtin model by name."""
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown model {name!r}; choose from {sorted(MODEL_REGISTRY)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise InvalidInputError(f"bad parameters for model {name!r}: {exc}") from None
