"""Seed-addressed Brownian and bilateral-Gamma noise.

Every random number is a pure function of ``(master_seed, repetition,
particle, channel, counter)``: a 64-bit key is derived once from the
address and each draw hashes ``(key, counter)``.  Streams at different
addresses can therefore be consumed in any order, by any number of
threads, and still produce identical values.

The draw primitives below are compiled with numba so that the stepping
kernel in :mod:`levy_mv.scheme` can call them inline; the Python-level
helpers (:func:`gamma_sample`, :func:`bilateral_gamma_increment`,
:func:`brownian_increment`) consume exactly the same sequences as the
kernel does for a given particle address.
"""

from dataclasses import dataclass
import math

import numba
import numpy as np

from .errors import InvalidInputError, UnsupportedError

BROWNIAN = 0
GAMMA_PLUS = 1
GAMMA_MINUS = 2
CHANNELS = (BROWNIAN, GAMMA_PLUS, GAMMA_MINUS)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_M53 = 2.0 ** -53
_TWO_PI = 2.0 * math.pi
_U64_MASK = (1 << 64) - 1


@numba.njit(inline="always", cache=True)
def _mix(z):
    # splitmix64 finalizer (a bijection on 64-bit words)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True)
def _derive_key(seed, repetition, particle, channel):
    seed, repetition = np.uint64(seed), np.uint64(repetition)
    particle, channel = np.uint64(particle), np.uint64(channel)
    k = _mix(seed + _GOLDEN)
    k = _mix(k ^ _mix(repetition + _M1))
    k = _mix(k ^ _mix(particle + _M2))
    k = _mix(k ^ _mix(channel + _GOLDEN + _GOLDEN))
    return k


@numba.njit(cache=True)
def _derive_keys(seed, repetition, n):
    seed, repetition = np.uint64(seed), np.uint64(repetition)
    keys = np.empty((n, 3), dtype=np.uint64)
    for i in range(n):
        for ch in range(3):
            keys[i, ch] = _derive_key(seed, repetition, np.uint64(i), np.uint64(ch))
    return keys


@numba.njit(inline="always", cache=True)
def _bits(key, ctr):
    z = _mix((ctr * _GOLDEN) ^ key)
    return _mix(z + key)


@numba.njit(inline="always", cache=True)
def _uniform(key, ctr):
    """Uniform on [0, 1)."""
    return (_bits(key, ctr) >> _S11) * _TWO_M53, ctr + _ONE


@numba.njit(inline="always", cache=True)
def _uniform_pos(key, ctr):
    """Uniform on (0, 1]."""
    return ((_bits(key, ctr) >> _S11) + _ONE) * _TWO_M53, ctr + _ONE


@numba.njit(inline="always", cache=True)
def _normal(key, ctr):
    # Box-Muller, cosine branch only: always exactly two counters per draw
    u1, ctr = _uniform_pos(key, ctr)
    u2, ctr = _uniform(key, ctr)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2), ctr


@numba.njit(cache=True)
def _gamma_mt(shape, key, ctr):
    # Marsaglia-Tsang squeeze/rejection, valid for shape >= 1
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x, ctr = _normal(key, ctr)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u, ctr = _uniform_pos(key, ctr)
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v, ctr
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v, ctr


@numba.njit(cache=True)
def _gamma_unit(shape, key, ctr):
    """Gamma(shape, 1) draw; small shapes via G(a) = G(a + 1) * U**(1/a)."""
    if shape >= 1.0:
        return _gamma_mt(shape, key, ctr)
    g, ctr = _gamma_mt(shape + 1.0, key, ctr)
    u, ctr = _uniform_pos(key, ctr)
    # log space: U**(1/a) underflows long before the product does
    return math.exp(math.log(g) + math.log(u) / shape), ctr


@numba.njit(cache=True)
def _gamma_batch(shape, rate, key, ctr, n):
    key, ctr = np.uint64(key), np.uint64(ctr)
    out = np.empty(n)
    for i in range(n):
        g, ctr = _gamma_unit(shape, key, ctr)
        out[i] = g / rate
    return out, ctr


@numba.njit(cache=True)
def _normal_batch(scale, key, ctr, n):
    key, ctr = np.uint64(key), np.uint64(ctr)
    out = np.empty(n)
    for i in range(n):
        z, ctr = _normal(key, ctr)
        out[i] = z * scale
    return out, ctr


@numba.njit(cache=True)
def _bilateral_batch(shape, rate, key_p, ctr_p, key_m, ctr_m, n):
    key_p, ctr_p = np.uint64(key_p), np.uint64(ctr_p)
    key_m, ctr_m = np.uint64(key_m), np.uint64(ctr_m)
    out = np.empty(n)
    for i in range(n):
        gp, ctr_p = _gamma_unit(shape, key_p, ctr_p)
        gm, ctr_m = _gamma_unit(shape, key_m, ctr_m)
        out[i] = gp / rate - gm / rate
    return out, ctr_p, ctr_m


@dataclass(frozen=True)
class BilateralGammaParams:
    """Bilateral Gamma process with Levy density ``shape * exp(-rate|z|) / |z|``
    on each half-line.

    ``shape`` is per unit time and ``rate`` is in inverse state units.
    """

    shape: float = 1.0
    rate: float = 5.0

    def __post_init__(self):
        if not (self.shape > 0 and math.isfinite(self.shape)):
            raise InvalidInputError(f"bilateral Gamma shape must be positive, got {self.shape}")
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise InvalidInputError(f"bilateral Gamma rate must be positive, got {self.rate}")

    @classmethod
    def from_config(cls, shape, value, interpretation="rate"):
        """Build from a ``(shape, value)`` pair where ``value`` is either the
        rate or the scale (``1 / rate``) according to ``interpretation``."""
        if interpretation == "rate":
            return cls(shape=float(shape), rate=float(value))
        if interpretation == "scale":
            if not value > 0:
                raise InvalidInputError(f"scale must be positive, got {value}")
            return cls(shape=float(shape), rate=1.0 / float(value))
        raise InvalidInputError(
            f"interpretation must be 'rate' or 'scale', got {interpretation!r}")

    def increment_variance(self, dt):
        return 2.0 * self.shape * dt / self.rate ** 2


class NoiseStream:
    """Deterministic noise source addressed by ``(master_seed, repetition, particle)``.

    Each of the three channels (Brownian, positive and negative Gamma legs)
    keeps its own counter.  The simulation kernels only use the seed and
    repetition of a stream: they derive fresh keys for particles
    ``0..N-1`` and start every counter at zero, so a stream built for
    particle ``i`` replays what the kernel draws for that particle.
    """

    def __init__(self, master_seed, repetition=0, particle=0):
        for name, value in (("master_seed", master_seed), ("repetition", repetition),
                            ("particle", particle)):
            if int(value) != value or value < 0:
                raise InvalidInputError(f"{name} must be a nonnegative integer, got {value!r}")
        self.master_seed = int(master_seed) & _U64_MASK
        self.repetition = int(repetition) & _U64_MASK
        self.particle = int(particle) & _U64_MASK
        self._keys = [
            np.uint64(_derive_key(np.uint64(self.master_seed), np.uint64(self.repetition),
                                  np.uint64(self.particle), np.uint64(ch)))
            for ch in CHANNELS
        ]
        self._counters = [np.uint64(0)] * 3

    def __repr__(self):
        return (f"NoiseStream(master_seed={self.master_seed}, "
                f"repetition={self.repetition}, particle={self.particle})")

    def key(self, channel):
        return self._keys[channel]

    def _advance(self, channel, ctr):
        self._counters[channel] = np.uint64(ctr)

    def counter(self, channel):
        return int(self._counters[channel])

    def for_particle(self, particle):
        return NoiseStream(self.master_seed, self.repetition, particle)

    def for_repetition(self, repetition):
        return NoiseStream(self.master_seed, repetition, self.particle)

    def particle_keys(self, n_particles):
        """``(n_particles, 3)`` array of channel keys for this repetition."""
        return _derive_keys(np.uint64(self.master_seed), np.uint64(self.repetition),
                            int(n_particles))

    def _normals(self, scale, n):
        out, ctr = _normal_batch(
            float(scale), self._keys[BROWNIAN], self._counters[BROWNIAN], n)
        self._advance(BROWNIAN, ctr)
        return out

    def _gammas(self, shape, rate, n, channel):
        out, ctr = _gamma_batch(
            float(shape), float(rate), self._keys[channel], self._counters[channel], n)
        self._advance(channel, ctr)
        return out

    def _bilateral(self, shape, rate, n):
        out, ctr_p, ctr_m = _bilateral_batch(
            float(shape), float(rate),
            self._keys[GAMMA_PLUS], self._counters[GAMMA_PLUS],
            self._keys[GAMMA_MINUS], self._counters[GAMMA_MINUS], n)
        self._advance(GAMMA_PLUS, ctr_p)
        self._advance(GAMMA_MINUS, ctr_m)
        return out


def _check_positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise InvalidInputError(f"{name} must be positive and finite, got {value}")


def gamma_sample(shape, rate, stream, size=None, channel=GAMMA_PLUS):
    """Draw from Gamma(shape, rate) (mean ``shape / rate``).

    Valid for arbitrarily small ``shape``.  Returns a float, or an array
    when ``size`` is given.
    """
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    out = stream._gammas(shape, rate, 1 if size is None else int(size), channel)
    return float(out[0]) if size is None else out


def bilateral_gamma_increment(dt, params, stream, size=None):
    """Increment ``G+ - G-`` of the bilateral Gamma process over a span ``dt``.

    ``G+`` and ``G-`` are independent Gamma(shape * dt, rate) draws taken
    from the stream's two Gamma channels.
    """
    _check_positive("dt", dt)
    out = stream._bilateral(params.shape * dt, params.rate, 1 if size is None else int(size))
    return float(out[0]) if size is None else out


def brownian_increment(dt, d, stream, size=None):
    """``d`` independent N(0, dt) draws; shape ``(d,)`` or ``(size, d)``."""
    _check_positive("dt", dt)
    if int(d) != d or d < 1:
        raise InvalidInputError(f"dimension must be a positive integer, got {d}")
    d = int(d)
    n = 1 if size is None else int(size)
    out = stream._normals(math.sqrt(dt), n * d).reshape(n, d)
    return out[0] if size is None else out


def levy_measure_moment(params, p):
    """``integral |z|**p nu(dz) = 2 * shape * Gamma(p) / rate**p``.

    Only ``p >= 1`` is supported; below that the small-jump integral the
    scheme relies on is not part of the contract.
    """
    if not p >= 1:
        raise UnsupportedError(f"Levy measure moments are supported for p >= 1, got {p}")
    return 2.0 * params.shape * math.gamma(p) / params.rate ** p
