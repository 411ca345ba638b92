"""Tamed-adaptive Euler-Maruyama stepping for interacting particle systems.

All particles share one clock.  At each grid point ``t_k`` the ensemble's
mean and second raw moment are frozen, every particle's coefficients are
evaluated, and the next grid point is ``t_k + delta * min_i h(x_i, mu)``
with::

    h(x, mu) = h0 / ((1 + |b| + |sigma| + |x|**ell)**2 + |c|**p0)

The diffusion and jump coefficients are tamed by scalar shrink factors::

    sigma_delta = sigma / (1 + sqrt(delta) |sigma| (1 + |x|))
    c_delta     = c / (1 + sqrt(delta) |c| (1 + |x| + |b|))

(``|.|`` is the Euclidean norm for vectors and the Frobenius norm for
matrices).  A step that would cross the terminal time, or an observation
time, is evaluated with the continuous interpolation: coefficients frozen
at the last grid point and noise increments taken over the partial span.

One compiled kernel serves both the single-level driver and the two-level
coupled driver.  It advances a global clock to the nearest pending
boundary among all levels and observation times, draws one set of
increments per particle over that sub-interval, and adds them to every
level's accumulator; a level applies its update once the clock reaches its
own boundary.
"""

from dataclasses import dataclass
import math

import numba
import numpy as np

from .errors import InvalidInputError, NumericOverflowError
from .model import ParticleEnsemble, ensemble_stats, eval_coefficients
from .noise import BilateralGammaParams, _gamma_unit, _normal

__all__ = [
    "SchemeConfig",
    "StepLog",
    "local_step_size",
    "ensemble_step_size",
    "tame_diffusion",
    "tame_jump",
    "advance_to",
    "advance_coupled",
    "simulate",
    "SimulationResult",
]

# relative gap below which a grid point is snapped onto the terminal time
_SNAP_RTOL = 1e-12

_OK = 0
_BAD_DRIFT = 1
_BAD_DIFFUSION = 2
_BAD_JUMP = 3
_BAD_STATE = 4
_STEP_UNDERFLOW = 5
_TOO_MANY_STEPS = 6

_STATUS_COEFFICIENT = {_BAD_DRIFT: "drift", _BAD_DIFFUSION: "diffusion", _BAD_JUMP: "jump"}


@dataclass(frozen=True)
class SchemeConfig:
    """Discretisation settings for one level.

    ``delta`` is the step-size scale in (0, 1), ``h0`` the numerator of the
    local step rule, ``terminal_time`` the horizon ``T`` and
    ``n_particles`` the ensemble size ``N``.
    """

    delta: float
    terminal_time: float
    n_particles: int
    h0: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")
        if not (self.h0 > 0 and math.isfinite(self.h0)):
            raise InvalidInputError(f"h0 must be positive, got {self.h0}")
        if not (self.terminal_time > 0 and math.isfinite(self.terminal_time)):
            raise InvalidInputError(f"terminal time must be positive, got {self.terminal_time}")
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise InvalidInputError(f"n_particles must be a positive integer, got {self.n_particles}")
        object.__setattr__(self, "n_particles", int(self.n_particles))

    @classmethod
    def for_level(cls, level, terminal_time, n_particles, h0=1.0):
        """Config with ``delta = 2**-level``."""
        return cls(delta=2.0 ** -level, terminal_time=terminal_time,
                   n_particles=n_particles, h0=h0)


@dataclass(frozen=True)
class StepLog:
    """Grid points ``0 = t_0 < t_1 < ... = T`` of one simulated path.

    ``sq_increment_sum`` accumulates ``|X_{t_{k+1}} - X_{t_k}|**2`` over all
    steps and particles.
    """

    step_times: np.ndarray
    sq_increment_sum: float = 0.0
    n_particles: int = 1

    @property
    def step_count(self):
        return len(self.step_times) - 1

    @property
    def mean_sq_increment(self):
        """Mean squared one-step displacement per particle."""
        return self.sq_increment_sum / (self.step_count * self.n_particles)

    @property
    def gaps(self):
        return np.diff(self.step_times)


@dataclass
class SimulationResult:
    ensemble: ParticleEnsemble
    step_log: StepLog
    observation_times: np.ndarray
    snapshots: np.ndarray  # (n_obs, N, d)


# -- scalar helpers, mirrored by the kernel ----------------------------------

def local_step_size(model, x, stats, h0=1.0):
    """Adaptive step ``h(x, mu)`` for one particle; always in ``(0, h0]``."""
    b, sigma, c = eval_coefficients(model, x, stats)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    denom = ((1.0 + np.linalg.norm(b) + np.linalg.norm(sigma)
              + np.linalg.norm(x) ** model.ell) ** 2
             + np.linalg.norm(c) ** model.p0)
    h = h0 / denom
    if not (math.isfinite(h) and h > 0):
        raise NumericOverflowError("step size underflow", coefficient="step")
    return h


def ensemble_step_size(model, ensemble, config):
    """``delta * min_i h(x_i, mu)`` with ``mu`` the ensemble's empirical law."""
    stats = ensemble_stats(ensemble)
    states = ensemble.states if isinstance(ensemble, ParticleEnsemble) else np.asarray(ensemble)
    h_min = min(local_step_size(model, x, stats, config.h0) for x in np.atleast_2d(states))
    return config.delta * h_min


def tame_diffusion(sigma, x, delta):
    """Shrink ``sigma`` by ``1 + sqrt(delta) |sigma| (1 + |x|)``."""
    if not 0 < delta < 1:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    sigma = np.asarray(sigma, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    scale = 1.0 + math.sqrt(delta) * np.linalg.norm(sigma) * (1.0 + np.linalg.norm(x))
    return sigma / scale


def tame_jump(c, x, b, delta):
    """Shrink ``c`` by ``1 + sqrt(delta) |c| (1 + |x| + |b|)``."""
    if not 0 < delta < 1:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    c = np.asarray(c, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    scale = 1.0 + math.sqrt(delta) * np.linalg.norm(c) * (
        1.0 + np.linalg.norm(x) + np.linalg.norm(b))
    return c / scale


# -- compiled kernel ---------------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _prepare_level(drift, diffusion, jump, ell, p0, h0, delta, X, B, S, C, bbuf, sbuf, cbuf,
                   mean):
    """Freeze stats and tamed coefficients; return (status, particle, delta * h_min)."""
    N, d = X.shape
    m2 = 0.0
    mean[:] = 0.0
    for i in range(N):
        for j in range(d):
            mean[j] += X[i, j]
            m2 += X[i, j] * X[i, j]
    for j in range(d):
        mean[j] /= N
    m2 /= N
    sq_delta = math.sqrt(delta)
    h_min = np.inf
    for i in range(N):
        x = X[i]
        drift(x, mean, m2, bbuf)
        diffusion(x, mean, m2, sbuf)
        jump(x, mean, m2, cbuf)
        nb = 0.0
        nx = 0.0
        ns = 0.0
        nc = 0.0
        for j in range(d):
            nb += bbuf[j] * bbuf[j]
            nx += x[j] * x[j]
            for m in range(d):
                ns += sbuf[j, m] * sbuf[j, m]
                nc += cbuf[j, m] * cbuf[j, m]
        if not math.isfinite(nb):
            return _BAD_DRIFT, i, 0.0
        if not math.isfinite(ns):
            return _BAD_DIFFUSION, i, 0.0
        if not math.isfinite(nc):
            return _BAD_JUMP, i, 0.0
        nb = math.sqrt(nb)
        nx = math.sqrt(nx)
        ns = math.sqrt(ns)
        nc = math.sqrt(nc)
        base = 1.0 + nb + ns + nx ** ell
        h = h0 / (base * base + nc ** p0)
        if h < h_min:
            h_min = h
        s_scale = 1.0 / (1.0 + sq_delta * ns * (1.0 + nx))
        c_scale = 1.0 / (1.0 + sq_delta * nc * (1.0 + nx + nb))
        for j in range(d):
            B[i, j] = bbuf[j]
            for m in range(d):
                S[i, j, m] = sbuf[j, m] * s_scale
                C[i, j, m] = cbuf[j, m] * c_scale
    return _OK, -1, delta * h_min


@numba.njit(inline="always", cache=True)
def _increment(X, B, S, C, dW, dZ, i, j, h):
    d = X.shape[1]
    acc = B[i, j] * h
    for m in range(d):
        acc += S[i, j, m] * dW[i, m] + C[i, j, m] * dZ[i, m]
    return X[i, j] + acc


@numba.njit(nogil=True, cache=True)
def _run_kernel(drift, diffusion, jump, ell, p0, h0, deltas, T, X, keys, alpha, lam,
                obs, snaps, max_steps):
    """Advance ``L`` coupled levels of an ``N``-particle system from 0 to ``T``.

    ``X`` has shape (L, N, d) and is updated in place.  Returns
    ``(step_counts, step_times, sq_increment_sums, consumed_time, status)``
    where ``status`` is ``[code, level, step, particle]``.
    """
    L, N, d = X.shape
    B = np.zeros((L, N, d))
    S = np.zeros((L, N, d, d))
    C = np.zeros((L, N, d, d))
    dW = np.zeros((L, N, d))
    dZ = np.zeros((L, N, d))
    bbuf = np.zeros(d)
    sbuf = np.zeros((d, d))
    cbuf = np.zeros((d, d))
    mean = np.zeros(d)
    ctr = np.zeros((N, 3), dtype=np.uint64)
    t_left = np.zeros(L)
    t_right = np.zeros(L)
    done = np.zeros(L, dtype=np.bool_)
    steps = np.zeros(L, dtype=np.int64)
    sq_sum = np.zeros(L)
    cap = 1024
    times = np.zeros((L, cap))
    status = np.zeros(4, dtype=np.int64)
    status[1] = -1
    status[3] = -1
    snap_tol = _SNAP_RTOL * T

    for lv in range(L):
        code, who, dt = _prepare_level(drift, diffusion, jump, ell, p0, h0, deltas[lv], X[lv],
                                       B[lv], S[lv], C[lv], bbuf, sbuf, cbuf, mean)
        if code != _OK:
            status[0] = code
            status[1] = lv
            status[3] = who
            return steps, times, sq_sum, 0.0, status
        nxt = dt
        if nxt >= T or T - nxt <= snap_tol:
            nxt = T
        if not nxt > 0.0:
            status[0] = _STEP_UNDERFLOW
            status[1] = lv
            return steps, times, sq_sum, 0.0, status
        t_right[lv] = nxt

    t = 0.0
    consumed = 0.0
    k = 0
    n_obs = obs.shape[0]
    while True:
        nxt = T
        for lv in range(L):
            if not done[lv] and t_right[lv] < nxt:
                nxt = t_right[lv]
        if k < n_obs and obs[k] < nxt:
            nxt = obs[k]
        dt = nxt - t
        if dt > 0.0:
            sq = math.sqrt(dt)
            shape = alpha * dt
            for i in range(N):
                kb = keys[i, 0]
                kp = keys[i, 1]
                km = keys[i, 2]
                cb = ctr[i, 0]
                cp = ctr[i, 1]
                cm = ctr[i, 2]
                for j in range(d):
                    z, cb = _normal(kb, cb)
                    w = z * sq
                    jz = 0.0
                    if alpha > 0.0:
                        gp, cp = _gamma_unit(shape, kp, cp)
                        gm, cm = _gamma_unit(shape, km, cm)
                        jz = gp / lam - gm / lam
                    for lv in range(L):
                        dW[lv, i, j] += w
                        dZ[lv, i, j] += jz
                ctr[i, 0] = cb
                ctr[i, 1] = cp
                ctr[i, 2] = cm
            consumed += dt
        t = nxt

        while k < n_obs and obs[k] <= t:
            for lv in range(L):
                h = t - t_left[lv]
                for i in range(N):
                    for j in range(d):
                        snaps[k, lv, i, j] = _increment(X[lv], B[lv], S[lv], C[lv], dW[lv],
                                                        dZ[lv], i, j, h)
            k += 1

        all_done = True
        for lv in range(L):
            if done[lv]:
                continue
            if t_right[lv] == t:
                h = t - t_left[lv]
                Xl = X[lv]
                for i in range(N):
                    for j in range(d):
                        v = _increment(Xl, B[lv], S[lv], C[lv], dW[lv], dZ[lv], i, j, h)
                        if not math.isfinite(v):
                            status[0] = _BAD_STATE
                            status[1] = lv
                            status[2] = steps[lv] + 1
                            status[3] = i
                            return steps, times, sq_sum, consumed, status
                        jump_ij = v - Xl[i, j]
                        sq_sum[lv] += jump_ij * jump_ij
                        Xl[i, j] = v
                dW[lv, :, :] = 0.0
                dZ[lv, :, :] = 0.0
                steps[lv] += 1
                if steps[lv] >= cap:
                    grown = np.zeros((L, 2 * cap))
                    grown[:, :cap] = times
                    times = grown
                    cap *= 2
                times[lv, steps[lv]] = t
                t_left[lv] = t
                if t >= T:
                    done[lv] = True
                elif steps[lv] >= max_steps:
                    status[0] = _TOO_MANY_STEPS
                    status[1] = lv
                    status[2] = steps[lv]
                    return steps, times, sq_sum, consumed, status
                else:
                    code, who, dt_next = _prepare_level(
                        drift, diffusion, jump, ell, p0, h0, deltas[lv], Xl, B[lv], S[lv],
                        C[lv], bbuf, sbuf, cbuf, mean)
                    if code != _OK:
                        status[0] = code
                        status[1] = lv
                        status[2] = steps[lv]
                        status[3] = who
                        return steps, times, sq_sum, consumed, status
                    nxt = t + dt_next
                    if nxt >= T or T - nxt <= snap_tol:
                        nxt = T
                    if not nxt > t:
                        status[0] = _STEP_UNDERFLOW
                        status[1] = lv
                        status[2] = steps[lv]
                        return steps, times, sq_sum, consumed, status
                    t_right[lv] = nxt
            if not done[lv]:
                all_done = False
        if all_done:
            break
    return steps, times, sq_sum, consumed, status


def _raise_for_status(status, level_names):
    code, level, step, particle = (int(v) for v in status)
    if code == _OK:
        return
    level = level_names[level] if 0 <= level < len(level_names) else None
    step = step if step > 0 else None
    particle = particle if particle >= 0 else None
    if code in _STATUS_COEFFICIENT:
        raise NumericOverflowError("non-finite coefficient value",
                                   coefficient=_STATUS_COEFFICIENT[code], level=level,
                                   step=step, particle=particle)
    if code == _BAD_STATE:
        raise NumericOverflowError("particle state became non-finite", level=level,
                                   step=step, particle=particle)
    if code == _STEP_UNDERFLOW:
        raise NumericOverflowError("adaptive step size underflowed", level=level, step=step)
    raise NumericOverflowError("step budget exhausted before reaching the terminal time",
                               level=level, step=step)


def _initial_states(model, x0, n_particles):
    d = model.dimension
    if isinstance(x0, ParticleEnsemble):
        if x0.time != 0:
            raise InvalidInputError(f"ensemble must start at time 0, got {x0.time}")
        states = x0.states
    else:
        arr = np.asarray(x0, dtype=float)
        if arr.ndim <= 1 and arr.size == d:
            states = np.tile(arr.reshape(1, d), (n_particles, 1))
        else:
            states = ParticleEnsemble(arr).states
    if states.shape != (n_particles, d):
        raise InvalidInputError(
            f"initial states must have shape ({n_particles}, {d}), got {states.shape}")
    if not np.all(np.isfinite(states)):
        raise InvalidInputError("initial states must be finite")
    return np.array(states, dtype=float)


def _run(model, states_by_level, deltas, h0, T, stream, jumps, observation_times, max_steps):
    X = np.ascontiguousarray(states_by_level, dtype=float)
    L, N, d = X.shape
    keys = stream.particle_keys(N)
    if jumps is None:
        alpha, lam = 0.0, 1.0
    else:
        alpha, lam = float(jumps.shape), float(jumps.rate)
    obs = np.asarray([] if observation_times is None else observation_times, dtype=float)
    obs = np.ascontiguousarray(obs.ravel())
    if obs.size and (np.any(np.diff(obs) <= 0) or obs[0] < 0 or obs[-1] > T):
        raise InvalidInputError("observation times must be strictly increasing within [0, T]")
    snaps = np.zeros((obs.size, L, N, d))
    steps, times, sq_sum, consumed, status = _run_kernel(
        model.drift, model.diffusion, model.jump, float(model.ell), int(model.p0), float(h0),
        np.asarray(deltas, dtype=float), float(T), X, keys, alpha, lam, obs, snaps,
        int(max_steps))
    logs = [StepLog(times[lv, : steps[lv] + 1].copy(), float(sq_sum[lv]), N) for lv in range(L)]
    return X, logs, consumed, status, obs, snaps


DEFAULT_MAX_STEPS = 50_000_000


def simulate(model, x0, config, stream, jumps=BilateralGammaParams(), observation_times=None,
             max_steps=DEFAULT_MAX_STEPS):
    """Single-level run returning the terminal ensemble, its step log and
    interpolated snapshots at ``observation_times``."""
    states = _initial_states(model, x0, config.n_particles)
    X, logs, _, status, obs, snaps = _run(
        model, states[None], [config.delta], config.h0, config.terminal_time, stream, jumps,
        observation_times, max_steps)
    _raise_for_status(status, ("single",))
    return SimulationResult(
        ensemble=ParticleEnsemble(X[0], config.terminal_time),
        step_log=logs[0],
        observation_times=obs,
        snapshots=snaps[:, 0],
    )


def advance_to(model, ensemble, config, stream, jumps=BilateralGammaParams(),
               max_steps=DEFAULT_MAX_STEPS):
    """Advance ``ensemble`` from time 0 to ``config.terminal_time``.

    ``stream`` supplies the master seed and repetition address; particle
    ``i`` draws from address ``(repetition, i)``.  ``jumps=None`` switches
    the Levy driver off.  Returns ``(ParticleEnsemble, StepLog)``.
    """
    result = simulate(model, ensemble, config, stream, jumps=jumps, max_steps=max_steps)
    return result.ensemble, result.step_log


def advance_coupled(model, config_fine, config_coarse, x0, stream, jumps=BilateralGammaParams(),
                    return_logs=False, max_steps=DEFAULT_MAX_STEPS):
    """Advance two discretisation levels driven by the same noise paths.

    Both levels share particle count, horizon and ``h0``; each keeps its
    own adaptive grid.  Returns ``(fine, coarse)`` ensembles at the
    terminal time, plus ``(fine_log, coarse_log, consumed_time)`` when
    ``return_logs`` is set.
    """
    for attr in ("n_particles", "terminal_time", "h0"):
        if getattr(config_fine, attr) != getattr(config_coarse, attr):
            raise InvalidInputError(f"coupled levels must share {attr}")
    states = _initial_states(model, x0, config_fine.n_particles)
    T = config_fine.terminal_time
    X, logs, consumed, status, _, _ = _run(
        model, np.stack([states, states]), [config_fine.delta, config_coarse.delta],
        config_fine.h0, T, stream, jumps, None, max_steps)
    _raise_for_status(status, ("fine", "coarse"))
    fine = ParticleEnsemble(X[0], T)
    coarse = ParticleEnsemble(X[1], T)
    if return_logs:
        return fine, coarse, logs[0], logs[1], consumed
    return fine, coarse
