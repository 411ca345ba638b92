"""Numeric probes of the step-size and taming conditions.

Each probe samples random ``(x, ensemble, delta)`` triples for a model and
checks one inequality between the raw coefficients, the step size and the
tamed coefficients.  A violation is counted only when the left side exceeds
the right side by more than ``rel_slack`` times the magnitude of the
quantities compared.  For the T6 differences ``|sigma - sigma_delta|`` that
magnitude is ``|sigma|`` itself: rounding ``sigma / (1 + k)`` costs about one
ulp of ``sigma``, far more than ``sigma * k`` when ``k`` is tiny.
"""

from dataclasses import dataclass
import math

import numpy as np

from .model import ensemble_stats, eval_coefficients
from .scheme import local_step_size, tame_diffusion, tame_jump

__all__ = ["ProbeResult", "sample_probe_points", "run_probes", "CONDITIONS"]

CONDITIONS = (
    "h-range",
    "T1",
    "T3-diffusion",
    "T3-jump",
    "T3-drift-jump",
    "T4-diffusion",
    "T4-jump",
    "T6-diffusion",
    "T6-jump",
)


@dataclass(frozen=True)
class ProbeResult:
    condition: str
    n_checked: int
    n_violations: int
    worst_ratio: float  # max of lhs / rhs (0 when rhs is never positive)

    @property
    def passed(self):
        return self.n_violations == 0


def sample_probe_points(model, n_points, rng):
    """Yield ``(x, stats, delta)`` with states spread over several decades."""
    d = model.dimension
    for _ in range(n_points):
        scale = 10.0 ** rng.uniform(-3, 2.5)
        x = rng.standard_normal(d) * scale
        n = int(rng.integers(1, 33))
        ens_scale = 10.0 ** rng.uniform(-3, 2)
        states = rng.standard_normal((n, d)) * ens_scale + rng.standard_normal(d) * ens_scale
        delta = 10.0 ** rng.uniform(-8, 0)
        delta = min(delta, 1.0 - 1e-12)
        yield x, ensemble_stats(states), delta


def run_probes(model, n_points=10_000, seed=0, h0=1.0, rel_slack=1e-12):
    """Check every condition in :data:`CONDITIONS` on ``n_points`` samples."""
    rng = np.random.default_rng(seed)
    lhs = {name: [] for name in CONDITIONS}
    rhs = {name: [] for name in CONDITIONS}
    mag = {name: [] for name in CONDITIONS}

    def record(name, left, right, magnitude=0.0):
        lhs[name].append(left)
        rhs[name].append(right)
        mag[name].append(max(abs(right), magnitude))

    norm = np.linalg.norm
    for x, stats, delta in sample_probe_points(model, n_points, rng):
        b, sigma, c = eval_coefficients(model, x, stats)
        h = local_step_size(model, x, stats, h0)
        s_t = tame_diffusion(sigma, x, delta)
        c_t = tame_jump(c, x, b, delta)
        nx, nb, ns, nc = norm(x), norm(b), norm(sigma), norm(c)
        ns_t, nc_t = norm(s_t), norm(c_t)
        inv_sqrt = 1.0 / math.sqrt(delta)
        record("h-range", h, h0)
        if not h > 0:
            record("h-range", 1.0, 0.0)
        record("T1", nb * (1.0 + nb) * h, h0)
        record("T3-diffusion", ns_t * (1.0 + nx), inv_sqrt)
        record("T3-jump", nc_t * (1.0 + nx + nb), inv_sqrt)
        record("T3-drift-jump", nb * nc_t, inv_sqrt)
        record("T4-diffusion", ns_t, ns)
        record("T4-jump", nc_t, nc)
        record("T6-diffusion", norm(sigma - s_t), math.sqrt(delta) * ns ** 2 * (1.0 + nx), ns)
        record("T6-jump", norm(c - c_t), math.sqrt(delta) * nc ** 2 * (1.0 + nx + nb), nc)

    results = []
    for name in CONDITIONS:
        left = np.asarray(lhs[name])
        right = np.asarray(rhs[name])
        bad = left > right + rel_slack * np.asarray(mag[name])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(right > 0, left / right, np.where(left > 0, np.inf, 0.0))
        results.append(ProbeResult(name, left.size, int(bad.sum()),
                                   float(ratios.max()) if ratios.size else 0.0))
    return results
