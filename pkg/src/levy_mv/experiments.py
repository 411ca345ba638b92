"""Monte Carlo experiments over repetitions of the particle system.

Each repetition ``r`` of an experiment draws its noise from the address
``(seed, namespace | r)`` so results never depend on how repetitions are
scheduled across worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
import logging
import math
import os
from pathlib import Path
import subprocess
import time

import numpy as np

from . import __version__
from .errors import ConfigError, DegenerateInputError, InvalidInputError, NumericOverflowError, \
    UnsupportedError
from .measures import (LevelErrorPoint, estimate_moment, fit_rate, merge_level_points,
                       mse_levels, w2_empirical_1d)
from .model import get_model
from .noise import BilateralGammaParams, NoiseStream
from .scheme import SchemeConfig, advance_coupled, simulate

logger = logging.getLogger(__name__)

EXPERIMENTS = ("convergence", "moments", "steps", "chaos", "simulate")

# high bits of the repetition address; keep experiments and levels disjoint
_LEVEL_SHIFT = 32
_NS_CONVERGENCE = 1 << 56
_NS_MOMENTS = 2 << 56
_NS_STEPS = 3 << 56
_NS_CHAOS = 4 << 56
_NS_CHAOS_REFERENCE = 5 << 56
_NS_SIMULATE = 6 << 56

DESK_SCALE_N = 100
PAPER_SCALE_N = 500


@dataclass
class ExperimentConfig:
    """Settings for one experiment run; mirrors the JSON config file."""

    experiment: str = "convergence"
    model: str = "paper-ptvd"
    model_params: dict = field(default_factory=dict)
    x0: list = field(default_factory=lambda: [1.0])
    N: int = DESK_SCALE_N
    T: float = 10.0
    h0: float = 1.0
    seed: int = 0
    M: int = 200
    levels: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    level: int = 3
    gamma: dict = field(default_factory=lambda: {
        "shape": 1.0, "rate_or_scale": 5.0, "interpretation": "rate"})
    jumps: bool = True
    moment_powers: list = field(default_factory=lambda: [2, 4])
    particle_counts: list = field(default_factory=lambda: [50, 100, 200, 400])
    reference_factor: int = 8
    fine_level_offset: int = 1
    on_error: str = "raise"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.on_error not in ("raise", "skip"):
            raise ConfigError(f"on_error must be 'raise' or 'skip', got {self.on_error!r}")
        for name in ("N", "M", "level", "reference_factor"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not (isinstance(self.fine_level_offset, int) and self.fine_level_offset >= 0):
            raise ConfigError("fine_level_offset must be a nonnegative integer")
        for name in ("T", "h0"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be a positive number, got {value!r}")
        if not self.levels or any(not isinstance(v, int) or v < 1 for v in self.levels):
            raise ConfigError(f"levels must be a nonempty list of positive integers, "
                              f"got {self.levels!r}")
        if len(set(self.levels)) != len(self.levels):
            raise ConfigError("levels must be distinct")
        if not self.particle_counts or any(
                not isinstance(v, int) or v < 1 for v in self.particle_counts):
            raise ConfigError("particle_counts must be a nonempty list of positive integers")
        if not self.moment_powers or any(not p > 0 for p in self.moment_powers):
            raise ConfigError("moment_powers must be positive")
        try:
            x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        except (TypeError, ValueError):
            raise ConfigError(f"x0 must be a number or a list of numbers, got {self.x0!r}") from None
        if x0.ndim != 1 or not np.all(np.isfinite(x0)):
            raise ConfigError("x0 must be a finite vector")
        self.x0 = [float(v) for v in x0]
        if not isinstance(self.model_params, dict):
            raise ConfigError("model_params must be an object")
        try:
            self.noise_params()
        except (InvalidInputError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad gamma settings: {exc}") from None

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**data)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return type(self).from_dict(data)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def build_model(self):
        try:
            model = get_model(self.model, **self.model_params)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None
        if len(self.x0) != model.dimension:
            raise ConfigError(f"x0 has {len(self.x0)} entries but model {self.model!r} "
                              f"has dimension {model.dimension}")
        return model

    def noise_params(self):
        if not self.jumps:
            return None
        g = self.gamma
        return BilateralGammaParams.from_config(
            g["shape"], g["rate_or_scale"], g.get("interpretation", "rate"))

    def scheme(self, level, n_particles=None):
        return SchemeConfig.for_level(level, self.T, n_particles or self.N, self.h0)


@dataclass
class ResultTable:
    """Named columns plus a provenance header."""

    columns: dict
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise InvalidInputError(f"columns have unequal lengths {sorted(lengths)}")

    @property
    def n_rows(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def column(self, name):
        return self.columns[name]

    def rows(self):
        names = list(self.columns)
        return [tuple(self.columns[n][i] for n in names) for i in range(self.n_rows)]


class ExperimentError(RuntimeError):
    """Wraps a failure together with whatever partial table was produced."""


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_results(table, path):
    """Write ``table`` as CSV (header row, then one line per row)."""
    if table.n_rows == 0:
        raise InvalidInputError("refusing to write an empty result table")
    path = Path(path)
    try:
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(table.columns))
            for row in table.rows():
                writer.writerow([_format_cell(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def _git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def emit_manifest(config, table=None, wall_time=None):
    """Reproducibility record: config echo, digest, seed and versions."""
    manifest = {
        "config": config.to_dict(),
        "config_sha256": config.digest(),
        "seed": int(config.seed),
        "version": __version__,
        "git": _git_describe(),
        "wall_time_seconds": wall_time,
    }
    if table is not None:
        manifest["provenance"] = table.provenance
    return manifest


def manifest_path(results_path):
    p = Path(results_path)
    return p.with_name(p.stem + ".manifest.json")


def write_manifest(manifest, results_path):
    path = manifest_path(results_path)
    try:
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write manifest to {path}: {exc}") from exc
    return path


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


# -- repetition scheduling ---------------------------------------------------

def _map_repetitions(fn, reps, threads, on_error, context):
    """Run ``fn(rep)`` for every rep; results in rep order, failures counted."""
    def guarded(rep):
        try:
            return rep, fn(rep), None
        except NumericOverflowError as exc:
            exc.with_context(repetition=rep, **context)
            if on_error == "raise":
                raise
            return rep, None, exc

    reps = list(reps)
    if threads <= 1:
        outcomes = [guarded(r) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(guarded, reps))
    results = [res for _, res, err in outcomes if err is None]
    failures = [err for _, _, err in outcomes if err is not None]
    for err in failures:
        logger.warning("repetition failed: %s", err)
    return results, failures


def _provenance(config, **extra):
    out = {"config_sha256": config.digest(), "seed": int(config.seed), "version": __version__,
           "experiment": config.experiment}
    out.update(extra)
    return out


# -- experiments -------------------------------------------------------------

def run_convergence(config, threads=1):
    """Coupled two-level MSE per level and the fitted strong rate.

    Returns ``(ResultTable, RateFit)``.  A zero MSE makes the fit undefined:
    :class:`DegenerateInputError` is raised with the table attached as
    ``exc.table``.
    """
    if len(config.levels) < 2:
        raise ConfigError("convergence needs at least two levels")
    if config.M < 2:
        raise ConfigError("convergence needs M >= 2")
    model = config.build_model()
    jumps = config.noise_params()
    levels = sorted(config.levels)
    cols = {"level": [], "mse": [], "log2_mse": [], "mean_steps_fine": [],
            "mean_steps_coarse": [], "n_samples": [], "failures": []}
    all_failures = 0
    for level in levels:
        fine_cfg = config.scheme(level + config.fine_level_offset)
        coarse_cfg = config.scheme(level)

        def one(rep, level=level, fine_cfg=fine_cfg, coarse_cfg=coarse_cfg):
            stream = NoiseStream(config.seed, _NS_CONVERGENCE | (level << _LEVEL_SHIFT) | rep)
            fine, coarse, flog, clog, _ = advance_coupled(
                model, fine_cfg, coarse_cfg, config.x0, stream, jumps=jumps, return_logs=True)
            point = mse_levels(fine.states, coarse.states, level=level)
            return point, flog.step_count, clog.step_count

        results, failures = _map_repetitions(one, range(config.M), threads, config.on_error,
                                             {"level": level})
        all_failures += len(failures)
        if not results:
            raise ExperimentError(f"every repetition failed at level {level}")
        point = merge_level_points(p for p, _, _ in results)
        cols["level"].append(level)
        cols["mse"].append(point.mse)
        cols["log2_mse"].append(math.log2(point.mse) if point.mse > 0 else -math.inf)
        cols["mean_steps_fine"].append(float(np.mean([f for _, f, _ in results])))
        cols["mean_steps_coarse"].append(float(np.mean([c for _, _, c in results])))
        cols["n_samples"].append(point.n_samples)
        cols["failures"].append(len(failures))
    table = ResultTable(cols, _provenance(config, failures=all_failures))
    points = [LevelErrorPoint(lv, m) for lv, m in zip(cols["level"], cols["mse"])]
    try:
        fit = fit_rate(points)
    except DegenerateInputError as exc:
        exc.table = table
        raise
    table.columns["fitted_log2_mse"] = [float(v) for v in fit.predict_log2_mse(cols["level"])]
    table.provenance.update(beta=fit.beta, intercept=fit.intercept,
                            residual_norm=fit.residual_norm)
    return table, fit


def _integer_times(T):
    return np.arange(1, int(math.floor(T)) + 1, dtype=float)


def run_moments(config, threads=1, times=None):
    """``E|X_t|**p`` at integer times (or ``times``) for each configured ``p``.

    Reports the pooled estimate over all particles of all repetitions and a
    standard error from the spread of per-repetition estimates.
    """
    if config.M < 2:
        raise ConfigError("moments needs M >= 2")
    model = config.build_model()
    jumps = config.noise_params()
    obs = _integer_times(config.T) if times is None else np.asarray(times, dtype=float)
    if obs.size == 0:
        raise ConfigError("no observation times inside [0, T]")
    scheme = config.scheme(config.level)

    def one(rep):
        stream = NoiseStream(config.seed, _NS_MOMENTS | rep)
        return simulate(model, config.x0, scheme, stream, jumps=jumps,
                        observation_times=obs).snapshots

    snaps, failures = _map_repetitions(one, range(config.M), threads, config.on_error, {})
    if not snaps:
        raise ExperimentError("every repetition failed")
    cols = {"t": [], "p": [], "estimate": [], "std_error": []}
    for k, t in enumerate(obs):
        for p in config.moment_powers:
            per_rep = np.array([estimate_moment(s[k], p) for s in snaps])
            cols["t"].append(float(t))
            cols["p"].append(p)
            cols["estimate"].append(estimate_moment([s[k] for s in snaps], p))
            cols["std_error"].append(float(per_rep.std(ddof=1) / math.sqrt(per_rep.size))
                                     if per_rep.size > 1 else math.nan)
    return ResultTable(cols, _provenance(config, failures=len(failures), level=config.level))


def run_steps(config, threads=1):
    """Mean number of adaptive steps per level and ratios between neighbours."""
    model = config.build_model()
    jumps = config.noise_params()
    cols = {"level": [], "mean_step_count": [], "ratio_to_previous": []}
    failures_total = 0
    previous = None
    for level in sorted(config.levels):
        scheme = config.scheme(level)

        def one(rep, level=level, scheme=scheme):
            stream = NoiseStream(config.seed, _NS_STEPS | (level << _LEVEL_SHIFT) | rep)
            return simulate(model, config.x0, scheme, stream, jumps=jumps).step_log.step_count

        counts, failures = _map_repetitions(one, range(config.M), threads, config.on_error,
                                            {"level": level})
        failures_total += len(failures)
        if not counts:
            raise ExperimentError(f"every repetition failed at level {level}")
        mean = float(np.mean(counts))
        cols["level"].append(level)
        cols["mean_step_count"].append(mean)
        cols["ratio_to_previous"].append(None if previous is None else mean / previous)
        previous = mean
    return ResultTable(cols, _provenance(config, failures=failures_total))


def terminal_samples(model, config, n_particles, repetition, jumps):
    """Terminal states of one ``n_particles`` system at ``config.level``."""
    stream = NoiseStream(config.seed, repetition)
    result = simulate(model, config.x0, config.scheme(config.level, n_particles), stream,
                      jumps=jumps)
    return result.ensemble.states


def run_chaos(config, threads=1):
    """W2 distance from the terminal law at each ``N`` to a large reference system.

    The reference has ``reference_factor * max(N)`` particles and its own
    noise addresses.  ``deviation`` averages over ``M`` repetitions;
    ``std_error`` is the spread of those repetitions.
    """
    counts = sorted(config.particle_counts)
    if len(counts) < 2:
        raise ConfigError("chaos needs at least two particle counts")
    model = config.build_model()
    if model.dimension != 1:
        raise UnsupportedError("the chaos experiment supports one-dimensional models only")
    jumps = config.noise_params()
    n_ref = config.reference_factor * max(counts)
    reference = terminal_samples(model, config, n_ref, _NS_CHAOS_REFERENCE, jumps)[:, 0]
    cols = {"N": [], "deviation": [], "std_error": []}
    failures_total = 0
    for n in counts:
        def one(rep, n=n):
            x = terminal_samples(model, config, n, _NS_CHAOS | (n << _LEVEL_SHIFT) | rep, jumps)
            return w2_empirical_1d(x[:, 0], reference)

        devs, failures = _map_repetitions(one, range(config.M), threads, config.on_error,
                                          {"level": config.level})
        failures_total += len(failures)
        if not devs:
            raise ExperimentError(f"every repetition failed at N={n}")
        devs = np.asarray(devs)
        cols["N"].append(n)
        cols["deviation"].append(float(devs.mean()))
        cols["std_error"].append(float(devs.std(ddof=1) / math.sqrt(devs.size))
                                 if devs.size > 1 else math.nan)
    return ResultTable(cols, _provenance(config, failures=failures_total, reference_size=n_ref))


def chaos_trend_ok(table, n_sigma=2.0):
    """Non-increasing deviations allowing one inversion inside the noise band."""
    dev = table.column("deviation")
    se = table.column("std_error")
    inversions = 0
    for k in range(len(dev) - 1):
        rise = dev[k + 1] - dev[k]
        if rise > 0:
            inversions += 1
            band = n_sigma * math.hypot(se[k], se[k + 1])
            if rise > band:
                return False
    return inversions <= 1


def run_simulate(config, threads=1):
    """One system at ``config.level``; table of terminal particle states."""
    model = config.build_model()
    stream = NoiseStream(config.seed, _NS_SIMULATE)
    result = simulate(model, config.x0, config.scheme(config.level), stream,
                      jumps=config.noise_params())
    states = result.ensemble.states
    cols = {"particle": list(range(states.shape[0]))}
    for j in range(states.shape[1]):
        cols[f"x{j + 1}"] = [float(v) for v in states[:, j]]
    return ResultTable(cols, _provenance(config, step_count=result.step_log.step_count,
                                         terminal_time=result.ensemble.time))


RUNNERS = {
    "convergence": run_convergence,
    "moments": run_moments,
    "steps": run_steps,
    "chaos": run_chaos,
    "simulate": run_simulate,
}


def run_experiment(config, threads=1):
    """Dispatch on ``config.experiment``; always returns ``(table, extra)``."""
    start = time.perf_counter()
    out = RUNNERS[config.experiment](config, threads=threads)
    table, extra = out if isinstance(out, tuple) else (out, None)
    table.provenance.setdefault("wall_time_seconds", time.perf_counter() - start)
    return table, extra


def env_seed(default=None):
    raw = os.environ.get("LEVY_MV_SEED")
    if raw is None or raw == "":
        return default
    try:
        value = int(raw, 0)
    except ValueError:
        raise ConfigError(f"LEVY_MV_SEED must be an integer, got {raw!r}") from None
    if value < 0 or value >= 2 ** 64:
        raise ConfigError("LEVY_MV_SEED must fit in an unsigned 64-bit integer")
    return value
