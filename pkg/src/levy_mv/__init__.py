"""Tamed-adaptive Euler-Maruyama simulation of Levy-driven McKean-Vlasov SDEs."""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateInputError, InvalidInputError,  # noqa: E402
                     NumericOverflowError, UnsupportedError)
from .measures import (LevelErrorPoint, RateFit, estimate_moment, fit_rate,  # noqa: E402
                       mse_levels, w2_coupling_bound, w2_empirical_1d, w2_exact_1d,
                       w2_to_dirac0)
from .model import (MeasureStats, McKeanVlasovModel, ParticleEnsemble,  # noqa: E402
                    builtin_paper_model, ensemble_stats, eval_coefficients, get_model,
                    ornstein_uhlenbeck_model, zero_model)
from .noise import (BilateralGammaParams, NoiseStream, bilateral_gamma_increment,  # noqa: E402
                    brownian_increment, gamma_sample, levy_measure_moment)
from .scheme import (SchemeConfig, StepLog, advance_coupled, advance_to,  # noqa: E402
                     ensemble_step_size, local_step_size, simulate, tame_diffusion, tame_jump)

__all__ = [
    "BilateralGammaParams", "ConfigError", "DegenerateInputError", "InvalidInputError",
    "LevelErrorPoint", "MeasureStats", "McKeanVlasovModel", "NoiseStream",
    "NumericOverflowError", "ParticleEnsemble", "RateFit", "SchemeConfig", "StepLog",
    "UnsupportedError", "advance_coupled", "advance_to", "bilateral_gamma_increment",
    "brownian_increment", "builtin_paper_model", "ensemble_stats", "ensemble_step_size",
    "estimate_moment", "eval_coefficients", "fit_rate", "gamma_sample", "get_model",
    "levy_measure_moment", "local_step_size", "mse_levels", "ornstein_uhlenbeck_model",
    "simulate", "tame_diffusion", "tame_jump", "w2_coupling_bound", "w2_empirical_1d",
    "w2_exact_1d", "w2_to_dirac0", "zero_model",
]
