"""Evolution processes for time-dependent sectorial operator families.

Builds ``U(t, tau)`` for ``u' + A(t) u = 0`` from contour-integral
semigroups and a product-integrated Volterra correction, solves semilinear
problems by variation of constants, and measures how fast processes and
solutions converge as a family parameter ``eps`` goes to zero.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .config import ExperimentConfig, example_config, load_config, validate
from .errors import (
    BlowUpError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    DomainError,
    EvolProcError,
    GramError,
    GridMismatchError,
    QuadratureError,
    SingularResolventError,
)
from .family import (
    HypothesisConstants,
    OperatorFamily,
    check_sector,
    estimate_delta,
    eta,
    measure_family,
    resolvent,
    xi,
)
from .harness import RateReport, check_hypotheses, fit_slope, run_rate_experiment
from .problems import (
    ReactionDiffusionConfig,
    ScalarConfig,
    WaveConfig,
    build_reaction_diffusion,
    build_scalar,
    build_wave,
)
from .process import (
    EvolutionProcess,
    TimeGrid,
    build_process,
    check_process_axioms,
    process_distance,
    propagate,
    solve_phi,
)
from .semigroup import Contour, SemigroupEvaluator
from .semilinear import Nonlinearity, Trajectory, absorbing_check, gamma, solve_semilinear
from .spaces import DiscreteSpace, norm, op_norm

__all__ = [
    "BlowUpError",
    "ConfigError",
    "Contour",
    "ConvergenceError",
    "DimensionError",
    "DiscreteSpace",
    "DomainError",
    "EvolProcError",
    "EvolutionProcess",
    "ExperimentConfig",
    "GramError",
    "GridMismatchError",
    "HypothesisConstants",
    "Nonlinearity",
    "OperatorFamily",
    "QuadratureError",
    "RateReport",
    "ReactionDiffusionConfig",
    "ScalarConfig",
    "SemigroupEvaluator",
    "SingularResolventError",
    "TimeGrid",
    "Trajectory",
    "WaveConfig",
    "absorbing_check",
    "build_process",
    "build_reaction_diffusion",
    "build_scalar",
    "build_wave",
    "check_hypotheses",
    "check_process_axioms",
    "check_sector",
    "estimate_delta",
    "eta",
    "example_config",
    "fit_slope",
    "gamma",
    "load_config",
    "measure_family",
    "norm",
    "op_norm",
    "process_distance",
    "propagate",
    "resolvent",
    "run_rate_experiment",
    "solve_phi",
    "solve_semilinear",
    "validate",
    "xi",
]
