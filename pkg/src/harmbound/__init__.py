"""Sharp bounds on the fraction of units harmed by a binary treatment.

Point estimates and confidence intervals come from a cross-fitted,
doubly robust estimator of average hinge effects.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AheSpec,
    ConfigurationError,
    DataError,
    EtaRole,
    HarmboundError,
    Interval,
    InvariantError,
    ObservationTable,
    Policy,
    fold_assign,
    policy_indicator_functions,
)
from .nuisance import LearnerConfig, NuisanceBundle, fit_bundle, fixed_bundle  # noqa: E402
from .ahe import AtomLaw, EstimateReport, estimate, phi_scores, population_ahe, population_phi_mean  # noqa: E402
from .estimands import (  # noqa: E402
    Estimand,
    EstimandKind,
    ate_spec,
    build_spec,
    cvar_ite_bounds,
    is_identifiable,
    sharp_bounds_exact,
    sharp_bounds_optimal,
)
from .oracle import DgpSpec, coupling_bounds_bruteforce, replicate, sample, true_bounds  # noqa: E402

__all__ = [
    "AheSpec", "AtomLaw", "ConfigurationError", "DataError", "DgpSpec", "Estimand", "EstimandKind",
    "EstimateReport", "EtaRole", "HarmboundError", "Interval", "InvariantError", "LearnerConfig",
    "NuisanceBundle", "ObservationTable", "Policy", "ate_spec", "build_spec", "coupling_bounds_bruteforce",
    "cvar_ite_bounds", "estimate", "fit_bundle", "fixed_bundle", "fold_assign", "is_identifiable",
    "phi_scores", "policy_indicator_functions", "population_ahe", "population_phi_mean", "replicate",
    "sample", "sharp_bounds_exact", "sharp_bounds_optimal", "true_bounds",
]
