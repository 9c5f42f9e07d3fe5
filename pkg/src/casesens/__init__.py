"""Sensitivity analysis for matched case-referent studies with broad and narrow case definitions."""

from .bounds import (
    SensitivityParams,
    broad_bounds,
    displacement_from_theta,
    narrow_bounds,
    theta_from_displacement,
)
from .errors import (
    CaseSensError,
    DataError,
    NoNarrowSets,
    NoRejectionAtOne,
    NotBracketed,
    ParameterError,
    StatisticalPreconditionError,
    Unattainable,
)
from .frontier import FrontierPoint, frontier_curve, gamma_star
from .inference import (
    BernoulliSum,
    CombinedResult,
    PValueBounds,
    bonferroni,
    broad_test,
    combined_test,
    narrow_test,
    tail_ge,
)
from .matching import CovariateTable, MatchResult, balance_table, optimal_match, robust_mahalanobis
from .power import (
    FavorableModel,
    PowerSpec,
    design_sensitivity,
    design_sensitivity_numeric,
    expected_narrow_sets,
    power_broad,
    power_narrow,
    required_sets,
)
from .simulation import SimConfig, SimResult, generate_study, simulate_power
from .study import Study, parse_study, read_study_csv, summarize

__version__ = "0.1.0"
