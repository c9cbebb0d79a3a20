"""Limiting distributions of fixed-b HAR statistics under nonstationarity."""
from .moments import (
    MomentReport,
    central_moments_from_cumulants,
    chi2_cdf_derivative,
    cumulant_grid_check,
    cumulants_asymptotic,
    cumulants_finite_T,
    expansion_rejection_approx,
    finite_T_moments,
    lemma1_bound,
    mean_G_b,
    moment_report,
)
from .simulate import (
    BLOCK,
    CriticalValueTable,
    GridSpec,
    LimitDrawSet,
    WeightedWienerPath,
    bridge_functional,
    critical_values,
    empirical_pvalue,
    limit_F_draws,
    limit_t_draws,
    plug_in_limit_distribution,
    read_drawset_csv,
    simulate_G_b,
    simulate_G_bartlett,
    simulate_G_general,
    simulate_weighted_wiener,
)
from .stationary import stationary_critical_value, stationary_limit_draws

__all__ = [name for name in dir() if not name.startswith("_")]
