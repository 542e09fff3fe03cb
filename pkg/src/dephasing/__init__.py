"""Dephasing-representation fidelity decay on the perturbed standard map."""

from .ensembles import EnsembleSpec, PairSpec, sample, sample_pairs
from .fidelity import (
    FidelityCurve,
    Regime,
    RegimeParams,
    classify_regime,
    dr_overlap,
    estimate_regime_params,
    fidelity_from_pair_variance,
    fit_short_time_constant,
    predict_fidelity,
)
from .maps import (
    ActionSeries,
    MapParams,
    PhasePoint,
    TangentFrame,
    lyapunov_exponent,
    perturbation_potential,
    propagate_tangent,
    propagate_with_action,
    step_map,
)
from .quantum import KickedPropagator, apply_propagator, position_state, quantum_fidelity
from .statistics import (
    CorrelatorSeries,
    SeparationScan,
    SlopeFit,
    VarianceSeries,
    fit_exponential_rate,
    fit_loglog_slope,
    force_correlator,
    integrate_correlator,
    pair_moment_surface,
    pair_variance_vs_separation,
    pair_variance_vs_time,
    potential_correlator,
    variance_delta_action,
)

__version__ = "0.1.0"
