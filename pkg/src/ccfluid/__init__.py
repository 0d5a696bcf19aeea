"""Fluid-model simulator and stability-analysis toolkit for BBR/CUBIC
competition at a shared bottleneck link."""

__version__ = "0.1.0"

from .model import (
    BbrFlowState,
    ConfigError,
    CubicFlowState,
    NetworkConfig,
    Rates,
    SystemState,
    backoff_queue,
    bbr_strengths,
    bbrv2_strengths,
    config_from_dict,
    load_config,
    loss_rate,
    total_load,
    window_growth,
)
from .dynamics import (
    AdaptationPolicy,
    IntegrationError,
    IntegratorSettings,
    Trace,
    default_initial_state,
    derivative,
    frozen_policy,
    probe_step,
    simulate,
    step,
)
from .equilibrium import (
    AlphaHat,
    BracketError,
    ShortTermEquilibrium,
    UpdateFunctions,
    alpha_hat,
    build_update_functions,
    equilibrium_delay,
    long_term_equilibrium,
    solve_equilibrium,
    solve_short_term,
)
from .stability import (
    InstabilityVerdict,
    LinearizationReport,
    SweepSpec,
    instability_condition,
    linearize,
    sweep,
)
from .oscillation import (
    FairnessBounds,
    LimitCycle,
    LongTermTrace,
    StableConfigError,
    fairness_bounds,
    iterate_longterm,
    limit_cycle,
)
