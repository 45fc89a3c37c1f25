"""Online prediction for partially observed linear stochastic systems.

A model-free predictor based on forgetting-balanced recursive least
squares over doubling epochs, an exact steady-state Kalman baseline, and
a benchmark harness with regret diagnostics.
"""

from .sysmodel import (
    SpectralInfo,
    SystemModel,
    Trajectory,
    ValidationReport,
    simulate,
    spectral_info,
    validate_model,
)
from .kalman import (
    FilterOutput,
    MarkovParams,
    SteadyFilter,
    markov_params,
    riccati_step,
    run_steady_predictor,
    solve_dare,
)
from .opf import (
    EpochSchedule,
    OpfParams,
    OpfRun,
    PredictionSession,
    RegressorWindow,
    RlsState,
    ScalingMatrix,
    batch_fit,
    compute_beta,
    epoch_schedule,
    predict,
    regressor_window,
    ridge_solution,
    rls_update,
    run_opf,
    run_uniform_forgetting,
    scaling_matrix,
)
from .diagnostics import (
    DecompositionInputs,
    DecompositionReport,
    RegretRecord,
    error_decomposition,
    persistent_excitation_check,
    regret_order_ratio,
    regret_series,
    truncation_bias,
    whiteness_check,
)

__version__ = "0.1.0"
