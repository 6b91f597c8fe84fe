"""GP-regression-based Koopman mode decomposition for noisy time series,
with a multi-machine swing-equation simulator and a Monte-Carlo noise
robustness harness."""

from .embedding import SnapshotSequence, TrainingSet, build_training_set, load_timeseries, scaled_input
from .errors import (
    DegenerateSpectrumError,
    DivergenceError,
    EquilibriumError,
    FitError,
    InsufficientDataError,
    ParseError,
)
from .gp import (
    GpModel,
    KernelParams,
    TaskCovariance,
    default_hyper_grid,
    diag_task_covariance,
    fit,
    gram_matrix,
    kernel_eval,
    kernel_vector,
    loocv_select,
    predict_cov,
    predict_mean,
)
from .koopman import (
    KoopmanDecomposition,
    ModeStats,
    companion_matrix,
    companion_vector,
    decompose,
    latent_mean_matrix,
    mode_shape,
    mode_table,
    reconstruct,
    ritz_values,
    ritz_vectors,
    vandermonde,
)
from .montecarlo import McSummary, Scenario, TrialResult, run_trials, summarize
from .swingsim import (
    GridModel,
    Trajectory,
    add_noise,
    disturbed_init,
    electrical_power,
    find_equilibrium,
    load_grid,
    observe,
    rhs,
    seeded_rng,
    simulate,
)

__version__ = "0.1.0"
