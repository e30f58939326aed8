"""Bayesian plausibility-based and predictive (KL-based) model selection for
a coupled nonlinear oscillator driven by an uncertain forcing."""
from .dynamics import (
    ForcingKind,
    IntegratorConfig,
    OscillatorState,
    SpringKind,
    Trajectory,
    integrate,
    integrate_batch,
    qoi_max_velocity,
)
from .errors import (
    DegenerateError,
    DivergenceError,
    DomainError,
    PredselError,
    PropagationError,
    SchemaError,
    StageError,
)
from .inference import PosteriorEnsemble, PredictiveEnsemble, TmcmcSettings, calibrate, tmcmc_sample
from .infotheory import SampleCloud, knn_kl_divergence
from .probmodel import Dataset, ModelSpec, PriorSpec, TruthConfig, generate_synthetic_data
from .selection import (
    PlausibilityTable,
    SelectionReport,
    bma_predictive,
    coupled_plausibilities,
    plausibility_select,
    posterior_plausibilities,
    predictive_select,
)

__version__ = "0.1.0"
