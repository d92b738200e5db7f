"""Ensemble and variational data assimilation on Lorenz models, with a benchmark harness."""

__version__ = "0.1.0"

from .la_core import (  # noqa: E402
    DenseCovariance,
    DiagonalCovariance,
    EnsembleCovariance,
    TaperedEnsembleCovariance,
    covariance_apply,
    covariance_inverse_apply,
    ensemble_anomalies,
    ensemble_mean,
)
from .models import (  # noqa: E402
    Lorenz63Params,
    Lorenz96Params,
    ObservationOperator,
    integrate,
    lorenz63_model,
    lorenz63_rhs,
    lorenz96_adjoint_apply,
    lorenz96_model,
    lorenz96_rhs,
    lorenz96_tlm_apply,
    rk4_step,
)
from .error_models import GaussianErrorModel, make_rng  # noqa: E402
from .ensemble_ops import (  # noqa: E402
    InflationSpec,
    LocalizationSpec,
    gaspari_cohn,
    inflate,
    localization_taper,
    localize_obs_space,
)
from .filters import (  # noqa: E402
    FilterConfig,
    denkf_analysis,
    enkf_analysis,
    etkf_analysis,
    forecast_ensemble,
    hmc_filter_analysis,
    kf_analysis,
    pf_analysis,
)
from .metrics import (  # noqa: E402
    BetaFit,
    RankHistogram,
    avg_bin_distance,
    fit_beta,
    kl_beta_to_uniform,
    rank_of_truth,
    rmse,
)
from .variational import (  # noqa: E402
    VarProblem,
    WindowObservation,
    fourdvar_cost_grad,
    gradient_check,
    minimize,
    threedvar_cost_grad,
)
from .process import CycleRecord, ProcessSpec, generate_truth, run_cycles, synthesize_observations  # noqa: E402
from .config import ExperimentConfig, load_config, parse_config, serialize_config  # noqa: E402
from .harness import SweepSpec, emit_results, run_experiment, run_sweep  # noqa: E402
