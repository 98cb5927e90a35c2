"""Truthful, jointly-differentially-private GLM estimation at desk scale.

The package splits into link algebra (`links`), closed-form estimators and
sensitivity bounds (`estimators`), noise and the privacy account (`privacy`),
synthetic agent populations and reporting strategies (`population`), the
end-to-end mechanisms (`mechanism`), and the experiment harness plus CLI
(`harness`, `cli`).
"""

from .errors import (
    ConfigError,
    DegenerateWeightsError,
    InsufficientMassError,
    InvalidPolytopeError,
    LinkDomainError,
    NonConvergenceError,
    PartitionTooSmallError,
    SingularGramError,
)
from .estimators import (
    Dataset,
    EstimatorSettings,
    SensitivityBound,
    calibrate_c0,
    empirical_sensitivity,
    glm_estimate,
    heavy_estimate,
    l4_shrink,
    l4_shrink_rows,
    project_ball,
    sensitivity_bound_heavy,
    sensitivity_bound_subgaussian,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    ScheduleSpec,
    canonical_privacy_check,
    emit_report,
    estimate_deviation_gain,
    fit_rate,
    run_experiment,
)
from .links import (
    LinkBundle,
    LinkConstants,
    ModelKind,
    PolytopeSpec,
    clip_response,
    compute_link_constants,
    make_link_bundle,
    preset_polytope,
    project_polytope,
)
from .mechanism import (
    CostFunction,
    MechanismOutcome,
    MechanismParams,
    brier_payment,
    budget_bound,
    preset_schedule,
    posterior_mean,
    rationality_check,
    run_mechanism,
)
from .population import (
    AdditiveNoise,
    AgentRecord,
    Constant,
    Misreport,
    Population,
    PopulationSpec,
    SignFlip,
    StudentTCovariates,
    SubGaussianCov,
    SubGaussianIsotropic,
    Threshold,
    Truthful,
    WorstOfGrid,
    apply_strategy,
    generate_population,
    sample_costs,
    tau_alpha_beta_bound,
    tau_alpha_beta_monte_carlo,
)
from .privacy import (
    NoiseSample,
    PrivacyParams,
    RatioReport,
    compose_account,
    empirical_privacy_ratio,
    privatize,
    sample_norm_exponential,
)

__version__ = "0.1.0"
