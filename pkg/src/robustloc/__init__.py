"""Robust ToA/AoA indoor positioning.

Reference-free reweighted TDoA and bearing initializers with outlier
rejection, maximum-likelihood refinement of range/bearing/joint objectives,
and a deterministic Monte Carlo harness for evaluating them.
"""

from .core import (
    SPEED_OF_LIGHT,
    AlgorithmParams,
    AllRejectedError,
    AoaMeasurement,
    BaselineParams,
    DegenerateGeometryError,
    Locator,
    NoInitializerError,
    NoiseModel,
    NotAtMaximumError,
    PositionEstimate,
    Scenario,
    ScenarioError,
    ToaMeasurement,
    direction_global,
    load_scenario,
    save_scenario,
    scenario_errors,
    validate_scenario,
)
from .fusion import InitializationResult, fuse_estimates, gate_modalities, initialize_joint
from .harness import (
    CampaignSummary,
    MethodSummary,
    TrialRecord,
    emit_report,
    load_records,
    run_campaign,
    run_trial,
    summarize,
)
from .irls_aoa import BearingLine, angular_residual, bearing_ls_position, irls_aoa
from .irls_tdoa import andrews_weight, irls_tdoa
from .likelihood import (
    LikelihoodEvaluation,
    aoa_log_likelihood,
    evaluate_with_derivatives,
    joint_log_likelihood,
    profile_tau,
    toa_log_likelihood,
    variance_from_hessian,
)
from .optimizer import OptimizerConfig, gradient_ascent, maximize
from .simulator import TruthRecord, default_scenario, noiseless_model, sample_vmf, synthesize

__version__ = "0.1.0"

__all__ = [
    "SPEED_OF_LIGHT",
    "AlgorithmParams",
    "AllRejectedError",
    "AoaMeasurement",
    "BaselineParams",
    "BearingLine",
    "CampaignSummary",
    "DegenerateGeometryError",
    "InitializationResult",
    "LikelihoodEvaluation",
    "Locator",
    "MethodSummary",
    "NoInitializerError",
    "NoiseModel",
    "NotAtMaximumError",
    "OptimizerConfig",
    "PositionEstimate",
    "Scenario",
    "ScenarioError",
    "ToaMeasurement",
    "TrialRecord",
    "TruthRecord",
    "andrews_weight",
    "angular_residual",
    "aoa_log_likelihood",
    "bearing_ls_position",
    "default_scenario",
    "direction_global",
    "emit_report",
    "evaluate_with_derivatives",
    "fuse_estimates",
    "gate_modalities",
    "gradient_ascent",
    "initialize_joint",
    "irls_aoa",
    "irls_tdoa",
    "joint_log_likelihood",
    "load_records",
    "load_scenario",
    "maximize",
    "noiseless_model",
    "profile_tau",
    "run_campaign",
    "run_trial",
    "sample_vmf",
    "save_scenario",
    "scenario_errors",
    "summarize",
    "synthesize",
    "toa_log_likelihood",
    "validate_scenario",
    "variance_from_hessian",
]
