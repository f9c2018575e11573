"""Risk engine for exposure-information uncertainty in regional seismic loss.

When missing bridge attributes are imputed probabilistically, the regional
loss estimate picks up bias and extra variance. This package samples the full
pipeline — correlated ground-motion fields, class draws from calibrated
distributions, fragility-based damage, repair and replacement costs — and
splits the resulting loss variance into a baseline part (hazard, damage, cost
randomness) and an exposure-information part (attribute ambiguity), at bridge
and regional scale.
"""

from .analysis import (
    PrioritizationResult,
    SensitivityRun,
    one_way_sensitivity,
    prioritize,
    summarize_regional_losses,
    what_if_inspect,
)
from .config import RunConfig, load_config
from .decomposition import (
    BiasReport,
    ClassStat,
    CovarianceReport,
    Ledger,
    VarianceDecomposition,
    bias_report,
    decompose_bridge,
    decompose_regional,
    load_ledger_csv,
    write_ledger_csv,
)
from .errors import ConfigError, DataError, ExpovarError, NumericError
from .fragility import (
    CollapseTrigger,
    DamageStateProbabilities,
    FragilityCurve,
    FragilityDatabase,
    collapse_probability,
    damage_bias,
    exceedance,
    exposure_sd,
    in_state,
    load_fragility,
    mixture_in_state,
    sample_damage,
)
from .hazard import (
    GroundMotionFieldSet,
    ScenarioHazardInput,
    Site,
    build_covariance,
    load_hazard,
    sample_fields,
)
from .imputation import (
    CalibratedDistribution,
    ExposureClassDistribution,
    QuantityRuleset,
    ScoreVector,
    class_hash,
    class_key,
    compose_chain,
    derive_quantities,
    distribution_for_asset,
    fit_temperature,
    load_constraints,
    load_score_file,
    softmax,
    truth_distribution,
)
from .inventory import (
    AssetRecord,
    AttributeSchema,
    AttributeSpec,
    Inventory,
    haversine_km,
    load_inventory,
    load_schema,
    missing_fields,
)
from .loss import (
    BridgeLossSample,
    LossModel,
    UnitCost,
    expected_loss,
    load_loss_model,
    sample_loss,
)
from .pipeline import (
    LoadedInputs,
    RunResult,
    SourceMask,
    build_distributions,
    load_inputs,
    run,
    run_engine,
    validate_inputs,
)

__version__ = "0.1.0"

__all__ = [
    "AssetRecord",
    "AttributeSchema",
    "AttributeSpec",
    "BiasReport",
    "BridgeLossSample",
    "CalibratedDistribution",
    "ClassStat",
    "CollapseTrigger",
    "ConfigError",
    "CovarianceReport",
    "DamageStateProbabilities",
    "DataError",
    "ExposureClassDistribution",
    "ExpovarError",
    "FragilityCurve",
    "FragilityDatabase",
    "GroundMotionFieldSet",
    "Inventory",
    "Ledger",
    "LoadedInputs",
    "LossModel",
    "NumericError",
    "PrioritizationResult",
    "QuantityRuleset",
    "RunConfig",
    "RunResult",
    "ScenarioHazardInput",
    "ScoreVector",
    "SensitivityRun",
    "Site",
    "SourceMask",
    "UnitCost",
    "VarianceDecomposition",
    "bias_report",
    "build_covariance",
    "build_distributions",
    "class_hash",
    "class_key",
    "collapse_probability",
    "compose_chain",
    "damage_bias",
    "decompose_bridge",
    "decompose_regional",
    "derive_quantities",
    "distribution_for_asset",
    "exceedance",
    "expected_loss",
    "exposure_sd",
    "fit_temperature",
    "haversine_km",
    "in_state",
    "load_config",
    "load_constraints",
    "load_fragility",
    "load_hazard",
    "load_inputs",
    "load_inventory",
    "load_ledger_csv",
    "load_loss_model",
    "load_schema",
    "load_score_file",
    "missing_fields",
    "mixture_in_state",
    "one_way_sensitivity",
    "prioritize",
    "run",
    "run_engine",
    "sample_damage",
    "sample_fields",
    "sample_loss",
    "softmax",
    "summarize_regional_losses",
    "truth_distribution",
    "validate_inputs",
    "what_if_inspect",
    "write_ledger_csv",
]
