"""redcal: reconcile two equally accurate predictors for downstream decisions.

The library patches predictors on events where their conditional mean
residuals are large: decision calibration drives every best-response
event's residual below a tolerance, while the reconciliation loop targets
the regions where the two predictors would act differently.  Runs emit
replayable transcripts, and closed-form calculators bound run length,
description size, and finite-sample deviations.
"""

from .bounds import (
    BoundInputs,
    DeviationBounds,
    GridBound,
    baseline_iteration_bound,
    baseline_min_grid,
    deviation_bounds,
    exact_iteration_bound,
    grid_iteration_bound,
    min_brier_gain,
    transcript_space_log,
)
from .calibration import (
    ResolvedConfig,
    StepReport,
    TruncatedRunError,
    adaptive_beta_delta,
    decision_calibrate,
    max_disagreement_mass,
    max_residual_norm,
    patch,
    reconcile_baseline,
    redcal,
    resolve_config,
    round_to_grid,
)
from .core import (
    ConfigurationError,
    DimensionError,
    EmpiricalDataset,
    InputError,
    LossFamily,
    LossFunction,
    PredictorPair,
    RedcalError,
    RunConfig,
    best_response,
    best_response_actions,
    brier_score,
    decision_loss,
    expected_action_losses,
    loss_gap,
    oracle_decision_loss,
    outcome_vectors,
    rescale_loss,
)
from .dataio import (
    MissingColumnError,
    RangeViolationError,
    WeightSumError,
    load_dataset,
    load_loss_family,
    save_dataset,
    save_loss_family,
)
from .events import (
    BandEvent,
    BestResponseEvent,
    DisagreementEvent,
    EmptyEventError,
    EventDescriptor,
    FrozenRegion,
    IntersectEvent,
    band_members,
    br_event_members,
    calibration_residual_norm,
    conditional_mean_residual,
    descriptor_members,
    disagreement_members,
    event_mass,
    residual_sum,
)
from .instances import (
    AuditReport,
    audit,
    gen_decal_counterexample,
    gen_random_instance,
    gen_reconcile_counterexample,
    threshold_loss,
)
from .transcript import (
    PatchStep,
    ReplayError,
    Transcript,
    build_transcript,
    family_digest,
    from_json,
    load_transcript,
    replay,
    save_transcript,
    to_json,
    transcript_digest,
)

__version__ = "0.1.0"
