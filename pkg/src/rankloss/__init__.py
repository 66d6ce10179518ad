"""rankloss: error-driven ranking losses, LRP metrics, and a desk-scale trainer.

Losses (AP, average-LRP, NDCG) are differentiated through score rankings by
assigning each positive's primary error to the negatives ranked above it.
The package also carries the matching evaluation metrics (average precision
sweeps, LRP and its optimum over thresholds), a sort/cumsum implementation
of the average-LRP loss with a numba kernel and a numpy fallback, and a toy
full-batch trainer that makes the balance and self-balance properties of
those losses observable.

Environment switches:
  RANKLOSS_BACKEND  numba | numpy  force the fast engine's kernel
  RANKLOSS_THREADS  integer        worker budget for the bench CLI
"""

from .geometry import (
    Box,
    LocErrorKind,
    giou,
    giou_grad,
    iou,
    iou_grad,
    loc_error,
    loc_error_grad,
)
from .ranking import (
    IGNORE,
    NEG,
    POS,
    AnchorRecord,
    GradReport,
    RankStats,
    Scenario,
    StepKind,
    assemble_gradients,
    diff_transform,
    gradient_sums,
    rank_stats,
    step,
)
from .losses import (
    APLossDef,
    ALRPLossDef,
    LossBreakdown,
    NDCGLossDef,
    SelfBalancer,
    WrongTargetALRPDef,
    alrp_loss,
    alrp_soft_weights,
    ap_loss,
    balance_ratio,
    lrp_per_positive,
    ndcg_ideal_gain,
    ndcg_loss,
    self_balance_update,
    wrong_target_alrp,
)
from .fast_alrp import (
    FastConfig,
    active_backend,
    complexity_bound,
    complexity_probe,
    fast_alrp,
    operation_count,
    pruned_size,
)
from .metrics import (
    DEFAULT_TAUS,
    Detection,
    EvalInput,
    GroundTruth,
    LRPResult,
    ap_at_iou,
    lrp_at,
    mean_ap,
    olrp,
    positive_ious,
    ranking_bound_transform,
    ranking_correlation,
    reference_losses,
    scenario_to_eval,
)
from .trainer import (
    ScenarioGenSpec,
    ToyModel,
    TrainConfig,
    TrainLog,
    generate_scenario,
    sb_warmup_report,
    train,
)
from .fileio import (
    FileFormatError,
    load_eval,
    load_scenario,
    save_eval,
    save_scenario,
)
from .fixtures import FIXTURE_NAMES, fixture_eval, fixture_scenario, write_fixture_files

__version__ = "0.1.0"

__all__ = [
    "Box",
    "LocErrorKind",
    "giou",
    "giou_grad",
    "iou",
    "iou_grad",
    "loc_error",
    "loc_error_grad",
    "IGNORE",
    "NEG",
    "POS",
    "AnchorRecord",
    "GradReport",
    "RankStats",
    "Scenario",
    "StepKind",
    "assemble_gradients",
    "diff_transform",
    "gradient_sums",
    "rank_stats",
    "step",
    "APLossDef",
    "ALRPLossDef",
    "LossBreakdown",
    "NDCGLossDef",
    "SelfBalancer",
    "WrongTargetALRPDef",
    "alrp_loss",
    "alrp_soft_weights",
    "ap_loss",
    "balance_ratio",
    "lrp_per_positive",
    "ndcg_ideal_gain",
    "ndcg_loss",
    "self_balance_update",
    "wrong_target_alrp",
    "FastConfig",
    "active_backend",
    "complexity_bound",
    "complexity_probe",
    "fast_alrp",
    "operation_count",
    "pruned_size",
    "DEFAULT_TAUS",
    "Detection",
    "EvalInput",
    "GroundTruth",
    "LRPResult",
    "ap_at_iou",
    "lrp_at",
    "mean_ap",
    "olrp",
    "positive_ious",
    "ranking_bound_transform",
    "ranking_correlation",
    "reference_losses",
    "scenario_to_eval",
    "ScenarioGenSpec",
    "ToyModel",
    "TrainConfig",
    "TrainLog",
    "generate_scenario",
    "sb_warmup_report",
    "train",
    "FileFormatError",
    "load_eval",
    "load_scenario",
    "save_eval",
    "save_scenario",
    "FIXTURE_NAMES",
    "fixture_eval",
    "fixture_scenario",
    "write_fixture_files",
    "__version__",
]
