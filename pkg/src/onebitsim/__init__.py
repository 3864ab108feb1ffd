"""Simulator for learning under a fixed budget of supervision bits.

Full labels cost log2(C) bits; a yes/no query about a model's guessed class
costs one bit and, when wrong, still pins down a negative label the trainer
can exploit. The package provides the numeric core (a small MLP trained with
a mean-teacher consistency loss), the dataset/partition bookkeeping, the
budgeted oracle, the stage scheduler, and an experiment harness with a CLI.
"""
from .dataset import (
    Dataset,
    GenerationError,
    LabelKind,
    Partition,
    ProtocolError,
    apply_guess_result,
    generate_blobs,
    initial_split,
    load_dataset,
    save_dataset,
    standardize,
)
from .harness import (
    ARMS,
    BudgetMismatch,
    ComparisonReport,
    ConfigError,
    RunConfig,
    aggregate,
    load_config,
    parse_config,
    run_compare,
    run_ablation,
)
from .numerics import (
    MlpParams,
    NEG_LARGE,
    backward,
    batch_loss,
    consistency_mse,
    cross_entropy,
    ema_update,
    forward,
    init_mlp,
    sgd_step,
    softmax,
    suppress_logit,
)
from .oracle import (
    BitBudget,
    BudgetExhausted,
    OnceOnlyViolation,
    Oracle,
    QueryLedger,
    QueryRecord,
    bits_for_full_label,
    charge_full_label,
    equivalent_schedules,
    plan_budget,
)
from .scheduler import (
    InsufficientPool,
    PipelineResult,
    PlanError,
    StagePlan,
    StageReport,
    run_pipeline,
    run_stage,
    select_query_set,
    split_quota,
)
from .seeding import stream, stream_seed, stream_sequence
from .trainer import (
    MeanTeacherClassifier,
    TrainingDiverged,
    evaluate,
    train_stage,
)

__version__ = "0.1.0"

__all__ = [
    "ARMS",
    "BitBudget",
    "BudgetExhausted",
    "BudgetMismatch",
    "ComparisonReport",
    "ConfigError",
    "Dataset",
    "GenerationError",
    "InsufficientPool",
    "LabelKind",
    "MeanTeacherClassifier",
    "MlpParams",
    "NEG_LARGE",
    "OnceOnlyViolation",
    "Oracle",
    "Partition",
    "PipelineResult",
    "PlanError",
    "ProtocolError",
    "QueryLedger",
    "QueryRecord",
    "RunConfig",
    "StagePlan",
    "StageReport",
    "TrainingDiverged",
    "aggregate",
    "apply_guess_result",
    "backward",
    "batch_loss",
    "bits_for_full_label",
    "charge_full_label",
    "consistency_mse",
    "cross_entropy",
    "ema_update",
    "equivalent_schedules",
    "evaluate",
    "forward",
    "generate_blobs",
    "init_mlp",
    "initial_split",
    "load_config",
    "load_dataset",
    "parse_config",
    "plan_budget",
    "run_ablation",
    "run_compare",
    "run_pipeline",
    "run_stage",
    "save_dataset",
    "select_query_set",
    "sgd_step",
    "softmax",
    "split_quota",
    "standardize",
    "stream",
    "stream_seed",
    "stream_sequence",
    "suppress_logit",
    "train_stage",
]
