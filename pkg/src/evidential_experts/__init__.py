"""Trustworthy classification on long-tailed data with evidential experts.

The package trains a small multi-expert network whose heads emit per-class
evidence, combines the experts' opinions into a joint uncertainty, fuses
their evidence under prefix weighting, and gates each expert's training on
how uncertain the experts before it were.  An evaluation harness covers
classification, tail detection, OOD detection, and failure prediction, and
an sklearn-style estimator wraps the whole pipeline.
"""

from .data import (
    CsvFormatError,
    GaussianCircleGeometry,
    LabeledDataset,
    LongTailSpec,
    OODDataset,
    load_csv,
    load_ood_csv,
    make_spec,
    sample_ood,
    sample_test,
    sample_train,
    write_csv,
    write_ood_csv,
)
from .estimator import EvidentialEnsembleClassifier
from .evaluation import EvalReport, run_tasks
from .losses import (
    AnnealSchedule,
    CategoricalProfile,
    LossConfig,
    diversity_loss,
    evidential_nll,
    grad_diversity_loss,
    grad_single_loss,
    joint_loss,
    kl_regularizer,
    single_loss,
)
from .metrics import (
    ScoredOutcome,
    UndefinedMetricError,
    accuracy,
    auc,
    ece,
    entropy_score,
    fpr_at_95_tpr,
    mcp_score,
    regional_accuracy,
)
from .network import (
    CheckpointError,
    DivergenceError,
    ExpertEnsemble,
    NetworkConfig,
    TrainConfig,
    engaged_experts,
    forward,
    init_ensemble,
    load_checkpoint,
    save_checkpoint,
    train_epoch,
    train_model,
)
from .opinions import (
    DirichletOpinion,
    FusionConfig,
    FusionTrace,
    TotalConflictError,
    combine_pair,
    combine_sequential,
    fuse_evidence,
    opinion_from_evidence,
    predict,
    prefix_weights,
)
from .special import digamma, lgamma, trigamma

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "CategoricalProfile",
    "CheckpointError",
    "CsvFormatError",
    "DirichletOpinion",
    "DivergenceError",
    "EvalReport",
    "EvidentialEnsembleClassifier",
    "ExpertEnsemble",
    "FusionConfig",
    "FusionTrace",
    "GaussianCircleGeometry",
    "LabeledDataset",
    "LongTailSpec",
    "LossConfig",
    "NetworkConfig",
    "OODDataset",
    "ScoredOutcome",
    "TotalConflictError",
    "TrainConfig",
    "UndefinedMetricError",
    "accuracy",
    "auc",
    "combine_pair",
    "combine_sequential",
    "digamma",
    "diversity_loss",
    "ece",
    "engaged_experts",
    "entropy_score",
    "evidential_nll",
    "forward",
    "fpr_at_95_tpr",
    "fuse_evidence",
    "grad_diversity_loss",
    "grad_single_loss",
    "init_ensemble",
    "joint_loss",
    "kl_regularizer",
    "lgamma",
    "load_checkpoint",
    "load_csv",
    "load_ood_csv",
    "make_spec",
    "mcp_score",
    "opinion_from_evidence",
    "predict",
    "prefix_weights",
    "regional_accuracy",
    "run_tasks",
    "sample_ood",
    "sample_test",
    "sample_train",
    "save_checkpoint",
    "single_loss",
    "train_epoch",
    "train_model",
    "trigamma",
    "write_csv",
    "write_ood_csv",
]
