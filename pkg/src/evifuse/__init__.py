"""Uncertainty-aware incomplete multi-view classification.

Pipeline pieces: multi-view dataset handling with controlled missingness,
neighbor-conditioned Gaussian imputation with multiple completions,
per-view evidential classifiers trained under a multi-task objective,
belief-mass fusion across views, and vote-based prediction with
uncertainty reporting.
"""

from evifuse.dataset import (
    MissingnessSpec,
    MultiViewDataset,
    SplitSpec,
    generate_missing_mask,
    load_dataset,
    split,
    zscore_fit_transform,
)
from evifuse.evidential import (
    AnnealSchedule,
    DirichletParams,
    SubjectiveOpinion,
    ace_loss,
    anneal_lambda,
    dirichlet_to_opinion,
    evidence_to_dirichlet,
    kl_regularizer,
    view_loss,
)
from evifuse.fusion import (
    FusionConflictError,
    ds_combine_pair,
    ds_fold,
    fused_dirichlet,
    total_loss,
)
from evifuse.imputer import (
    CompletionSet,
    GaussianImputation,
    NeighborQuery,
    distance_set,
    estimate_gaussian,
    neighbor_union,
    sample_completions,
    topk_indicator,
)
from evifuse.network import Adam, EvidenceNetwork
from evifuse.predictor import evaluate, predict_sample, stability_experiment
from evifuse.trainer import TrainConfig, TrainedModel, load_model, save_model, train

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "Adam",
    "CompletionSet",
    "DirichletParams",
    "EvidenceNetwork",
    "FusionConflictError",
    "GaussianImputation",
    "MissingnessSpec",
    "MultiViewDataset",
    "NeighborQuery",
    "SplitSpec",
    "SubjectiveOpinion",
    "TrainConfig",
    "TrainedModel",
    "ace_loss",
    "anneal_lambda",
    "dirichlet_to_opinion",
    "distance_set",
    "ds_combine_pair",
    "ds_fold",
    "estimate_gaussian",
    "evaluate",
    "evidence_to_dirichlet",
    "fused_dirichlet",
    "generate_missing_mask",
    "kl_regularizer",
    "load_dataset",
    "load_model",
    "neighbor_union",
    "predict_sample",
    "sample_completions",
    "save_model",
    "split",
    "stability_experiment",
    "topk_indicator",
    "total_loss",
    "train",
    "view_loss",
    "zscore_fit_transform",
]
