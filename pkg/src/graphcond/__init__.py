"""Graph-conditioned MLPs for small, high-dimensional tabular data.

An MLP's first layer is parameterised as ``alpha * W_gnn + (1 - alpha) * W_scratch``,
where ``W_gnn`` comes from a GCN run over one sample graph per feature and
``alpha`` decays to zero early in training.
"""

__version__ = "0.1.0"

from .bench import ModelSpec, aggregate, balanced_accuracy, curve_study, run_benchmark
from .dataio import TabularDataset, load_csv, make_planted_dataset, stratified_splits
from .graphs import FeatureGraph, GraphConfig, build_feature_graphs
from .model import ConditionedModel, MixingSchedule, TrainConfig, Trainer, mixing_alpha, predict, train

__all__ = [
    "ConditionedModel", "FeatureGraph", "GraphConfig", "MixingSchedule", "ModelSpec",
    "TabularDataset", "TrainConfig", "Trainer", "aggregate", "balanced_accuracy",
    "build_feature_graphs", "curve_study", "load_csv", "make_planted_dataset", "mixing_alpha",
    "predict", "run_benchmark", "stratified_splits", "train",
]
