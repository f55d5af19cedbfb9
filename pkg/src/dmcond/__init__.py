"""dmcond: dataset condensation by class-wise embedding-mean matching."""

from .augment import (AugmentationParams, apply_aug, default_strategies,
                      sample_aug_params)
from .baselines import herding_coreset, random_coreset
from .condenser import (CondenseConfig, SyntheticSet, condense, dm_loss,
                        init_synthetic, load_condensed, save_condensed,
                        set_norm_statistics)
from .continual import IncrementalSchedule, build_memory, make_schedule, run_incremental
from .data import (ClassIndex, DatasetSpec, LabeledImageSet, build_class_index,
                   dataset_spec, load_dataset, make_toy_dataset)
from .evaluation import (EvalProtocol, EvalResult, cross_architecture_eval,
                         evaluate_synthetic, train_on_set)
from .nas import NasBudget, rank_architectures, spearman_top_slice
from .networks import (EmbedderConfig, SamplerStrategy, build_arch,
                       build_network, enumerate_search_space, sample_network)
from .report import RunReport

__all__ = [
    "AugmentationParams", "apply_aug", "default_strategies", "sample_aug_params",
    "herding_coreset", "random_coreset",
    "CondenseConfig", "SyntheticSet", "condense", "dm_loss", "init_synthetic",
    "load_condensed", "save_condensed", "set_norm_statistics",
    "IncrementalSchedule", "build_memory", "make_schedule", "run_incremental",
    "ClassIndex", "DatasetSpec", "LabeledImageSet", "build_class_index",
    "dataset_spec", "load_dataset", "make_toy_dataset",
    "EvalProtocol", "EvalResult", "cross_architecture_eval",
    "evaluate_synthetic", "train_on_set",
    "NasBudget", "rank_architectures", "spearman_top_slice",
    "EmbedderConfig", "SamplerStrategy", "build_arch", "build_network",
    "enumerate_search_space", "sample_network",
    "RunReport",
]

__version__ = "0.1.0"
