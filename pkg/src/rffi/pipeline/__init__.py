"""Datasets, training loops and inference."""

from rffi.pipeline.dataset import (
    Dataset,
    DatasetRecord,
    SfGroup,
    augment_offline,
    generate_dataset,
    load_dataset,
    manifest_hash,
    save_dataset,
)
from rffi.pipeline.inference import (
    InferenceHistory,
    fuse_blocks,
    fuse_multi_packet,
    infer_single,
    packet_probs,
)
from rffi.pipeline.training import TrainConfig, TrainingDivergence, TrainingHistory, train

__all__ = [
    "Dataset",
    "DatasetRecord",
    "InferenceHistory",
    "SfGroup",
    "TrainConfig",
    "TrainingDivergence",
    "TrainingHistory",
    "augment_offline",
    "fuse_blocks",
    "fuse_multi_packet",
    "generate_dataset",
    "infer_single",
    "load_dataset",
    "manifest_hash",
    "packet_probs",
    "save_dataset",
    "train",
]
