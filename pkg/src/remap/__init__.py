"""remap: human-steered search over small sequential image classifiers.

Sample architectures from a layer-transition chain, train them with a
self-contained numpy trainer, compare them under structural and prediction
distances, embed them in 2-D overviews, and mutate them through ablations,
variations and handcraft edits — driven from a CLI and an HTTP service.
"""

from .arch import (Architecture, Activation, Conv2D, Dense, Dropout, MaxPool,
                   chip_sequence, count_parameters, deserialize, infer_shapes,
                   is_valid, serialize, validate)
from .data import Dataset, load_dataset
from .distances import (DistanceMatrix, append_row, distance_matrix,
                        prediction_distance, structural_distance)
from .edits import EditOp, VariationConstraints, ablations, apply_edit, variations
from .embedding import (Embedding2D, classical_mds, interpretable_projection,
                        out_of_sample)
from .sampler import TransitionModel, sample_architecture, sample_batch
from .surrogate import surrogate_train
from .trainer import TrainingConfig, TrainingRecord, build_network, gradient_check, train

__version__ = "0.1.0"

__all__ = [
    "Architecture", "Activation", "Conv2D", "Dense", "Dropout", "MaxPool",
    "chip_sequence", "count_parameters", "deserialize", "infer_shapes",
    "is_valid", "serialize", "validate",
    "Dataset", "load_dataset",
    "DistanceMatrix", "append_row", "distance_matrix",
    "prediction_distance", "structural_distance",
    "EditOp", "VariationConstraints", "ablations", "apply_edit", "variations",
    "Embedding2D", "classical_mds", "interpretable_projection", "out_of_sample",
    "TransitionModel", "sample_architecture", "sample_batch",
    "surrogate_train",
    "TrainingConfig", "TrainingRecord", "build_network", "gradient_check", "train",
]
