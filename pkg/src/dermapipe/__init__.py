"""dermapipe: retrieval-prompted lesion segmentation and severity grading.

Stage 1 retrieves the K nearest annotated examples for each image (by
Euclidean distance between frozen embeddings) and hands them to an
in-context segmentation backend as (image, mask) prompts. Stage 2 trains
a small MLP head over frozen 768-d embeddings of the masked lesion to
predict a 4-level severity grade.
"""

__version__ = "0.1.0"

from .dataset import Manifest, SplitSpec, load_manifest, make_splits, subsample_train
from .errors import DermapipeError
from .featurestore import FeatureStore, read_feature_file, write_feature_file
from .metrics import MetricsReport, evaluate, weighted_f1
from .mlphead import MlpParams, TrainConfig, load_params, save_params, train
from .retrieval import knn, retrieve_prompts

__all__ = [
    "__version__",
    "DermapipeError",
    "FeatureStore",
    "Manifest",
    "MetricsReport",
    "MlpParams",
    "SplitSpec",
    "TrainConfig",
    "evaluate",
    "knn",
    "load_manifest",
    "load_params",
    "make_splits",
    "read_feature_file",
    "retrieve_prompts",
    "save_params",
    "subsample_train",
    "train",
    "weighted_f1",
    "write_feature_file",
]
