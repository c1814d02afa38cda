"""groupsift: outlier ranking and human-in-the-loop curation for grouped image datasets."""

from .embed_rank import (
    cosine_distance,
    euclidean_distance,
    group_distances,
    group_prototype,
    mean_pairwise_distance,
    normalized_group_distances,
    rank_embedding,
)
from .manifest import (
    EmbeddingMatrix,
    Grouping,
    ImageRecord,
    OutlierType,
    group_images,
    load_embeddings,
    load_manifest,
    save_manifest,
)
from .metrics import MetricReport, evaluate
from .ranking import DistanceMetric, Method, RankedList, ScoredImage
from .segmentation import GrayImage, SegmentationParams, extract_area
from .size_rank import rank_size

__version__ = "0.1.0"

__all__ = [
    "DistanceMetric",
    "EmbeddingMatrix",
    "GrayImage",
    "Grouping",
    "ImageRecord",
    "Method",
    "MetricReport",
    "OutlierType",
    "RankedList",
    "ScoredImage",
    "SegmentationParams",
    "cosine_distance",
    "euclidean_distance",
    "evaluate",
    "extract_area",
    "group_distances",
    "group_images",
    "group_prototype",
    "load_embeddings",
    "load_manifest",
    "mean_pairwise_distance",
    "normalized_group_distances",
    "rank_embedding",
    "rank_size",
    "save_manifest",
    "__version__",
]
