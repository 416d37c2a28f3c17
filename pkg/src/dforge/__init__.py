"""dforge: distractor discovery and suppression for weakly-supervised
localization score maps.

Pipeline: pool foreground patterns per class, cluster them spectrally at
linear cost, collect one object/distractor annotation per cluster, suppress
distractor regions, and re-localize.
"""

from .datamodel import (
    AnnotationRecord,
    BBox,
    ClusterLabel,
    ClusterModel,
    ClusterParams,
    DatasetManifest,
    FeatureMap,
    NEG_INF,
    Pattern,
    PatternPool,
    RegionGrid,
    ScoreMap,
    load_manifest,
    read_annotation,
    read_cluster_model,
    read_feature_map,
    read_score_map,
    write_annotation,
    write_cluster_model,
    write_feature_map,
    write_score_map,
)
from .heatmap import HeatmapGrid, compute_heatmap, sample_visualization_images
from .localize import EvalReport, connected_components, evaluate, iou, predict_box
from .pooling import LocalizeParams, RegionSet, build_pool, extract_patterns, threshold_regions
from .prioritize import rank_classes, tradeoff_curve
from .refine import refine_dataset, suppress
from .spectral import EigenResult, cluster, dense_eigenpairs, select_k, smallest_eigenpairs
from .synth import SynthConfig, generate, oracle_annotation

__version__ = "0.1.0"

__all__ = [
    "AnnotationRecord",
    "BBox",
    "ClusterLabel",
    "ClusterModel",
    "ClusterParams",
    "DatasetManifest",
    "EigenResult",
    "EvalReport",
    "FeatureMap",
    "HeatmapGrid",
    "LocalizeParams",
    "NEG_INF",
    "Pattern",
    "PatternPool",
    "RegionGrid",
    "RegionSet",
    "ScoreMap",
    "SynthConfig",
    "build_pool",
    "cluster",
    "compute_heatmap",
    "connected_components",
    "dense_eigenpairs",
    "evaluate",
    "extract_patterns",
    "generate",
    "iou",
    "load_manifest",
    "oracle_annotation",
    "predict_box",
    "rank_classes",
    "refine_dataset",
    "read_annotation",
    "read_cluster_model",
    "read_feature_map",
    "read_score_map",
    "sample_visualization_images",
    "select_k",
    "smallest_eigenpairs",
    "suppress",
    "threshold_regions",
    "tradeoff_curve",
    "write_annotation",
    "write_cluster_model",
    "write_feature_map",
    "write_score_map",
]
