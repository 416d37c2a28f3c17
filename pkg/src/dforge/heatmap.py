"""Per-cluster similarity heatmaps over an image's region grid.

The cluster-averaged similarity at a cell equals the inner product with the
precomputed (unnormalized) centroid, so one dot product per cell suffices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import ClusterModel, DatasetManifest, FeatureMap, RegionGrid
from .errors import DimensionMismatch, UnknownClass
from .pooling import ZERO_NORM_EPS

SAMPLE_COUNT = 12  # visualization images shown to the annotator per class


@dataclass(frozen=True, eq=False)
class HeatmapGrid:
    """Similarity of each region to one cluster, in [0, 1]."""

    class_id: str
    cluster_index: int
    grid: RegionGrid
    values: np.ndarray  # rows x cols float32

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.shape != (self.grid.rows, self.grid.cols):
            raise ValueError(f"heatmap shape {v.shape} does not match grid")
        if (v < 0).any() or (v > 1 + 1e-6).any():
            raise ValueError("heatmap values outside [0, 1 + 1e-6]")
        object.__setattr__(self, "values", v)


def centroid_of(model: ClusterModel, i: int) -> np.ndarray:
    """Stored average pattern of cluster i (mean of members, not renormalized)."""
    if not (0 <= i < model.k):
        raise IndexError(f"cluster index {i} outside [0, {model.k})")
    return model.centroids[i]


def compute_heatmap(fm: FeatureMap, model: ClusterModel, i: int) -> HeatmapGrid:
    """Inner product of each cell's normalized feature with cluster i's
    centroid; zero-norm cells map to 0."""
    centroid = centroid_of(model, i).astype(np.float64)
    if fm.feat_dim != centroid.shape[0]:
        raise DimensionMismatch(f"feature dim {fm.feat_dim} != centroid dim {centroid.shape[0]}")
    flat = fm.values.reshape(-1, fm.feat_dim).astype(np.float64)
    norms = np.linalg.norm(flat, axis=1)
    live = norms >= ZERO_NORM_EPS
    values = np.zeros(flat.shape[0], dtype=np.float64)
    values[live] = (flat[live] / norms[live, None]) @ centroid
    return HeatmapGrid(
        class_id=model.class_id,
        cluster_index=i,
        grid=fm.grid,
        values=values.reshape(fm.grid.rows, fm.grid.cols).astype(np.float32),
    )


def sample_visualization_images(
    man: DatasetManifest, class_id: str, count: int = SAMPLE_COUNT, seed: int = 0
) -> list[str]:
    """Seeded uniform sample (without replacement) of images labeled with the
    class; returns all of them, in manifest order, when fewer than count exist."""
    if class_id not in man.classes:
        raise UnknownClass(f"class {class_id!r} not in manifest")
    ids = [img.image_id for img in man.images_with_label(class_id)]
    if len(ids) <= count:
        return ids
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(ids), size=count, replace=False)
    return [ids[int(i)] for i in picks]
