"""Distractor suppression: per-region best-cluster lookup and score masking."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (
    AnnotationRecord,
    ClusterLabel,
    ClusterModel,
    DatasetManifest,
    FeatureMap,
    ScoreMap,
    read_feature_map,
    read_score_map,
    write_score_map,
)
from .errors import ClassMismatch, DimensionMismatch, GridMismatch
from .pooling import LocalizeParams, ZERO_NORM_EPS


@dataclass(frozen=True)
class RefineSummary:
    images: int
    cells_suppressed: int


def suppress(s: ScoreMap, fm: FeatureMap, model: ClusterModel, ann: AnnotationRecord) -> ScoreMap:
    """Set the score of every region whose best-matching cluster is annotated
    as a distractor to -inf; all other scores pass through unchanged.

    The best cluster maximizes the centroid inner product (ties to the lowest
    cluster index). Zero-norm cells carry no evidence and are left alone.
    """
    if s.grid != fm.grid:
        raise GridMismatch(f"score grid {s.grid} != feature grid {fm.grid}")
    if not (s.class_id == model.class_id == ann.class_id):
        raise ClassMismatch(
            f"scores are {s.class_id!r}, model {model.class_id!r}, annotation {ann.class_id!r}"
        )
    ann.validate_for(model)
    if fm.feat_dim != model.feat_dim:
        raise DimensionMismatch(f"feature dim {fm.feat_dim} != model dim {model.feat_dim}")

    flat = fm.values.reshape(-1, fm.feat_dim).astype(np.float64)
    norms = np.linalg.norm(flat, axis=1)
    live = norms >= ZERO_NORM_EPS
    sims = np.zeros((flat.shape[0], model.k), dtype=np.float64)
    sims[live] = (flat[live] / norms[live, None]) @ model.centroids.astype(np.float64).T
    best = sims.argmax(axis=1)

    is_distractor = np.array([ann.labels[i] == ClusterLabel.DISTRACTOR for i in range(model.k)])
    mask = is_distractor[best] & live

    out = s.scores.copy()
    out.reshape(-1)[mask] = -np.inf
    return ScoreMap(class_id=s.class_id, grid=s.grid, scores=out)


def refined_smap_path(out_dir: str | Path, image_id: str, class_id: str) -> Path:
    return Path(out_dir) / f"{image_id}_{class_id}.smap"


def refine_dataset(
    man: DatasetManifest,
    class_id: str,
    model: ClusterModel,
    ann: AnnotationRecord,
    out_dir: str | Path,
    params: LocalizeParams = LocalizeParams(),
) -> RefineSummary:
    """Write a suppressed score map for every image labeled with the class."""
    ann.validate_for(model)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = 0
    suppressed = 0
    for img in man.images_with_label(class_id):
        fm = read_feature_map(img.fmap, grid=man.grid)
        sm = read_score_map(img.smaps[class_id], class_id=class_id, grid=man.grid)
        refined = suppress(sm, fm, model, ann)
        suppressed += int((refined.scores != sm.scores).sum())
        write_score_map(refined, refined_smap_path(out_dir, img.image_id, class_id))
        images += 1
    return RefineSummary(images=images, cells_suppressed=suppressed)
