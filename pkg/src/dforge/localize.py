"""Bounding boxes from score maps and IoU-based localization evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .datamodel import BBox, DatasetManifest, RegionGrid, ScoreMap
from .errors import EmptyComponent, MissingGroundTruth
from .pooling import LocalizeParams, RegionSet, threshold_regions

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

IOU_THRESHOLD = 0.5  # "correct" means IoU of at least 50% with a ground-truth box


def connected_components(rs: RegionSet) -> list[frozenset[tuple[int, int]]]:
    """4-connected components of the region set, ordered by the row-major
    first cell of each component."""
    if not rs.members:
        return []
    mask = np.zeros((rs.grid.rows, rs.grid.cols), dtype=bool)
    for r, c in rs.members:
        mask[r, c] = True
    labeled, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
    comps = []
    for lab in range(1, n + 1):
        rows, cols = np.nonzero(labeled == lab)
        comps.append(frozenset(zip(rows.tolist(), cols.tolist())))
    comps.sort(key=lambda comp: min(comp))
    return comps


def largest_component(
    components: list[frozenset[tuple[int, int]]], s: ScoreMap
) -> frozenset[tuple[int, int]] | None:
    """Component with the most cells; ties go to the larger sum of finite
    scores, then to the earlier row-major first cell."""
    if not components:
        return None

    def score_sum(comp):
        vals = np.array([s.scores[r, c] for r, c in comp], dtype=np.float64)
        return float(vals[np.isfinite(vals)].sum())

    return min(components, key=lambda comp: (-len(comp), -score_sum(comp), min(comp)))


def component_to_bbox(comp: frozenset[tuple[int, int]], grid: RegionGrid) -> BBox:
    """Tight pixel bounding box of a cell component."""
    if not comp:
        raise EmptyComponent("cannot build a box from an empty component")
    rows = [r for r, _ in comp]
    cols = [c for _, c in comp]
    return BBox(
        x_min=grid.origin_x + min(cols) * grid.cell_w,
        y_min=grid.origin_y + min(rows) * grid.cell_h,
        x_max=grid.origin_x + (max(cols) + 1) * grid.cell_w,
        y_max=grid.origin_y + (max(rows) + 1) * grid.cell_h,
    )


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when disjoint."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def predict_box(s: ScoreMap, params: LocalizeParams = LocalizeParams()) -> BBox | None:
    """Threshold, take the largest connected component, box it; None when the
    thresholded set is empty (e.g. everything suppressed)."""
    comps = connected_components(threshold_regions(s, params))
    comp = largest_component(comps, s)
    return component_to_bbox(comp, s.grid) if comp is not None else None


@dataclass
class ClassStats:
    images: int = 0
    correct: int = 0
    iou_sum: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.correct / self.images if self.images else 0.0

    @property
    def mean_iou(self) -> float:
        return self.iou_sum / self.images if self.images else 0.0

    def to_dict(self) -> dict:
        return {
            "images": self.images,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "mean_iou": self.mean_iou,
        }


@dataclass
class EvalReport:
    """Correct-localization counts per class plus overall aggregates."""

    per_class: dict[str, ClassStats] = field(default_factory=dict)
    overall: ClassStats = field(default_factory=ClassStats)

    def to_dict(self) -> dict:
        return {
            "per_class": {c: st.to_dict() for c, st in sorted(self.per_class.items())},
            "overall": self.overall.to_dict(),
        }


def evaluate(
    man: DatasetManifest,
    predictions: dict[str, dict[str, BBox | None]],
    iou_threshold: float = IOU_THRESHOLD,
    classes: set[str] | None = None,
) -> EvalReport:
    """Score predictions against manifest ground truth.

    Every (image, class) pair with ground-truth boxes is evaluated (optionally
    restricted to `classes`); a pair is correct iff a prediction exists whose
    best IoU against that class's boxes reaches the threshold. A missing or
    None prediction counts as incorrect (IoU 0). Predicting a class with no
    ground truth on that image is an error.
    """
    for image_id, per_class in predictions.items():
        img = man.image(image_id)
        for class_id, box in per_class.items():
            if box is not None and class_id not in img.gt_boxes:
                raise MissingGroundTruth(f"image {image_id!r} has no ground truth for class {class_id!r}")

    report = EvalReport()
    for img in man.images:
        for class_id, gt in img.gt_boxes.items():
            if classes is not None and class_id not in classes:
                continue
            stats = report.per_class.setdefault(class_id, ClassStats())
            pred = predictions.get(img.image_id, {}).get(class_id)
            best = max((iou(pred, g) for g in gt), default=0.0) if pred is not None else 0.0
            correct = best >= iou_threshold
            for bucket in (stats, report.overall):
                bucket.images += 1
                bucket.correct += int(correct)
                bucket.iou_sum += best
    return report
