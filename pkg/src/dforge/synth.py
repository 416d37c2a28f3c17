"""Deterministic synthetic datasets with planted object and distractor structure.

Every class gets a unit feature direction with its own coordinate block;
distractor classes get a second direction on a disjoint block, and one shared
background direction fills the rest. Disjoint support keeps all features
nonnegative and makes the planted structure separable by inner products.

Each distractor image plants the object rectangle and a strictly larger
distractor rectangle side by side (sharing an edge), so the baseline
thresholded set is one connected component covering both and the baseline box
cannot reach 50% IoU with the object ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .datamodel import (
    AnnotationRecord,
    ClusterLabel,
    ClusterModel,
    DatasetManifest,
    FeatureMap,
    RegionGrid,
    ScoreMap,
    load_manifest,
    write_feature_map,
    write_score_map,
)
from .errors import ConfigInvalid, IoFailure, TruthFileMissing

TRUTH_FILENAME = "truth.json"
ORACLE_TIMESTAMP = datetime(1970, 1, 1, tzinfo=timezone.utc)  # fixed so oracle output is reproducible

_RECT_SCORE_LO, _RECT_SCORE_HI = 0.9, 1.1
_BG_SCORE_HI = 0.05  # far below theta * max so thresholding is exact by construction


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int
    distractor_fraction: float
    images_per_class: int
    grid: RegionGrid
    feat_dim: int
    noise_sigma: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigInvalid("num_classes must be at least 1")
        if not (0 <= self.distractor_fraction <= 1):
            raise ConfigInvalid(f"distractor_fraction must lie in [0, 1], got {self.distractor_fraction}")
        if self.images_per_class < 1:
            raise ConfigInvalid("images_per_class must be at least 1")
        if self.feat_dim < 3 * self.num_classes:
            raise ConfigInvalid(
                f"feat_dim {self.feat_dim} < 3 * num_classes = {3 * self.num_classes}; "
                "no room for disjoint object/distractor/background directions"
            )
        if not (0 <= self.noise_sigma < 0.3):
            raise ConfigInvalid(f"noise_sigma must lie in [0, 0.3), got {self.noise_sigma}")
        if self.grid.rows < 6 or self.grid.cols < 6:
            raise ConfigInvalid("synthetic grids need at least 6x6 cells to place adjacent rectangles")

    @property
    def num_distractor_classes(self) -> int:
        return math.ceil(self.distractor_fraction * self.num_classes)

    def class_ids(self) -> list[str]:
        return [f"class{i:02d}" for i in range(self.num_classes)]


def _block_direction(rng: np.random.Generator, dim: int, lo: int, hi: int) -> np.ndarray:
    """Unit vector supported on [lo, hi) with positive random entries."""
    v = np.zeros(dim, dtype=np.float64)
    v[lo:hi] = rng.uniform(0.5, 1.0, size=hi - lo)
    return v / np.linalg.norm(v)


def _plant_rects(rng: np.random.Generator, grid: RegionGrid, with_distractor: bool):
    """Cell rectangles (r0, c0, r1, c1), half-open; the distractor shares an
    edge with the object and is strictly longer along the shared axis."""
    rows, cols = grid.rows, grid.cols
    if not with_distractor:
        h = int(rng.integers(2, rows // 2 + 1))
        w = int(rng.integers(2, cols // 2 + 1))
        r0 = int(rng.integers(0, rows - h + 1))
        c0 = int(rng.integers(0, cols - w + 1))
        return (r0, c0, r0 + h, c0 + w), None

    horizontal = bool(rng.integers(0, 2))
    span, lateral = (cols, rows) if horizontal else (rows, cols)
    obj_len = int(rng.integers(2, span // 3 + 1))
    dist_len = obj_len + int(rng.integers(1, span - 2 * obj_len + 1))
    thick = int(rng.integers(2, lateral // 2 + 1))
    lat0 = int(rng.integers(0, lateral - thick + 1))
    span0 = int(rng.integers(0, span - (obj_len + dist_len) + 1))
    obj_first = bool(rng.integers(0, 2))
    if obj_first:
        obj_lo, obj_hi = span0, span0 + obj_len
        dist_lo, dist_hi = obj_hi, obj_hi + dist_len
    else:
        dist_lo, dist_hi = span0, span0 + dist_len
        obj_lo, obj_hi = dist_hi, dist_hi + obj_len
    if horizontal:
        obj = (lat0, obj_lo, lat0 + thick, obj_hi)
        dist = (lat0, dist_lo, lat0 + thick, dist_hi)
    else:
        obj = (obj_lo, lat0, obj_hi, lat0 + thick)
        dist = (dist_lo, lat0, dist_hi, lat0 + thick)
    return obj, dist


def _rect_slices(rect):
    r0, c0, r1, c1 = rect
    return slice(r0, r1), slice(c0, c1)


def _rect_pixel_box(rect, grid: RegionGrid) -> list[int]:
    r0, c0, r1, c1 = rect
    return [
        grid.origin_x + c0 * grid.cell_w,
        grid.origin_y + r0 * grid.cell_h,
        grid.origin_x + c1 * grid.cell_w,
        grid.origin_y + r1 * grid.cell_h,
    ]


def generate(cfg: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write .fmap/.smap files, manifest.json, and the truth.json sidecar;
    the same config always produces a byte-identical output tree."""
    out = Path(out_dir)
    try:
        (out / "fmaps").mkdir(parents=True, exist_ok=True)
        (out / "smaps").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directories under {out}: {exc}") from exc

    rng = np.random.default_rng(cfg.seed)
    classes = cfg.class_ids()
    n_dist = cfg.num_distractor_classes
    block = cfg.feat_dim // (2 * cfg.num_classes + 1)

    p_obj = {}
    p_dist = {}
    for i, cls in enumerate(classes):
        p_obj[cls] = _block_direction(rng, cfg.feat_dim, i * block, (i + 1) * block)
        if i < n_dist:
            lo = (cfg.num_classes + i) * block
            p_dist[cls] = _block_direction(rng, cfg.feat_dim, lo, lo + block)
    p_bg = _block_direction(
        rng, cfg.feat_dim, 2 * cfg.num_classes * block, (2 * cfg.num_classes + 1) * block
    )

    images_doc = []
    truth = {"p_bg": p_bg.tolist(), "classes": {}}
    for cls in classes:
        truth["classes"][cls] = {"p_obj": p_obj[cls].tolist(), "rects": {}}
        if cls in p_dist:
            truth["classes"][cls]["p_dist"] = p_dist[cls].tolist()

    rows, cols = cfg.grid.rows, cfg.grid.cols
    for i, cls in enumerate(classes):
        for j in range(cfg.images_per_class):
            image_id = f"{cls}_im{j:03d}"
            obj_rect, dist_rect = _plant_rects(rng, cfg.grid, with_distractor=cls in p_dist)

            base = np.empty((rows, cols, cfg.feat_dim), dtype=np.float64)
            base[:, :] = p_bg
            base[_rect_slices(obj_rect)] = p_obj[cls]
            if dist_rect is not None:
                base[_rect_slices(dist_rect)] = p_dist[cls]
            noise = rng.normal(0.0, cfg.noise_sigma, size=base.shape)
            values = np.clip(base + noise, 0.0, None).astype(np.float32)

            scores = rng.uniform(0.0, _BG_SCORE_HI, size=(rows, cols))
            osl = _rect_slices(obj_rect)
            scores[osl] = rng.uniform(_RECT_SCORE_LO, _RECT_SCORE_HI, size=scores[osl].shape)
            if dist_rect is not None:
                dsl = _rect_slices(dist_rect)
                scores[dsl] = rng.uniform(_RECT_SCORE_LO, _RECT_SCORE_HI, size=scores[dsl].shape)

            fmap_rel = f"fmaps/{image_id}.fmap"
            smap_rel = f"smaps/{image_id}_{cls}.smap"
            write_feature_map(FeatureMap(grid=cfg.grid, values=values), out / fmap_rel)
            write_score_map(
                ScoreMap(class_id=cls, grid=cfg.grid, scores=scores.astype(np.float32)), out / smap_rel
            )

            images_doc.append(
                {
                    "id": image_id,
                    "fmap": fmap_rel,
                    "smaps": {cls: smap_rel},
                    "labels": [cls],
                    "gt_boxes": {cls: [_rect_pixel_box(obj_rect, cfg.grid)]},
                }
            )
            rects = {"object": list(obj_rect)}
            if dist_rect is not None:
                rects["distractor"] = list(dist_rect)
            truth["classes"][cls]["rects"][image_id] = rects

    manifest_doc = {"classes": classes, "grid": cfg.grid.to_dict(), "images": images_doc}
    try:
        (out / "manifest.json").write_text(
            json.dumps(manifest_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (out / TRUTH_FILENAME).write_text(
            json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(f"cannot write dataset files under {out}: {exc}") from exc
    return load_manifest(out / "manifest.json")


def load_truth(man: DatasetManifest) -> dict:
    path = man.root / TRUTH_FILENAME
    if not path.is_file():
        raise TruthFileMissing(f"no {TRUTH_FILENAME} next to manifest {man.source}")
    return json.loads(path.read_text(encoding="utf-8"))


def oracle_annotation(man: DatasetManifest, model: ClusterModel) -> AnnotationRecord:
    """Stand-in for the human annotator on synthetic data: a cluster is OBJECT
    iff its centroid aligns better with the planted object direction than with
    the planted distractor (or the background, which also counts as one)."""
    truth = load_truth(man)
    entry = truth["classes"].get(model.class_id)
    if entry is None:
        raise TruthFileMissing(f"class {model.class_id!r} absent from {TRUTH_FILENAME}")
    obj_dir = np.array(entry["p_obj"], dtype=np.float64)
    bg_dir = np.array(truth["p_bg"], dtype=np.float64)
    dist_dir = np.array(entry["p_dist"], dtype=np.float64) if "p_dist" in entry else None

    labels = {}
    for i in range(model.k):
        c = model.centroids[i].astype(np.float64)
        distractor_score = float(c @ bg_dir)
        if dist_dir is not None:
            distractor_score = max(distractor_score, float(c @ dist_dir))
        labels[i] = ClusterLabel.OBJECT if float(c @ obj_dir) > distractor_score else ClusterLabel.DISTRACTOR
    return AnnotationRecord(
        class_id=model.class_id,
        labels=labels,
        annotator="oracle",
        timestamp=ORACLE_TIMESTAMP,
    )
