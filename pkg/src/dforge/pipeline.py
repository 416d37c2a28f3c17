"""End-to-end run: pool -> cluster -> annotate -> suppress -> box -> evaluate."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .datamodel import (
    AnnotationRecord,
    BBox,
    ClusterModel,
    ClusterParams,
    DatasetManifest,
    annotation_filename,
    load_manifest,
    model_filename,
    read_annotation,
    read_score_map,
    write_annotation,
    write_cluster_model,
)
from .errors import EmptyPool, PoolTooSmall
from .localize import evaluate, predict_box
from .pooling import LocalizeParams, build_pool
from .prioritize import RankedClass, rank_classes, tradeoff_curve
from .refine import refine_dataset, refined_smap_path
from .spectral import cluster
from .synth import oracle_annotation

log = logging.getLogger("dforge")

STATUS_OK = "ok"
STATUS_UNCLUSTERABLE = "unclusterable"  # empty or too-small pool: treated as all-object
STATUS_UNANNOTATED = "unannotated"  # model exists but no annotation: baseline passthrough


@dataclass
class ClassOutcome:
    class_id: str
    status: str
    pool_size: int = 0
    model: ClusterModel | None = None
    annotator: str | None = None
    cells_suppressed: int = 0
    baseline_boxes: dict[str, BBox | None] = field(default_factory=dict)
    refined_boxes: dict[str, BBox | None] = field(default_factory=dict)


def _boxes_for_class(man: DatasetManifest, class_id: str, params: LocalizeParams, scores_dir: Path | None):
    boxes: dict[str, BBox | None] = {}
    for img in man.images_with_label(class_id):
        path = refined_smap_path(scores_dir, img.image_id, class_id) if scores_dir else img.smaps[class_id]
        sm = read_score_map(path, class_id=class_id, grid=man.grid)
        boxes[img.image_id] = predict_box(sm, params)
    return boxes


def _load_annotation(annotations_dir: Path | None, class_id: str) -> AnnotationRecord | None:
    if annotations_dir is None:
        return None
    path = annotations_dir / annotation_filename(class_id)
    return read_annotation(path) if path.is_file() else None


def _process_class(
    man: DatasetManifest,
    class_id: str,
    out: Path,
    cluster_params: ClusterParams,
    loc_params: LocalizeParams,
    annotations_dir: Path | None,
    oracle: bool,
) -> ClassOutcome:
    baseline = _boxes_for_class(man, class_id, loc_params, scores_dir=None)

    try:
        pool = build_pool(man, class_id, loc_params)
    except EmptyPool:
        log.info("stage=pool class=%s patterns=0 status=%s", class_id, STATUS_UNCLUSTERABLE)
        return ClassOutcome(class_id, STATUS_UNCLUSTERABLE, baseline_boxes=baseline, refined_boxes=dict(baseline))
    log.info("stage=pool class=%s patterns=%d", class_id, len(pool))

    try:
        model = cluster(pool, cluster_params)
    except PoolTooSmall:
        log.info("stage=cluster class=%s n=%d status=%s", class_id, len(pool), STATUS_UNCLUSTERABLE)
        return ClassOutcome(
            class_id, STATUS_UNCLUSTERABLE, pool_size=len(pool), baseline_boxes=baseline, refined_boxes=dict(baseline)
        )
    write_cluster_model(model, out / "models" / model_filename(class_id))
    log.info(
        "stage=cluster class=%s n=%d k=%d lambda2=%.6g", class_id, len(pool), model.k, model.lambda2
    )

    if oracle:
        ann = oracle_annotation(man, model)
        write_annotation(ann, out / "annotations" / annotation_filename(class_id))
    else:
        ann = _load_annotation(annotations_dir, class_id)
        if ann is not None:
            ann.validate_for(model)
    if ann is None:
        log.info("stage=apply class=%s status=%s", class_id, STATUS_UNANNOTATED)
        return ClassOutcome(
            class_id,
            STATUS_UNANNOTATED,
            pool_size=len(pool),
            model=model,
            baseline_boxes=baseline,
            refined_boxes=dict(baseline),
        )

    summary = refine_dataset(man, class_id, model, ann, out / "refined", loc_params)
    log.info(
        "stage=apply class=%s images=%d suppressed=%d", class_id, summary.images, summary.cells_suppressed
    )
    refined = _boxes_for_class(man, class_id, loc_params, scores_dir=out / "refined")
    return ClassOutcome(
        class_id,
        STATUS_OK,
        pool_size=len(pool),
        model=model,
        annotator=ann.annotator,
        cells_suppressed=summary.cells_suppressed,
        baseline_boxes=baseline,
        refined_boxes=refined,
    )


def _gt_predictions(man: DatasetManifest, outcomes: dict[str, ClassOutcome], which: str):
    """Predictions restricted to (image, class) pairs that carry ground truth."""
    preds: dict[str, dict[str, BBox | None]] = {}
    for class_id, oc in outcomes.items():
        boxes = oc.baseline_boxes if which == "baseline" else oc.refined_boxes
        for image_id, box in boxes.items():
            if class_id in man.image(image_id).gt_boxes:
                preds.setdefault(image_id, {})[class_id] = box
    return preds


def _boxes_doc(boxes: dict[str, BBox | None]) -> dict:
    return {img: (b.as_list() if b is not None else None) for img, b in sorted(boxes.items())}


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_curve_csv(path: Path, ranked: list[RankedClass], points: list[tuple[float, float]]) -> None:
    lines = ["fraction_annotated,fraction_improvement,class_id,lambda2"]
    lines.append(f"{points[0][0]},{points[0][1]},,")
    for rc, (x, y) in zip(ranked, points[1:]):
        lines.append(f"{x},{y},{rc.class_id},{rc.lambda2}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_pipeline(
    manifest_path: str | Path,
    out_dir: str | Path,
    *,
    annotations_dir: str | Path | None = None,
    oracle: bool = False,
    cluster_params: ClusterParams = ClusterParams(),
    localize_params: LocalizeParams = LocalizeParams(),
    jobs: int = 1,
) -> dict:
    """Run every stage over every class and write the full output tree.

    Classes without a usable pool or without an annotation fall back to the
    baseline (no suppression) and are flagged in the returned summary.
    """
    man = load_manifest(manifest_path)
    out = Path(out_dir)
    for sub in ("models", "annotations", "refined", "boxes"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    annotations_dir = Path(annotations_dir) if annotations_dir is not None else None

    def work(class_id: str) -> ClassOutcome:
        return _process_class(man, class_id, out, cluster_params, localize_params, annotations_dir, oracle)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, man.classes))
    else:
        results = [work(c) for c in man.classes]
    outcomes = {oc.class_id: oc for oc in results}

    for class_id, oc in outcomes.items():
        _write_json(out / "boxes" / f"baseline_{class_id}.json", _boxes_doc(oc.baseline_boxes))
        _write_json(out / "boxes" / f"refined_{class_id}.json", _boxes_doc(oc.refined_boxes))

    report_baseline = evaluate(man, _gt_predictions(man, outcomes, "baseline"))
    report_refined = evaluate(man, _gt_predictions(man, outcomes, "refined"))
    _write_json(out / "report_baseline.json", report_baseline.to_dict())
    _write_json(out / "report_refined.json", report_refined.to_dict())
    for class_id in man.classes:
        b = report_baseline.per_class.get(class_id)
        r = report_refined.per_class.get(class_id)
        if b is not None and r is not None:
            log.info(
                "stage=eval class=%s images=%d baseline_acc=%.4f refined_acc=%.4f",
                class_id, b.images, b.accuracy, r.accuracy,
            )

    improvements = {}
    for class_id, oc in outcomes.items():
        if oc.model is None:
            continue
        b = report_baseline.per_class.get(class_id)
        r = report_refined.per_class.get(class_id)
        improvements[class_id] = (r.accuracy - b.accuracy) if (b and r) else 0.0
    _write_json(out / "improvements.json", improvements)

    ranked = rank_classes([oc.model for oc in results if oc.model is not None])
    if ranked:
        points = tradeoff_curve(ranked, improvements)
        write_curve_csv(out / "curve.csv", ranked, points)
        for rc in ranked:
            log.info("stage=prioritize class=%s lambda2=%.6g", rc.class_id, rc.lambda2)

    summary = {
        "classes": {
            oc.class_id: {
                "status": oc.status,
                "pool_size": oc.pool_size,
                "k": oc.model.k if oc.model else None,
                "lambda2": oc.model.lambda2 if oc.model else None,
                "cells_suppressed": oc.cells_suppressed,
                "annotator": oc.annotator,
            }
            for oc in results
        },
        "flagged": sorted(oc.class_id for oc in results if oc.status != STATUS_OK),
        "baseline": report_baseline.overall.to_dict(),
        "refined": report_refined.overall.to_dict(),
    }
    _write_json(out / "summary.json", summary)
    return summary
