"""HTTP service for the annotation UI: serves per-cluster heatmaps as raw
matrices and persists one object/distractor record per class.

Stateless apart from the annotations directory; writes are atomic and
serialized per class, with optimistic versioning (stale writers get 409).
"""

from __future__ import annotations

import math
import threading
import zlib
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import FileResponse, RedirectResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .datamodel import (
    AnnotationRecord,
    ClusterLabel,
    ClusterModel,
    DatasetManifest,
    annotation_filename,
    class_of_model_file,
    load_manifest,
    read_annotation,
    read_cluster_model,
    read_feature_map,
    read_score_map,
    write_annotation,
)
from .errors import DforgeError
from .heatmap import SAMPLE_COUNT, compute_heatmap, sample_visualization_images

LABEL_VALUES = {label.value for label in ClusterLabel}


class AnnotationBody(BaseModel):
    labels: dict[str, str]
    annotator: str = "anonymous"
    version: int = 0


def _sample_seed(class_id: str) -> int:
    # stable across processes so annotators always see the same examples
    return zlib.crc32(class_id.encode("utf-8"))


def _matrix(arr: np.ndarray) -> list[list[float | None]]:
    return [[None if math.isinf(x) else x for x in row] for row in arr.astype(float).tolist()]


def create_app(
    manifest_path: str | Path,
    models_dir: str | Path,
    annotations_dir: str | Path,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    man: DatasetManifest = load_manifest(manifest_path)
    models_dir = Path(models_dir)
    annotations_dir = Path(annotations_dir)
    annotations_dir.mkdir(parents=True, exist_ok=True)

    models: dict[str, ClusterModel] = {}
    for p in sorted(models_dir.glob("*.clus")):
        class_id = class_of_model_file(p)
        if class_id in man.classes:
            models[class_id] = read_cluster_model(p, class_id=class_id)
    if not models:
        raise DforgeError(f"no cluster models found in {models_dir}")

    heatmap_cache: dict[tuple[str, str], dict] = {}
    cache_lock = threading.Lock()
    # dict.setdefault is atomic under the GIL, so two concurrent writers for
    # the same class always end up serializing on the same lock
    class_locks: dict[str, threading.Lock] = {}

    app = FastAPI(title="dforge annotation service")

    def current_annotation(class_id: str) -> AnnotationRecord | None:
        path = annotations_dir / annotation_filename(class_id)
        return read_annotation(path) if path.is_file() else None

    def get_model(class_id: str) -> ClusterModel:
        model = models.get(class_id)
        if model is None:
            raise HTTPException(status_code=404, detail=f"unknown class {class_id!r}")
        return model

    @app.get("/api/classes")
    def list_classes():
        out = []
        for class_id, model in models.items():
            rec = current_annotation(class_id)
            out.append(
                {
                    "class": class_id,
                    "k": model.k,
                    "lambda2": model.lambda2,
                    "annotated": rec is not None,
                    "version": rec.version if rec is not None else 0,
                }
            )
        out.sort(key=lambda entry: (entry["lambda2"], entry["class"]))
        return out

    @app.get("/api/classes/{class_id}")
    def class_detail(class_id: str):
        model = get_model(class_id)
        return {
            "class": class_id,
            "clusters": [{"index": i, "size": int(model.sizes[i])} for i in range(model.k)],
            "sample_images": sample_visualization_images(man, class_id, SAMPLE_COUNT, seed=_sample_seed(class_id)),
            "eigenvalues": model.eigenvalues.tolist(),
        }

    @app.get("/api/classes/{class_id}/images/{image_id}/heatmaps")
    def image_heatmaps(class_id: str, image_id: str):
        model = get_model(class_id)
        try:
            img = man.image(image_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        if class_id not in img.smaps:
            raise HTTPException(status_code=404, detail=f"image {image_id!r} has no scores for {class_id!r}")
        key = (class_id, image_id)
        with cache_lock:
            payload = heatmap_cache.get(key)
        if payload is None:
            fm = read_feature_map(img.fmap, grid=man.grid)
            sm = read_score_map(img.smaps[class_id], class_id=class_id, grid=man.grid)
            payload = {
                "base_scores": _matrix(sm.scores),
                "heatmaps": {str(i): _matrix(compute_heatmap(fm, model, i).values) for i in range(model.k)},
                "grid": man.grid.to_dict(),
            }
            with cache_lock:
                heatmap_cache[key] = payload
        response = dict(payload)
        if img.image is not None:
            response["image_url"] = f"/static/images/{image_id}"
        return response

    @app.post("/api/classes/{class_id}/annotation", status_code=204)
    def post_annotation(class_id: str, body: AnnotationBody):
        model = get_model(class_id)
        try:
            indices = {int(i) for i in body.labels}
        except ValueError:
            raise HTTPException(
                status_code=422,
                detail={"field": "labels", "message": "cluster indices must be integers"},
            )
        expected = set(range(model.k))
        if indices != expected:
            raise HTTPException(
                status_code=422,
                detail={
                    "field": "labels",
                    "message": f"labels must cover exactly clusters {sorted(expected)}, got {sorted(indices)}",
                },
            )
        bad = sorted(v for v in body.labels.values() if v not in LABEL_VALUES)
        if bad:
            raise HTTPException(
                status_code=422,
                detail={"field": "labels", "message": f"labels must be 'object' or 'distractor', got {bad}"},
            )
        with class_locks.setdefault(class_id, threading.Lock()):
            rec = current_annotation(class_id)
            current_version = rec.version if rec is not None else 0
            if body.version != current_version:
                raise HTTPException(
                    status_code=409,
                    detail={"message": "annotation changed concurrently", "current_version": current_version},
                )
            new_rec = AnnotationRecord(
                class_id=class_id,
                labels={int(i): ClusterLabel(v) for i, v in body.labels.items()},
                annotator=body.annotator,
                timestamp=datetime.now(timezone.utc),
                version=current_version + 1,
            )
            write_annotation(new_rec, annotations_dir / annotation_filename(class_id))
        return Response(status_code=204)

    @app.get("/api/annotations")
    def export_annotations():
        out = []
        for path in sorted(annotations_dir.glob("ann_*.json")):
            rec = read_annotation(path)
            out.append(
                {
                    "class": rec.class_id,
                    "labels": {str(i): rec.labels[i].value for i in sorted(rec.labels)},
                    "annotator": rec.annotator,
                    "timestamp": rec.timestamp.isoformat(),
                    "version": rec.version,
                }
            )
        return out

    @app.get("/static/images/{image_id}")
    def display_image(image_id: str):
        try:
            img = man.image(image_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        if img.image is None:
            raise HTTPException(status_code=404, detail=f"image {image_id!r} has no display file")
        return FileResponse(img.image)

    if ui_dir is not None:
        app.mount("/static", StaticFiles(directory=str(ui_dir), html=True), name="static")

        @app.get("/")
        def index():
            return RedirectResponse(url="/static/")

    return app


def serve(
    manifest_path: str | Path,
    models_dir: str | Path,
    annotations_dir: str | Path,
    port: int = 8000,
    host: str = "127.0.0.1",
    ui_dir: str | Path | None = None,
) -> None:
    import uvicorn

    app = create_app(manifest_path, models_dir, annotations_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
