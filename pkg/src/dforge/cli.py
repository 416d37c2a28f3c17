"""Command-line entry point exposing every stage as a subcommand.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline as pipeline_mod
from .datamodel import (
    BBox,
    ClusterParams,
    RegionGrid,
    class_of_model_file,
    load_manifest,
    read_annotation,
    read_cluster_model,
    read_score_map,
    write_cluster_model,
    write_score_map,
    ScoreMap,
)
from .datamodel import read_feature_map
from .errors import DforgeError, NoConvergence
from .heatmap import compute_heatmap
from .localize import evaluate, predict_box
from .pooling import LocalizeParams, build_pool, read_pool, write_pool
from .prioritize import rank_classes, tradeoff_curve
from .refine import refine_dataset, refined_smap_path
from .spectral import cluster
from .synth import SynthConfig, generate

log = logging.getLogger("dforge")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _resolve_seed(flag_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    raw = os.environ.get("DFORGE_SEED", "0")
    try:
        seed = int(raw)
    except ValueError as exc:
        raise DforgeError(f"DFORGE_SEED must be an integer, got {raw!r}") from exc
    if seed < 0:
        raise DforgeError("DFORGE_SEED must be nonnegative")
    return seed


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError as exc:
        raise DforgeError(f"grid must look like 14x14, got {text!r}") from exc


def _cluster_params(args) -> ClusterParams:
    return ClusterParams(rho=args.rho, m=args.min_k, M=args.max_k, seed=_resolve_seed(args.seed))


def _add_cluster_flags(p):
    p.add_argument("--rho", type=float, default=0.7, help="eigenvalue threshold for the cluster count")
    p.add_argument("--min-k", type=int, default=2)
    p.add_argument("--max-k", type=int, default=4)
    p.add_argument("--seed", type=int, default=None, help="default: $DFORGE_SEED or 0")


def cmd_synth(args) -> int:
    rows, cols = _parse_grid(args.grid)
    cfg = SynthConfig(
        num_classes=args.classes,
        distractor_fraction=args.distractor_frac,
        images_per_class=args.images_per_class,
        grid=RegionGrid(rows=rows, cols=cols, cell_h=args.cell_h, cell_w=args.cell_w),
        feat_dim=args.feat_dim,
        noise_sigma=args.noise,
        seed=_resolve_seed(args.seed),
    )
    man = generate(cfg, args.out)
    for class_id in man.classes:
        log.info("stage=synth class=%s images=%d", class_id, len(man.images_with_label(class_id)))
    return 0


def cmd_pool(args) -> int:
    man = load_manifest(args.manifest)
    pool = build_pool(man, args.class_id, LocalizeParams(theta=args.theta))
    write_pool(pool, args.out)
    log.info(
        "stage=pool class=%s images=%d patterns=%d",
        args.class_id, len(man.images_with_label(args.class_id)), len(pool),
    )
    return 0


def cmd_cluster(args) -> int:
    pool = read_pool(args.pool, class_id=args.class_id)
    model = cluster(pool, _cluster_params(args))
    write_cluster_model(model, args.out)
    log.info("stage=cluster class=%s n=%d k=%d lambda2=%.6g", args.class_id, len(pool), model.k, model.lambda2)
    return 0


def cmd_heatmap(args) -> int:
    man = load_manifest(args.manifest)
    model = read_cluster_model(args.model, class_id=args.class_id)
    img = man.image(args.image)
    fm = read_feature_map(img.fmap, grid=man.grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(model.k):
        hm = compute_heatmap(fm, model, i)
        sm = ScoreMap(class_id=args.class_id, grid=hm.grid, scores=hm.values)
        write_score_map(sm, out / f"hm_{args.class_id}_{args.image}_c{i}.smap")
    log.info("stage=heatmap class=%s image=%s clusters=%d", args.class_id, args.image, model.k)
    return 0


def cmd_apply(args) -> int:
    man = load_manifest(args.manifest)
    model = read_cluster_model(args.model, class_id=args.class_id)
    ann = read_annotation(args.annotation)
    summary = refine_dataset(man, args.class_id, model, ann, args.out, LocalizeParams(theta=args.theta))
    log.info(
        "stage=apply class=%s images=%d suppressed=%d",
        args.class_id, summary.images, summary.cells_suppressed,
    )
    return 0


def cmd_bbox(args) -> int:
    man = load_manifest(args.manifest)
    params = LocalizeParams(theta=args.theta)
    boxes = {}
    for img in man.images_with_label(args.class_id):
        path = (
            refined_smap_path(args.scores, img.image_id, args.class_id)
            if args.scores
            else img.smaps[args.class_id]
        )
        sm = read_score_map(path, class_id=args.class_id, grid=man.grid)
        box = predict_box(sm, params)
        boxes[img.image_id] = box.as_list() if box is not None else None
    Path(args.out).write_text(json.dumps(boxes, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    empty = sum(1 for b in boxes.values() if b is None)
    log.info("stage=bbox class=%s boxes=%d empty=%d", args.class_id, len(boxes) - empty, empty)
    return 0


def cmd_eval(args) -> int:
    man = load_manifest(args.manifest)
    doc = json.loads(Path(args.boxes).read_text(encoding="utf-8"))
    predictions = {
        image_id: {args.class_id: (BBox(*box) if box is not None else None)}
        for image_id, box in doc.items()
    }
    report = evaluate(man, predictions, iou_threshold=args.iou_threshold, classes={args.class_id})
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for class_id, st in sorted(report.per_class.items()):
        log.info("stage=eval class=%s images=%d correct=%d accuracy=%.4f", class_id, st.images, st.correct, st.accuracy)
    return 0


def cmd_prioritize(args) -> int:
    models_dir = Path(args.models)
    models = [
        read_cluster_model(p, class_id=class_of_model_file(p))
        for p in sorted(models_dir.glob("*.clus"))
    ]
    if not models:
        raise DforgeError(f"no .clus models found in {models_dir}")
    improvements = json.loads(Path(args.improvements).read_text(encoding="utf-8"))
    ranked = rank_classes(models)
    points = tradeoff_curve(ranked, improvements)
    pipeline_mod.write_curve_csv(Path(args.out), ranked, points)
    for rc in ranked:
        log.info("stage=prioritize class=%s lambda2=%.6g", rc.class_id, rc.lambda2)
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(
        manifest_path=args.manifest,
        models_dir=args.models,
        annotations_dir=args.annotations,
        port=args.port,
        host=args.host,
        ui_dir=args.ui,
    )
    return 0


def cmd_pipeline(args) -> int:
    summary = pipeline_mod.run_pipeline(
        args.manifest,
        args.out,
        annotations_dir=args.annotations,
        oracle=args.oracle,
        cluster_params=_cluster_params(args),
        localize_params=LocalizeParams(theta=args.theta),
        jobs=args.jobs,
    )
    flagged = summary["flagged"]
    log.info(
        "stage=pipeline classes=%d flagged=%d baseline_acc=%.4f refined_acc=%.4f",
        len(summary["classes"]), len(flagged),
        summary["baseline"]["accuracy"], summary["refined"]["accuracy"],
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--distractor-frac", type=float, required=True)
    p.add_argument("--images-per-class", type=int, required=True)
    p.add_argument("--grid", required=True, help="region grid, e.g. 14x14")
    p.add_argument("--feat-dim", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--cell-h", type=int, default=16)
    p.add_argument("--cell-w", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pool", help="build the pattern pool of one class")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class", dest="class_id", required=True)
    p.add_argument("--theta", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("cluster", help="spectrally cluster a pattern pool")
    p.add_argument("--pool", required=True)
    p.add_argument("--class", dest="class_id", required=True)
    _add_cluster_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("heatmap", help="write per-cluster heatmaps for one image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class", dest="class_id", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("apply", help="suppress annotated distractor regions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class", dest="class_id", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--annotation", required=True)
    p.add_argument("--theta", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("bbox", help="largest-component bounding boxes for one class")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores", default=None, help="directory of refined score maps; default: manifest maps")
    p.add_argument("--class", dest="class_id", required=True)
    p.add_argument("--theta", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bbox)

    p = sub.add_parser("eval", help="score predicted boxes against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--boxes", required=True)
    p.add_argument("--class", dest="class_id", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prioritize", help="rank classes by second-smallest eigenvalue")
    p.add_argument("--models", required=True)
    p.add_argument("--improvements", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prioritize)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", default=None, help="directory with the built UI bundle")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("pipeline", help="run all stages end to end")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", default=None)
    p.add_argument("--oracle", action="store_true", help="use the synthetic truth sidecar as annotator")
    p.add_argument("--theta", type=float, default=0.2)
    _add_cluster_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args) or 0
    except NoConvergence as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except (DforgeError, ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
