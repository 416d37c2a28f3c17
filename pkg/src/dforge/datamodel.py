"""Shared domain types, binary tensor file formats, and the dataset manifest.

All binary payloads are little-endian IEEE-754 float32, row-major
(row, col, channel). Suppressed score cells carry IEEE negative infinity.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    ClassMismatch,
    DuplicateImageId,
    FileFormatError,
    IncompleteAnnotation,
    IoFailure,
    MissingFile,
    NegativeValue,
    NonFiniteValue,
    SchemaError,
    TruncatedFile,
)

NEG_INF = float("-inf")

FMAP_MAGIC = b"MAFM"
SMAP_MAGIC = b"MASM"
CLUS_MAGIC = b"MACL"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True, order=True)
class BBox:
    """Half-open pixel rectangle [x_min, x_max) x [y_min, y_max)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError(f"degenerate box {self.as_list()}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class RegionGrid:
    """Fixed partition of an image into rectangular cells."""

    rows: int
    cols: int
    cell_h: int
    cell_w: int
    origin_y: int = 0
    origin_x: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must have at least one cell, got {self.rows}x{self.cols}")
        if self.cell_h < 1 or self.cell_w < 1:
            raise ValueError(f"cell size must be positive, got {self.cell_h}x{self.cell_w}")

    def region_rect(self, row: int, col: int) -> BBox:
        """Pixel rectangle of region (row, col)."""
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise IndexError(f"region ({row},{col}) outside {self.rows}x{self.cols} grid")
        return BBox(
            x_min=self.origin_x + col * self.cell_w,
            y_min=self.origin_y + row * self.cell_h,
            x_max=self.origin_x + (col + 1) * self.cell_w,
            y_max=self.origin_y + (row + 1) * self.cell_h,
        )

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "cell_h": self.cell_h,
            "cell_w": self.cell_w,
            "origin_y": self.origin_y,
            "origin_x": self.origin_x,
        }


def _unit_grid(rows: int, cols: int) -> RegionGrid:
    return RegionGrid(rows=rows, cols=cols, cell_h=1, cell_w=1)


# ---------------------------------------------------------------------------
# tensors


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-image grid of nonnegative mid-level feature vectors."""

    grid: RegionGrid
    values: np.ndarray  # rows x cols x feat_dim, float32, >= 0, finite

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ValueError(f"feature tensor must be 3-d, got shape {v.shape}")
        if v.shape[:2] != (self.grid.rows, self.grid.cols):
            raise ValueError(f"tensor shape {v.shape[:2]} does not match grid {self.grid.rows}x{self.grid.cols}")
        if not np.isfinite(v).all():
            raise ValueError("feature tensor contains NaN or infinity")
        if (v < 0).any():
            raise ValueError("feature tensor contains negative entries")
        object.__setattr__(self, "values", v)

    @property
    def feat_dim(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other):
        return (
            isinstance(other, FeatureMap)
            and self.grid == other.grid
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """Per-image, per-class localization scores; -inf marks suppressed cells."""

    class_id: str
    grid: RegionGrid
    scores: np.ndarray  # rows x cols, float32

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float32)
        if s.shape != (self.grid.rows, self.grid.cols):
            raise ValueError(f"score shape {s.shape} does not match grid {self.grid.rows}x{self.grid.cols}")
        if np.isnan(s).any():
            raise ValueError("score map contains NaN")
        if (s == np.inf).any():
            raise ValueError("score map contains +inf")
        object.__setattr__(self, "scores", s)

    def __eq__(self, other):
        return (
            isinstance(other, ScoreMap)
            and self.class_id == other.class_id
            and self.grid == other.grid
            and np.array_equal(self.scores, other.scores)
        )


# ---------------------------------------------------------------------------
# patterns


def unit_vector_f32(vec: np.ndarray) -> np.ndarray:
    """Normalize to unit L2 norm and round to float32, re-normalizing once so
    the stored float32 vector itself has |norm - 1| well below 1e-6."""
    v = np.asarray(vec, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize a zero vector")
    v32 = (v / n).astype(np.float32)
    n2 = np.linalg.norm(v32.astype(np.float64))
    if abs(n2 - 1.0) > 5e-8:
        v32 = (v32.astype(np.float64) / n2).astype(np.float32)
    return v32


@dataclass(frozen=True, eq=False)
class Pattern:
    """L2-normalized nonnegative feature vector of one image region."""

    vec: np.ndarray  # float32, unit norm, >= 0
    image_id: str
    region: tuple[int, int]  # (row, col)

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=np.float32)
        if v.ndim != 1:
            raise ValueError("pattern vector must be 1-d")
        if not np.isfinite(v).all() or (v < 0).any():
            raise ValueError("pattern entries must be finite and nonnegative")
        n = np.linalg.norm(v.astype(np.float64))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"pattern norm {n} deviates from 1 by more than 1e-6")
        object.__setattr__(self, "vec", v)
        object.__setattr__(self, "region", (int(self.region[0]), int(self.region[1])))

    @property
    def sort_key(self) -> tuple[str, int, int]:
        return (self.image_id, self.region[0], self.region[1])


@dataclass(frozen=True, eq=False)
class PatternPool:
    """All normalized patterns of predicted-foreground regions for one class.

    Backed by flat arrays so pools with 1e5+ patterns stay cheap; `patterns`
    materializes Pattern objects on demand.
    """

    class_id: str
    source: str
    image_ids: tuple[str, ...]
    regions: np.ndarray  # (n, 2) int64 (row, col)
    vectors: np.ndarray  # (n, feat_dim) float32, unit rows, >= 0

    def __post_init__(self):
        vecs = np.asarray(self.vectors, dtype=np.float32)
        regs = np.asarray(self.regions, dtype=np.int64)
        n = vecs.shape[0]
        if vecs.ndim != 2:
            raise ValueError("pool vectors must be a 2-d array")
        if regs.shape != (n, 2) or len(self.image_ids) != n:
            raise ValueError("pool metadata lengths disagree with vector count")
        if n:
            if not np.isfinite(vecs).all() or (vecs < 0).any():
                raise ValueError("pool vectors must be finite and nonnegative")
            norms = np.linalg.norm(vecs.astype(np.float64), axis=1)
            worst = np.abs(norms - 1.0).max()
            if worst > 1e-6:
                raise ValueError(f"pool vector norm deviates from 1 by {worst}")
            keys = list(zip(self.image_ids, regs[:, 0].tolist(), regs[:, 1].tolist()))
            if any(keys[i] > keys[i + 1] for i in range(n - 1)):
                raise ValueError("pool must be sorted by (image_id, row, col)")
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "regions", regs)
        object.__setattr__(self, "image_ids", tuple(self.image_ids))

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.vectors.shape[1]

    def pattern(self, i: int) -> Pattern:
        return Pattern(vec=self.vectors[i], image_id=self.image_ids[i], region=(self.regions[i, 0], self.regions[i, 1]))

    @property
    def patterns(self) -> list[Pattern]:
        return [self.pattern(i) for i in range(len(self))]

    @classmethod
    def from_patterns(cls, class_id: str, patterns: list[Pattern], source: str) -> "PatternPool":
        ordered = sorted(patterns, key=lambda p: p.sort_key)
        if ordered:
            vecs = np.stack([p.vec for p in ordered]).astype(np.float32)
            regs = np.array([p.region for p in ordered], dtype=np.int64)
        else:
            vecs = np.zeros((0, 0), dtype=np.float32)
            regs = np.zeros((0, 2), dtype=np.int64)
        return cls(
            class_id=class_id,
            source=source,
            image_ids=tuple(p.image_id for p in ordered),
            regions=regs,
            vectors=vecs,
        )

    def __eq__(self, other):
        return (
            isinstance(other, PatternPool)
            and self.class_id == other.class_id
            and self.image_ids == other.image_ids
            and np.array_equal(self.regions, other.regions)
            and np.array_equal(self.vectors, other.vectors)
        )


# ---------------------------------------------------------------------------
# clustering results


@dataclass(frozen=True)
class ClusterParams:
    """Spectral clustering knobs; defaults follow the standard recipe."""

    rho: float = 0.7  # eigenvalue threshold for the cluster count
    m: int = 2  # lower bound on k
    M: int = 4  # upper bound on k
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 300
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.rho < 2):
            raise ValueError(f"rho must lie in (0, 2), got {self.rho}")
        if not (1 <= self.m <= self.M):
            raise ValueError(f"need 1 <= m <= M, got m={self.m}, M={self.M}")
        if self.kmeans_restarts < 1 or self.kmeans_max_iter < 1:
            raise ValueError("kmeans_restarts and kmeans_max_iter must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


EIGENVALUE_SLACK = 1e-8


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Clustering of one class's pattern pool.

    `centroids[i]` is the arithmetic mean (not renormalized) of the patterns
    assigned to cluster i; clusters are numbered by descending size.
    """

    class_id: str
    k: int
    eigenvalues: np.ndarray  # float64, ascending, len <= params.M
    centroids: np.ndarray  # (k, feat_dim) float32
    sizes: np.ndarray  # (k,) int64
    assignments: np.ndarray  # (n,) int32, aligned with pool order
    params: ClusterParams | None = None  # None when loaded from disk

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=np.float64)
        cen = np.asarray(self.centroids, dtype=np.float32)
        sizes = np.asarray(self.sizes, dtype=np.int64)
        asg = np.asarray(self.assignments, dtype=np.int32)
        if self.k < 1 or cen.shape[0] != self.k or sizes.shape != (self.k,):
            raise ValueError("inconsistent cluster count")
        if self.params is not None and not (self.params.m <= self.k <= self.params.M):
            raise ValueError(f"k={self.k} outside [{self.params.m}, {self.params.M}]")
        if ev.ndim != 1 or ev.size < 1:
            raise ValueError("eigenvalues must be a non-empty 1-d array")
        if (np.diff(ev) < -1e-12).any():
            raise ValueError("eigenvalues must be ascending")
        if ev[0] > 1e-6:
            raise ValueError(f"smallest eigenvalue {ev[0]} exceeds the 1e-6 zero-mode bound")
        if ev.min() < -EIGENVALUE_SLACK or ev.max() > 2 + EIGENVALUE_SLACK:
            raise ValueError("eigenvalues outside [0, 2] beyond slack")
        counts = np.bincount(asg, minlength=self.k) if asg.size else np.zeros(self.k, dtype=np.int64)
        if asg.size and (asg.min() < 0 or asg.max() >= self.k):
            raise ValueError("assignment index out of range")
        if not np.array_equal(counts, sizes):
            raise ValueError("sizes do not match assignment counts")
        if (sizes < 1).any():
            raise ValueError("every cluster must have at least one member")
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "centroids", cen)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "assignments", asg)

    @property
    def n_patterns(self) -> int:
        return int(self.assignments.shape[0])

    @property
    def feat_dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def lambda2(self) -> float:
        if self.eigenvalues.size < 2:
            raise ValueError("model has fewer than 2 eigenvalues")
        return float(self.eigenvalues[1])

    def __eq__(self, other):
        return (
            isinstance(other, ClusterModel)
            and self.class_id == other.class_id
            and self.k == other.k
            and np.array_equal(self.eigenvalues, other.eigenvalues)
            and np.array_equal(self.centroids, other.centroids)
            and np.array_equal(self.sizes, other.sizes)
            and np.array_equal(self.assignments, other.assignments)
        )


# ---------------------------------------------------------------------------
# annotation


class ClusterLabel(str, Enum):
    OBJECT = "object"
    DISTRACTOR = "distractor"


@dataclass(frozen=True)
class AnnotationRecord:
    """Human (or oracle) object/distractor label per cluster of one class."""

    class_id: str
    labels: dict[int, ClusterLabel]
    annotator: str
    timestamp: datetime
    version: int = 1

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise ValueError("annotation timestamp must be timezone-aware")
        object.__setattr__(self, "labels", {int(i): ClusterLabel(v) for i, v in self.labels.items()})

    def validate_for(self, model: ClusterModel) -> None:
        """Check the record covers exactly the model's clusters."""
        if self.class_id != model.class_id:
            raise ClassMismatch(f"annotation is for {self.class_id!r}, model for {model.class_id!r}")
        expected = set(range(model.k))
        got = set(self.labels)
        if got != expected:
            raise IncompleteAnnotation(
                f"annotation for {self.class_id!r} labels clusters {sorted(got)}, expected {sorted(expected)}"
            )

    def all_object(self) -> bool:
        return all(v == ClusterLabel.OBJECT for v in self.labels.values())


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestImage:
    image_id: str
    fmap: Path
    smaps: dict[str, Path]  # class -> score-map path
    labels: tuple[str, ...]
    image: Path | None = None  # optional display image, passed through opaquely
    gt_boxes: dict[str, tuple[BBox, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetManifest:
    """Ties images, features, scores, and ground truth together."""

    classes: tuple[str, ...]
    grid: RegionGrid
    images: tuple[ManifestImage, ...]
    root: Path  # directory of the manifest file; relative paths resolve here
    source: str  # path the manifest was loaded from

    def images_with_label(self, class_id: str) -> list[ManifestImage]:
        return [img for img in self.images if class_id in img.labels]

    def image(self, image_id: str) -> ManifestImage:
        for img in self.images:
            if img.image_id == image_id:
                return img
        raise KeyError(image_id)


def _require(cond: bool, fieldname: str, message: str) -> None:
    if not cond:
        raise SchemaError(f"manifest field {fieldname!r}: {message}")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and fully validate a JSON dataset manifest."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise MissingFile(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest {path} is not valid JSON: {exc}") from exc

    root = path.parent
    _require(isinstance(doc, dict), "<root>", "must be a JSON object")
    _require(isinstance(doc.get("classes"), list) and doc["classes"], "classes", "must be a non-empty list")
    classes = []
    for i, c in enumerate(doc["classes"]):
        _require(isinstance(c, str) and c, f"classes[{i}]", "must be a non-empty string")
        classes.append(c)
    _require(len(set(classes)) == len(classes), "classes", "must be unique")

    g = doc.get("grid")
    _require(isinstance(g, dict), "grid", "must be an object")
    for key in ("rows", "cols", "cell_h", "cell_w", "origin_y", "origin_x"):
        _require(isinstance(g.get(key), int), f"grid.{key}", "must be an integer")
    try:
        grid = RegionGrid(**{k: g[k] for k in ("rows", "cols", "cell_h", "cell_w", "origin_y", "origin_x")})
    except ValueError as exc:
        raise SchemaError(f"manifest field 'grid': {exc}") from exc

    _require(isinstance(doc.get("images"), list), "images", "must be a list")
    images: list[ManifestImage] = []
    seen_ids: set[str] = set()
    class_set = set(classes)
    for i, entry in enumerate(doc["images"]):
        where = f"images[{i}]"
        _require(isinstance(entry, dict), where, "must be an object")
        img_id = entry.get("id")
        _require(isinstance(img_id, str) and img_id, f"{where}.id", "must be a non-empty string")
        if img_id in seen_ids:
            raise DuplicateImageId(f"image id {img_id!r} appears more than once")
        seen_ids.add(img_id)

        _require(isinstance(entry.get("fmap"), str), f"{where}.fmap", "must be a path string")
        fmap = root / entry["fmap"]

        smaps_doc = entry.get("smaps")
        _require(isinstance(smaps_doc, dict), f"{where}.smaps", "must be an object mapping class to path")
        smaps: dict[str, Path] = {}
        for cls, p in smaps_doc.items():
            _require(cls in class_set, f"{where}.smaps.{cls}", "class not listed in 'classes'")
            _require(isinstance(p, str), f"{where}.smaps.{cls}", "must be a path string")
            smaps[cls] = root / p

        labels_doc = entry.get("labels")
        _require(isinstance(labels_doc, list), f"{where}.labels", "must be a list of classes")
        for cls in labels_doc:
            _require(cls in class_set, f"{where}.labels", f"unknown class {cls!r}")
            _require(cls in smaps, f"{where}.labels", f"label {cls!r} has no score map")

        image_path = None
        if "image" in entry and entry["image"] is not None:
            _require(isinstance(entry["image"], str), f"{where}.image", "must be a path string")
            image_path = root / entry["image"]

        gt: dict[str, tuple[BBox, ...]] = {}
        gt_doc = entry.get("gt_boxes", {})
        _require(isinstance(gt_doc, dict), f"{where}.gt_boxes", "must be an object")
        for cls, boxes in gt_doc.items():
            _require(cls in class_set, f"{where}.gt_boxes.{cls}", "ground-truth class not listed in 'classes'")
            _require(isinstance(boxes, list) and boxes, f"{where}.gt_boxes.{cls}", "must be a non-empty list")
            parsed = []
            for j, b in enumerate(boxes):
                _require(
                    isinstance(b, list) and len(b) == 4 and all(isinstance(x, (int, float)) for x in b),
                    f"{where}.gt_boxes.{cls}[{j}]",
                    "must be [x_min, y_min, x_max, y_max]",
                )
                try:
                    parsed.append(BBox(*[int(x) for x in b]))
                except ValueError as exc:
                    raise SchemaError(f"manifest field {where}.gt_boxes.{cls}[{j}]: {exc}") from exc
            gt[cls] = tuple(parsed)

        for p in [fmap, *smaps.values()] + ([image_path] if image_path else []):
            if not p.is_file():
                raise MissingFile(f"manifest references missing file {p}")

        images.append(
            ManifestImage(
                image_id=img_id,
                fmap=fmap,
                smaps=smaps,
                labels=tuple(labels_doc),
                image=image_path,
                gt_boxes=gt,
            )
        )

    return DatasetManifest(
        classes=tuple(classes),
        grid=grid,
        images=tuple(images),
        root=root,
        source=str(path),
    )


# ---------------------------------------------------------------------------
# binary file IO


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"file ends inside {what}", offset=len(self.data))
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def expect_magic(self, magic: bytes) -> None:
        got = self.take(4, "magic")
        if got != magic:
            raise BadMagic(f"expected magic {magic!r}, found {got!r}", offset=0)

    def expect_version(self, expected: int = FORMAT_VERSION) -> None:
        at = self.pos
        got = self.u32("version")
        if got != expected:
            raise BadVersion(f"unsupported format version {got}", offset=at)

    def floats(self, count: int, what: str, dtype: str = "<f4") -> np.ndarray:
        width = np.dtype(dtype).itemsize
        raw = self.take(count * width, what)
        return np.frombuffer(raw, dtype=dtype).copy()

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FileFormatError(f"{len(self.data) - self.pos} trailing bytes after payload", offset=self.pos)


def _read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_bytes(path: str | Path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _check_payload(values: np.ndarray, payload_start: int, *, allow_neg_inf: bool, forbid_negative: bool) -> None:
    """Validate a float32 payload, reporting the byte offset of the first bad value."""
    finite = np.isfinite(values)
    if allow_neg_inf:
        bad = ~finite & ~(values == -np.inf)
    else:
        bad = ~finite
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise NonFiniteValue(f"non-finite value {values[idx]!r} at element {idx}", offset=payload_start + 4 * idx)
    if forbid_negative and (values < 0).any():
        idx = int(np.flatnonzero(values < 0)[0])
        raise NegativeValue(f"negative value {values[idx]!r} at element {idx}", offset=payload_start + 4 * idx)


def write_feature_map(fm: FeatureMap, path: str | Path) -> None:
    header = FMAP_MAGIC + struct.pack("<IIII", FORMAT_VERSION, fm.grid.rows, fm.grid.cols, fm.feat_dim)
    _write_bytes(path, header + fm.values.astype("<f4").tobytes(order="C"))


def read_feature_map(path: str | Path, grid: RegionGrid | None = None) -> FeatureMap:
    """Decode a .fmap file. The format stores only the grid shape; pass the
    manifest grid to recover cell geometry, else unit cells are assumed."""
    r = _Reader(_read_bytes(path))
    r.expect_magic(FMAP_MAGIC)
    r.expect_version()
    rows, cols, dim = r.u32("rows"), r.u32("cols"), r.u32("feat_dim")
    payload_start = r.pos
    values = r.floats(rows * cols * dim, "feature payload")
    r.done()
    _check_payload(values, payload_start, allow_neg_inf=False, forbid_negative=True)
    if grid is None:
        grid = _unit_grid(rows, cols)
    elif (grid.rows, grid.cols) != (rows, cols):
        raise ValueError(f"file is {rows}x{cols} but grid says {grid.rows}x{grid.cols}")
    return FeatureMap(grid=grid, values=values.reshape(rows, cols, dim))


def write_score_map(sm: ScoreMap, path: str | Path) -> None:
    header = SMAP_MAGIC + struct.pack("<III", FORMAT_VERSION, sm.grid.rows, sm.grid.cols)
    _write_bytes(path, header + sm.scores.astype("<f4").tobytes(order="C"))


def read_score_map(path: str | Path, class_id: str = "", grid: RegionGrid | None = None) -> ScoreMap:
    """Decode a .smap file; class identity and cell geometry come from the caller."""
    r = _Reader(_read_bytes(path))
    r.expect_magic(SMAP_MAGIC)
    r.expect_version()
    rows, cols = r.u32("rows"), r.u32("cols")
    payload_start = r.pos
    scores = r.floats(rows * cols, "score payload")
    r.done()
    _check_payload(scores, payload_start, allow_neg_inf=True, forbid_negative=False)
    if grid is None:
        grid = _unit_grid(rows, cols)
    elif (grid.rows, grid.cols) != (rows, cols):
        raise ValueError(f"file is {rows}x{cols} but grid says {grid.rows}x{grid.cols}")
    return ScoreMap(class_id=class_id, grid=grid, scores=scores.reshape(rows, cols))


def write_cluster_model(model: ClusterModel, path: str | Path) -> None:
    n_eig = model.eigenvalues.size
    header = CLUS_MAGIC + struct.pack(
        "<IIIIQ", FORMAT_VERSION, model.feat_dim, model.k, n_eig, model.n_patterns
    )
    body = (
        model.eigenvalues.astype("<f8").tobytes()
        + model.centroids.astype("<f4").tobytes(order="C")
        + model.sizes.astype("<u8").tobytes()
        + model.assignments.astype("<u4").tobytes()
    )
    _write_bytes(path, header + body)


def read_cluster_model(path: str | Path, class_id: str = "") -> ClusterModel:
    """Decode a .clus file. The format does not persist the class id or the
    clustering parameters; the class comes from the caller (or file naming)."""
    r = _Reader(_read_bytes(path))
    r.expect_magic(CLUS_MAGIC)
    r.expect_version()
    feat_dim, k, n_eig = r.u32("feat_dim"), r.u32("k"), r.u32("eigenvalue count")
    n = r.u64("pattern count")
    eigenvalues = r.floats(n_eig, "eigenvalues", dtype="<f8")
    centroids = r.floats(k * feat_dim, "centroids").reshape(k, feat_dim)
    sizes = np.frombuffer(r.take(8 * k, "sizes"), dtype="<u8").astype(np.int64)
    assignments = np.frombuffer(r.take(4 * n, "assignments"), dtype="<u4").astype(np.int32)
    r.done()
    return ClusterModel(
        class_id=class_id,
        k=k,
        eigenvalues=eigenvalues,
        centroids=centroids,
        sizes=sizes,
        assignments=assignments,
        params=None,
    )


def model_filename(class_id: str) -> str:
    return f"model_{class_id}.clus"


def class_of_model_file(path: str | Path) -> str:
    stem = Path(path).stem
    return stem[len("model_") :] if stem.startswith("model_") else stem


# ---------------------------------------------------------------------------
# annotation store


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_annotation(rec: AnnotationRecord, path: str | Path) -> None:
    doc = {
        "class": rec.class_id,
        "labels": {str(i): rec.labels[i].value for i in sorted(rec.labels)},
        "annotator": rec.annotator,
        "timestamp": rec.timestamp.astimezone(timezone.utc).isoformat(),
        "version": rec.version,
    }
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_annotation(path: str | Path) -> AnnotationRecord:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read annotation {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"annotation {path} is not valid JSON: {exc}") from exc
    try:
        labels = {int(i): ClusterLabel(v) for i, v in doc["labels"].items()}
        return AnnotationRecord(
            class_id=doc["class"],
            labels=labels,
            annotator=doc.get("annotator", "unknown"),
            timestamp=datetime.fromisoformat(doc["timestamp"]),
            version=int(doc.get("version", 1)),
        )
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"annotation {path} malformed: {exc}") from exc


def annotation_filename(class_id: str) -> str:
    return f"ann_{class_id}.json"
