"""Score-map thresholding and per-class pattern-pool extraction."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import (
    DatasetManifest,
    FeatureMap,
    Pattern,
    PatternPool,
    RegionGrid,
    ScoreMap,
    _Reader,
    _read_bytes,
    _write_bytes,
    read_feature_map,
    read_score_map,
    unit_vector_f32,
)
from .errors import EmptyPool, GridMismatch, UnknownClass

POOL_MAGIC = b"MAPL"

ZERO_NORM_EPS = 1e-12  # cells below this norm carry no direction and are skipped


@dataclass(frozen=True)
class RegionSet:
    """Set of predicted-foreground cells of one score map."""

    grid: RegionGrid
    members: frozenset[tuple[int, int]]

    def __post_init__(self):
        members = frozenset((int(r), int(c)) for r, c in self.members)
        for r, c in members:
            if not (0 <= r < self.grid.rows and 0 <= c < self.grid.cols):
                raise ValueError(f"member ({r},{c}) outside {self.grid.rows}x{self.grid.cols} grid")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class LocalizeParams:
    """Relative threshold for turning score maps into region sets."""

    theta: float = 0.2

    def __post_init__(self):
        if not (0 < self.theta < 1):
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")


def threshold_regions(s: ScoreMap, p: LocalizeParams = LocalizeParams()) -> RegionSet:
    """Cells scoring strictly above theta times the finite maximum.

    A map with no finite entries, or a non-positive maximum, yields the empty
    set; suppressed (-inf) cells can never qualify.
    """
    scores = s.scores
    finite = scores[np.isfinite(scores)]
    if finite.size == 0:
        return RegionSet(grid=s.grid, members=frozenset())
    mx = float(finite.max())
    if mx <= 0:
        return RegionSet(grid=s.grid, members=frozenset())
    cut = p.theta * mx
    rows, cols = np.nonzero(scores > cut)
    return RegionSet(grid=s.grid, members=frozenset(zip(rows.tolist(), cols.tolist())))


def extract_patterns(fm: FeatureMap, rs: RegionSet, image_id: str) -> list[Pattern]:
    """L2-normalized feature vectors of the member cells, in (row, col) order.

    Cells with (near-)zero norm are skipped: a zero pattern has degree zero
    and would break the degree normalization downstream.
    """
    if fm.grid != rs.grid:
        raise GridMismatch(f"feature grid {fm.grid} != region grid {rs.grid}")
    out: list[Pattern] = []
    for r, c in sorted(rs.members):
        vec = fm.values[r, c].astype(np.float64)
        if np.linalg.norm(vec) < ZERO_NORM_EPS:
            continue
        out.append(Pattern(vec=unit_vector_f32(vec), image_id=image_id, region=(r, c)))
    return out


def build_pool(man: DatasetManifest, class_id: str, p: LocalizeParams = LocalizeParams()) -> PatternPool:
    """Pool the patterns of every predicted-foreground region across all
    images carrying the class label, sorted by (image_id, row, col)."""
    if class_id not in man.classes:
        raise UnknownClass(f"class {class_id!r} not in manifest")
    patterns: list[Pattern] = []
    for img in man.images:
        if class_id not in img.labels:
            continue
        fm = read_feature_map(img.fmap, grid=man.grid)
        sm = read_score_map(img.smaps[class_id], class_id=class_id, grid=man.grid)
        patterns.extend(extract_patterns(fm, threshold_regions(sm, p), img.image_id))
    if not patterns:
        raise EmptyPool(f"class {class_id!r} produced no patterns")
    return PatternPool.from_patterns(class_id, patterns, source=man.source)


# ---------------------------------------------------------------------------
# pool file format


def write_pool(pool: PatternPool, path: str | Path) -> None:
    parts = [POOL_MAGIC, struct.pack("<II", 1, pool.feat_dim), struct.pack("<Q", len(pool))]
    for i in range(len(pool)):
        ident = pool.image_ids[i].encode("utf-8")
        parts.append(struct.pack("<I", len(ident)))
        parts.append(ident)
        parts.append(struct.pack("<II", int(pool.regions[i, 0]), int(pool.regions[i, 1])))
        parts.append(pool.vectors[i].astype("<f4").tobytes())
    _write_bytes(path, b"".join(parts))


def read_pool(path: str | Path, class_id: str = "") -> PatternPool:
    """Decode a pool file; class identity comes from the caller (the format
    stores only patterns)."""
    r = _Reader(_read_bytes(path))
    r.expect_magic(POOL_MAGIC)
    r.expect_version()
    feat_dim = r.u32("feat_dim")
    n = r.u64("pattern count")
    image_ids: list[str] = []
    regions = np.zeros((n, 2), dtype=np.int64)
    vectors = np.zeros((n, feat_dim), dtype=np.float32)
    for i in range(n):
        ident_len = r.u32(f"record {i} id length")
        image_ids.append(r.take(ident_len, f"record {i} id").decode("utf-8"))
        regions[i, 0] = r.u32(f"record {i} row")
        regions[i, 1] = r.u32(f"record {i} col")
        vectors[i] = r.floats(feat_dim, f"record {i} vector")
    r.done()
    return PatternPool(
        class_id=class_id,
        source=str(path),
        image_ids=tuple(image_ids),
        regions=regions,
        vectors=vectors,
    )


def pool_filename(class_id: str) -> str:
    return f"pool_{class_id}.bin"
