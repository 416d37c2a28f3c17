"""Ranking classes by spectral evidence of distractor structure."""

from __future__ import annotations

from dataclasses import dataclass

from .datamodel import ClusterModel
from .errors import MissingImprovement


@dataclass(frozen=True)
class RankedClass:
    class_id: str
    lambda2: float


def rank_classes(models: list[ClusterModel]) -> list[RankedClass]:
    """Classes in ascending order of the second-smallest eigenvalue (smaller
    means stronger two-cluster structure); ties break lexicographically."""
    for model in models:
        if model.eigenvalues.size < 2:
            raise ValueError(f"model for {model.class_id!r} has fewer than 2 eigenvalues")
    ranked = sorted(models, key=lambda mo: (float(mo.eigenvalues[1]), mo.class_id))
    return [RankedClass(class_id=mo.class_id, lambda2=float(mo.eigenvalues[1])) for mo in ranked]


def tradeoff_curve(
    ranked: list[RankedClass], improvements: dict[str, float]
) -> list[tuple[float, float]]:
    """Cumulative fraction of total improvement when annotating the first j
    ranked classes, for j = 0..N; a zero total yields y identically 0."""
    for rc in ranked:
        if rc.class_id not in improvements:
            raise MissingImprovement(f"no improvement value for class {rc.class_id!r}")
    n = len(ranked)
    total = sum(improvements[rc.class_id] for rc in ranked)
    points = [(0.0, 0.0)]
    cum = 0.0
    for j, rc in enumerate(ranked, start=1):
        cum += improvements[rc.class_id]
        points.append((j / n, cum / total if total != 0 else 0.0))
    return points
