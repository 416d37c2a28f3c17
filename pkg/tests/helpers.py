"""Shared test fixtures and independent oracles.

The oracles here deliberately avoid the library's own code paths: the dense
spectral oracle solves the generalized problem with explicit matrices via
scipy, the component oracle is a hand-rolled flood fill, and the heatmap
oracle sums member similarities one by one.
"""

from __future__ import annotations

from collections import deque

import numpy as np
import scipy.linalg

from dforge.datamodel import PatternPool, RegionGrid, unit_vector_f32


def make_pool(vectors, class_id="y", image_id="img") -> PatternPool:
    """Pool from raw nonnegative vectors; normalized here, one fake image."""
    vecs = np.stack([unit_vector_f32(np.asarray(v, dtype=np.float64)) for v in vectors])
    n = vecs.shape[0]
    return PatternPool(
        class_id=class_id,
        source="test",
        image_ids=(image_id,) * n,
        regions=np.column_stack([np.zeros(n, dtype=np.int64), np.arange(n, dtype=np.int64)]),
        vectors=vecs,
    )


def random_pool(rng: np.random.Generator, n: int, dim: int, class_id="y") -> PatternPool:
    return make_pool(rng.uniform(0.0, 1.0, size=(n, dim)) + 1e-3, class_id=class_id)


def two_block_pool(rng: np.random.Generator, n1: int, n2: int, dim: int) -> tuple[PatternPool, np.ndarray]:
    """Patterns with disjoint coordinate support in two groups; returns the
    pool and the true block labels aligned with pool order."""
    half = dim // 2
    a = np.zeros((n1, dim))
    a[:, :half] = rng.uniform(0.2, 1.0, size=(n1, half))
    b = np.zeros((n2, dim))
    b[:, half:] = rng.uniform(0.2, 1.0, size=(n2, half))
    return make_pool(np.vstack([a, b])), np.array([0] * n1 + [1] * n2)


def dense_generalized_spectrum(pool: PatternPool, m_eig: int):
    """Oracle: explicit W, D, L and scipy's generalized symmetric solver."""
    phi = pool.vectors.astype(np.float64)
    W = phi @ phi.T
    d = W.sum(axis=1)
    L = np.diag(d) - W
    vals, vecs = scipy.linalg.eigh(L, np.diag(d))
    return vals[:m_eig], vecs[:, :m_eig]


def canon_partition(labels) -> tuple[int, ...]:
    """Relabel clusters by order of first appearance so partitions compare
    independently of label permutation."""
    order: dict[int, int] = {}
    return tuple(order.setdefault(int(l), len(order)) for l in labels)


def flood_fill_partition(members: set[tuple[int, int]]) -> list[frozenset[tuple[int, int]]]:
    """Oracle: exhaustive BFS flood fill with 4-connectivity over a cell set."""
    remaining = set(members)
    comps = []
    while remaining:
        seed = min(remaining)
        comp = {seed}
        queue = deque([seed])
        remaining.remove(seed)
        while queue:
            r, c = queue.popleft()
            for nb in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if nb in remaining:
                    remaining.remove(nb)
                    comp.add(nb)
                    queue.append(nb)
        comps.append(frozenset(comp))
    comps.sort(key=min)
    return comps


def brute_heatmap(fm_values: np.ndarray, member_vectors: np.ndarray) -> np.ndarray:
    """Oracle: average the member similarities cell by cell."""
    rows, cols, dim = fm_values.shape
    out = np.zeros((rows, cols))
    for r in range(rows):
        for c in range(cols):
            v = fm_values[r, c].astype(np.float64)
            norm = np.linalg.norm(v)
            if norm < 1e-12:
                continue
            v = v / norm
            out[r, c] = sum(float(v @ a) for a in member_vectors.astype(np.float64)) / len(member_vectors)
    return out


def small_grid(rows=4, cols=4, cell=16) -> RegionGrid:
    return RegionGrid(rows=rows, cols=cols, cell_h=cell, cell_w=cell)
