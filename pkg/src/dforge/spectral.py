"""Linear-cost spectral clustering over inner-product similarities.

The similarity matrix W = Phi Phi^T is never materialized: degrees and
Laplacian products stream over the pattern matrix in O(n * feat_dim) per
application. The generalized eigenproblem L v = lambda D v is solved through
the symmetric form B = D^{-1/2} L D^{-1/2} (valid because every degree is
>= 1) by Lanczos iteration with full reorthogonalization. After a breakdown
the basis is kept and extended from a fresh seeded start vector, which is
what recovers eigenvalue multiplicities from rank-deficient similarity
graphs; a converged spectrum is confirmed by one extra fresh-vector run
before it is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import ClusterModel, ClusterParams, PatternPool
from .errors import DimensionMismatch, EmptyPool, NoConvergence, PoolTooSmall

RITZ_TOL = 1e-8  # max ||B w - lambda w|| per returned eigenpair
LANCZOS_MAX_BASIS = 300
LANCZOS_MAX_STARTS = 6  # initial start vector plus up to 5 restarts
_BREAKDOWN_EPS = 1e-10
_CHUNK = 8192  # row block for streaming float64 accumulation over float32 patterns
KMEANS_SHIFT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class EigenResult:
    """Smallest eigenpairs of the random-walk Laplacian eigenproblem."""

    eigenvalues: np.ndarray  # ascending, float64
    eigenvectors: np.ndarray  # (n, len(eigenvalues)), D-orthonormal columns

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=np.float64)
        vecs = np.asarray(self.eigenvectors, dtype=np.float64)
        if ev.ndim != 1 or vecs.ndim != 2 or vecs.shape[1] != ev.size:
            raise ValueError("eigenvalue/eigenvector shapes disagree")
        if (np.diff(ev) < -1e-12).any():
            raise ValueError("eigenvalues must be ascending")
        if ev.min() < -1e-8 or ev.max() > 2 + 1e-8:
            raise ValueError(f"eigenvalues {ev} outside [0, 2] beyond slack")
        if ev[0] > 1e-6:
            raise ValueError(f"smallest eigenvalue {ev[0]} exceeds the zero-mode bound")
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "eigenvectors", vecs)


@dataclass(frozen=True, eq=False)
class SpectralEmbedding:
    """Rows of U = [v_1 | ... | v_k]; row a is the embedding of pattern a."""

    rows: np.ndarray  # (n, k)


def _sum_patterns(vectors: np.ndarray) -> np.ndarray:
    s = np.zeros(vectors.shape[1], dtype=np.float64)
    for lo in range(0, vectors.shape[0], _CHUNK):
        s += vectors[lo : lo + _CHUNK].astype(np.float64).sum(axis=0)
    return s


def _similarity_matvec(vectors: np.ndarray, v: np.ndarray) -> np.ndarray:
    """W v = Phi (Phi^T v) streamed in float64 without forming W."""
    s = np.zeros(vectors.shape[1], dtype=np.float64)
    for lo in range(0, vectors.shape[0], _CHUNK):
        s += vectors[lo : lo + _CHUNK].astype(np.float64).T @ v[lo : lo + _CHUNK]
    out = np.empty(vectors.shape[0], dtype=np.float64)
    for lo in range(0, vectors.shape[0], _CHUNK):
        out[lo : lo + _CHUNK] = vectors[lo : lo + _CHUNK].astype(np.float64) @ s
    return out


def degree_vector(pool: PatternPool) -> np.ndarray:
    """Row sums of the implicit similarity matrix: d_a = <a, sum_b b>."""
    if len(pool) == 0:
        raise EmptyPool("cannot compute degrees of an empty pool")
    s = _sum_patterns(pool.vectors)
    d = np.empty(len(pool), dtype=np.float64)
    for lo in range(0, len(pool), _CHUNK):
        d[lo : lo + _CHUNK] = pool.vectors[lo : lo + _CHUNK].astype(np.float64) @ s
    return d


def laplacian_matvec(pool: PatternPool, d: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(D - W) v without materializing W."""
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if v.shape != (len(pool),) or d.shape != (len(pool),):
        raise DimensionMismatch(f"pool has {len(pool)} patterns, got d{d.shape}, v{v.shape}")
    return d * v - _similarity_matvec(pool.vectors, v)


# ---------------------------------------------------------------------------
# eigensolvers


def _ritz_pairs(bmatvec, Q: np.ndarray, T: np.ndarray, j: int, n_eig: int):
    """Eigenpairs of the projected problem plus direct residual norms."""
    theta, Y = np.linalg.eigh(T[:j, :j])
    mtop = min(n_eig, j)
    W = Q[:j].T @ Y[:, :mtop]
    resid = np.empty(mtop)
    for i in range(mtop):
        w = W[:, i]
        nrm = np.linalg.norm(w)
        if nrm > 0:
            w = w / nrm
            W[:, i] = w
        resid[i] = np.linalg.norm(bmatvec(w) - theta[i] * w)
    return theta[:mtop], W, resid


def _lanczos_smallest(bmatvec, n: int, n_eig: int, seed: int):
    """Smallest n_eig eigenpairs of the implicit symmetric PSD operator B.

    Returns (eigenvalues ascending, eigenvector columns), all with residual
    norm <= RITZ_TOL, or raises NoConvergence.
    """
    cap = min(n, LANCZOS_MAX_BASIS)
    rng = np.random.default_rng(seed)
    Q = np.zeros((min(cap, 32), n))
    T = np.zeros((cap, cap))
    j = 0
    starts = 0
    last_converged: np.ndarray | None = None
    best: tuple | None = None

    def ensure_rows(rows: int):
        nonlocal Q
        if rows > Q.shape[0]:
            grown = np.zeros((min(cap, max(rows, 2 * Q.shape[0])), n))
            grown[: Q.shape[0]] = Q
            Q = grown

    def orthogonalized(v: np.ndarray) -> np.ndarray:
        for _ in range(2):
            if j:
                v = v - Q[:j].T @ (Q[:j] @ v)
        return v

    while j < cap and starts < LANCZOS_MAX_STARTS:
        starts += 1
        v = orthogonalized(rng.standard_normal(n))
        nrm = np.linalg.norm(v)
        if nrm < 1e-8 * np.sqrt(n):
            continue  # start vector fell inside the current span; draw another
        q = v / nrm
        q_prev = None
        beta_prev = 0.0
        while j < cap:
            ensure_rows(j + 1)
            Q[j] = q
            u = bmatvec(q)
            alpha = float(q @ u)
            T[j, j] = alpha
            r = u - alpha * q
            if q_prev is not None:
                r = r - beta_prev * q_prev
            # full reorthogonalization; a second sweep only on heavy
            # cancellation (the classical "twice is enough" norm test)
            before = float(np.linalg.norm(r))
            r = r - Q[: j + 1].T @ (Q[: j + 1] @ r)
            beta = float(np.linalg.norm(r))
            if beta < 0.7 * before:
                r = r - Q[: j + 1].T @ (Q[: j + 1] @ r)
                beta = float(np.linalg.norm(r))
            j += 1
            breakdown = beta < _BREAKDOWN_EPS
            if breakdown or j >= cap or (j > n_eig and j % 10 == 0):
                theta, W, resid = _ritz_pairs(bmatvec, Q, T, j, n_eig)
                if theta.size >= n_eig and (resid <= RITZ_TOL).all():
                    best = (theta, W)
                    if j >= n:
                        return best  # full space reached: exact
                    if last_converged is not None and np.abs(theta - last_converged).max() <= 10 * RITZ_TOL:
                        return best  # stable across an independent fresh-vector run
                    last_converged = theta
                    break  # confirmation run from a fresh start vector
            if breakdown or j >= cap:
                break
            T[j - 1, j] = T[j, j - 1] = beta
            q_prev = Q[j - 1]
            beta_prev = beta
            q = r / beta

    if j:
        theta, W, resid = _ritz_pairs(bmatvec, Q, T, j, n_eig)
        if theta.size >= n_eig and (resid <= RITZ_TOL).all():
            return theta, W
    if best is not None:
        return best
    raise NoConvergence(
        f"Lanczos did not reach residual {RITZ_TOL} within {cap} iterations and {LANCZOS_MAX_STARTS} starts"
    )


def smallest_eigenpairs(pool: PatternPool, params: ClusterParams = ClusterParams()) -> EigenResult:
    """M smallest eigenpairs of L v = lambda D v via matrix-free Lanczos."""
    n = len(pool)
    if n <= params.M:
        raise PoolTooSmall(f"pool has {n} patterns, need at least {params.M + 1}; use dense_eigenpairs")
    d = degree_vector(pool)
    dis = 1.0 / np.sqrt(d)
    vectors = pool.vectors

    def bmatvec(w: np.ndarray) -> np.ndarray:
        return w - dis * _similarity_matvec(vectors, dis * w)

    vals, W = _lanczos_smallest(bmatvec, n, params.M, params.seed)
    return EigenResult(eigenvalues=vals[: params.M], eigenvectors=W[:, : params.M] * dis[:, None])


def dense_eigenpairs(pool: PatternPool, params: ClusterParams = ClusterParams()) -> EigenResult:
    """Same contract as smallest_eigenpairs via direct tridiagonalization of
    the explicitly built B; intended for pools too small for Lanczos."""
    n = len(pool)
    if n == 0:
        raise EmptyPool("cannot decompose an empty pool")
    phi = pool.vectors.astype(np.float64)
    W = phi @ phi.T
    d = W.sum(axis=1)
    dis = 1.0 / np.sqrt(d)
    B = (np.diag(d) - W) * dis[:, None] * dis[None, :]
    B = (B + B.T) / 2
    vals, vecs = np.linalg.eigh(B)
    mtop = min(params.M, n)
    return EigenResult(eigenvalues=vals[:mtop], eigenvectors=vecs[:, :mtop] * dis[:, None])


def select_k(eig: EigenResult, params: ClusterParams = ClusterParams()) -> int:
    """Number of eigenvalues below rho, clamped to [m, M]."""
    count = int((eig.eigenvalues < params.rho).sum())
    return max(params.m, min(params.M, count))


def embedding(eig: EigenResult, k: int) -> SpectralEmbedding:
    """First k eigenvectors as rows; no row renormalization."""
    return SpectralEmbedding(rows=eig.eigenvectors[:, :k])


# ---------------------------------------------------------------------------
# k-means


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[int(rng.integers(n))]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _fix_empty(labels: np.ndarray, d2: np.ndarray, k: int) -> np.ndarray:
    """Hand each empty cluster the farthest point from a cluster that can
    spare one (ties to the lowest index); needs k <= n, which cluster()
    guarantees. Donors keep >= 1 member, so this terminates in < k steps."""
    counts = np.bincount(labels, minlength=k)
    if not (counts == 0).any():
        return labels
    assigned = d2[np.arange(labels.shape[0]), labels].copy()
    while (counts == 0).any():
        j = int(np.flatnonzero(counts == 0)[0])
        candidates = np.where(counts[labels] >= 2, assigned, -np.inf)
        idx = int(candidates.argmax())
        counts[labels[idx]] -= 1
        labels[idx] = j
        counts[j] += 1
        assigned[idx] = -np.inf
    return labels


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float):
    n = X.shape[0]
    centers = _kmeans_pp(X, k, rng)
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        labels = _fix_empty(d2.argmin(axis=1).astype(np.int32), d2, k)
        new_centers = np.empty_like(centers)
        for j in range(k):
            new_centers[j] = X[labels == j].mean(axis=0)
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    labels = _fix_empty(d2.argmin(axis=1).astype(np.int32), d2, k)
    wcss = float(d2[np.arange(n), labels].sum())
    return labels, wcss


def _kmeans(X: np.ndarray, k: int, restarts: int, max_iter: int, seed: int):
    """Seeded k-means++ with independent restarts; keeps the first restart
    attaining the minimal within-cluster sum of squares."""
    best_labels, best_wcss = None, np.inf
    for r in range(restarts):
        labels, wcss = _lloyd(X, k, np.random.default_rng([seed, r]), max_iter, KMEANS_SHIFT_TOL)
        if wcss < best_wcss:
            best_labels, best_wcss = labels, wcss
    return best_labels, best_wcss


def _relabel_by_size(labels: np.ndarray, k: int) -> np.ndarray:
    """Canonicalize cluster indices: descending size, ties by smallest member index."""
    sizes = np.bincount(labels, minlength=k)
    first = np.array([int(np.flatnonzero(labels == j)[0]) for j in range(k)])
    order = sorted(range(k), key=lambda j: (-int(sizes[j]), first[j]))
    inv = np.empty(k, dtype=np.int32)
    inv[order] = np.arange(k, dtype=np.int32)
    return inv[labels]


def cluster(pool: PatternPool, params: ClusterParams = ClusterParams()) -> ClusterModel:
    """Full pipeline: degrees -> eigenpairs -> k selection -> k-means over the
    spectral embedding -> canonicalized ClusterModel."""
    n = len(pool)
    if n < 2 * params.m:
        raise PoolTooSmall(f"pool has {n} patterns, need at least {2 * params.m} for {params.m} clusters")
    eig = dense_eigenpairs(pool, params) if n <= params.M else smallest_eigenpairs(pool, params)
    k = select_k(eig, params)
    U = embedding(eig, k).rows
    labels, _ = _kmeans(U, k, params.kmeans_restarts, params.kmeans_max_iter, params.seed)
    labels = _relabel_by_size(labels, k)
    sizes = np.bincount(labels, minlength=k).astype(np.int64)
    centroids = np.empty((k, pool.feat_dim), dtype=np.float32)
    for i in range(k):
        centroids[i] = pool.vectors[labels == i].astype(np.float64).mean(axis=0).astype(np.float32)
    return ClusterModel(
        class_id=pool.class_id,
        k=k,
        eigenvalues=eig.eigenvalues,
        centroids=centroids,
        sizes=sizes,
        assignments=labels,
        params=params,
    )
