import numpy as np
import pytest

from dforge.datamodel import ClusterParams
from dforge.errors import DimensionMismatch, EmptyPool, PoolTooSmall
from dforge.spectral import (
    EigenResult,
    _kmeans,
    cluster,
    degree_vector,
    dense_eigenpairs,
    laplacian_matvec,
    select_k,
    smallest_eigenpairs,
)

from helpers import (
    canon_partition,
    dense_generalized_spectrum,
    make_pool,
    random_pool,
    two_block_pool,
)


# ---------------------------------------------------------------------------
# degrees


def test_degree_identical_patterns():
    v = np.full(6, 0.3)
    pool = make_pool([v] * 7)
    assert np.allclose(degree_vector(pool), 7.0, atol=1e-6)


def test_degree_orthogonal_basis():
    e1 = [1, 0, 0, 0]
    e2 = [0, 1, 0, 0]
    pool = make_pool([e1, e2])
    assert np.allclose(degree_vector(pool), [1.0, 1.0], atol=1e-6)


def test_degree_matches_dense_row_sums():
    pool = random_pool(np.random.default_rng(5), 20, 6)
    phi = pool.vectors.astype(np.float64)
    W = phi @ phi.T
    assert np.allclose(degree_vector(pool), W.sum(axis=1), atol=1e-10)


def test_degree_empty_pool():
    pool = make_pool([[1, 0]])
    empty = pool.__class__(
        class_id="y", source="t", image_ids=(), regions=np.zeros((0, 2), dtype=np.int64),
        vectors=np.zeros((0, 2), dtype=np.float32),
    )
    with pytest.raises(EmptyPool):
        degree_vector(empty)


def test_degrees_at_least_one():
    for seed in range(5):
        pool = random_pool(np.random.default_rng(seed), 30, 8)
        assert (degree_vector(pool) >= 1 - 1e-9).all()


# ---------------------------------------------------------------------------
# Laplacian matvec


def test_matvec_annihilates_constants():
    pool = random_pool(np.random.default_rng(1), 15, 5)
    d = degree_vector(pool)
    out = laplacian_matvec(pool, d, np.ones(15))
    assert np.abs(out).max() < 1e-10


def test_matvec_matches_dense():
    rng = np.random.default_rng(2)
    pool = random_pool(rng, 15, 5)
    phi = pool.vectors.astype(np.float64)
    W = phi @ phi.T
    L = np.diag(W.sum(1)) - W
    v = rng.standard_normal(15)
    dense = L @ v
    ours = laplacian_matvec(pool, degree_vector(pool), v)
    assert np.abs(ours - dense).max() <= 1e-8 * max(1, np.abs(dense).max())


def test_matvec_disconnected_identity_blocks():
    pool = make_pool([[1, 0], [0, 1]])
    d = degree_vector(pool)
    out = laplacian_matvec(pool, d, np.array([1.0, -1.0]))
    assert np.allclose(out, [0.0, 0.0], atol=1e-7)  # W = I so L = 0


def test_matvec_dimension_mismatch():
    pool = make_pool([[1, 0], [0, 1]])
    with pytest.raises(DimensionMismatch):
        laplacian_matvec(pool, np.ones(2), np.ones(3))


# ---------------------------------------------------------------------------
# eigensolver


def test_two_component_blocks_give_double_zero():
    e1 = np.zeros(8)
    e1[0] = 1
    e2 = np.zeros(8)
    e2[4] = 1
    pool = make_pool([e1] * 5 + [e2] * 5)
    eig = smallest_eigenpairs(pool, ClusterParams(seed=0))
    oracle_vals, _ = dense_generalized_spectrum(pool, 4)
    assert np.abs(eig.eigenvalues - oracle_vals).max() <= 1e-8
    assert eig.eigenvalues[0] <= 1e-8 and eig.eigenvalues[1] <= 1e-8
    assert eig.eigenvalues[2] >= 1 - 1e-8 and eig.eigenvalues[3] >= 1 - 1e-8


def test_identical_patterns_spectrum():
    v = np.full(6, 1.0)
    pool = make_pool([v] * 10)
    eig = smallest_eigenpairs(pool, ClusterParams(seed=0))
    assert eig.eigenvalues[0] <= 1e-8
    assert np.abs(eig.eigenvalues[1:] - 1.0).max() <= 1e-8


def test_random_pool_matches_dense_oracle():
    pool = random_pool(np.random.default_rng(7), 40, 10)
    eig = smallest_eigenpairs(pool, ClusterParams(seed=0))
    oracle_vals, _ = dense_generalized_spectrum(pool, 4)
    assert np.abs(eig.eigenvalues - oracle_vals).max() <= 1e-6


def test_eigenvectors_are_degree_orthonormal():
    pool = random_pool(np.random.default_rng(8), 30, 6)
    eig = smallest_eigenpairs(pool, ClusterParams(seed=0))
    D = np.diag(degree_vector(pool))
    gram = eig.eigenvectors.T @ D @ eig.eigenvectors
    assert np.abs(gram - np.eye(4)).max() <= 1e-6


def test_constant_eigenvector_when_connected():
    pool = random_pool(np.random.default_rng(9), 25, 6)  # strictly positive: connected
    eig = smallest_eigenpairs(pool, ClusterParams(seed=0))
    v0 = eig.eigenvectors[:, 0]
    rel = np.abs(v0 - v0.mean()).max() / np.abs(v0.mean())
    assert rel <= 1e-4


def test_eigenvalues_within_laplacian_bounds():
    for seed in range(6):
        pool = random_pool(np.random.default_rng(seed), 20, 5)
        eig = smallest_eigenpairs(pool, ClusterParams(seed=seed))
        assert eig.eigenvalues.min() >= -1e-8
        assert eig.eigenvalues.max() <= 2 + 1e-8


def test_pool_too_small_for_lanczos():
    pool = random_pool(np.random.default_rng(0), 4, 5)
    with pytest.raises(PoolTooSmall):
        smallest_eigenpairs(pool, ClusterParams())


def test_dense_fallback_same_contract():
    pool = random_pool(np.random.default_rng(3), 4, 5)
    eig = dense_eigenpairs(pool, ClusterParams())
    oracle_vals, _ = dense_generalized_spectrum(pool, 4)
    assert np.abs(eig.eigenvalues - oracle_vals).max() <= 1e-8


# ---------------------------------------------------------------------------
# k selection


def test_select_k_counts_within_bounds():
    params = ClusterParams(rho=0.7, m=2, M=4)
    eig = EigenResult(eigenvalues=np.array([0.0, 0.02, 0.95, 1.1]), eigenvectors=np.zeros((5, 4)))
    assert select_k(eig, params) == 2


def test_select_k_clamps_up_to_m():
    params = ClusterParams(rho=0.7, m=2, M=4)
    eig = EigenResult(eigenvalues=np.array([0.0, 0.9, 1.0, 1.1]), eigenvectors=np.zeros((5, 4)))
    assert select_k(eig, params) == 2


def test_select_k_all_below_rho():
    params = ClusterParams(rho=0.7, m=2, M=4)
    eig = EigenResult(eigenvalues=np.array([0.0, 0.1, 0.2, 0.3]), eigenvectors=np.zeros((5, 4)))
    assert select_k(eig, params) == 4


# ---------------------------------------------------------------------------
# clustering


def test_two_block_recovery_and_size_order():
    rng = np.random.default_rng(11)
    pool, truth = two_block_pool(rng, 20, 30, 8)
    model = cluster(pool, ClusterParams(seed=0))
    assert model.k == 2
    assert canon_partition(model.assignments) == canon_partition(truth)
    # cluster 0 must be the larger (size-30) block
    assert model.sizes[0] == 30 and model.sizes[1] == 20
    assert model.assignments[-1] == 0  # the size-30 block comes second in pool order


def test_identical_pattern_cluster_forced_split():
    v = np.full(5, 2.0)
    pool = make_pool([v] * 12)
    model = cluster(pool, ClusterParams(seed=0))
    assert model.k == 2
    unit = v / np.linalg.norm(v)
    for i in range(2):
        assert np.abs(model.centroids[i].astype(np.float64) - unit).max() <= 1e-6
    assert model.sizes.sum() == 12 and (model.sizes >= 1).all()


def test_cluster_centroids_are_member_means():
    pool = random_pool(np.random.default_rng(13), 35, 7)
    model = cluster(pool, ClusterParams(seed=2))
    for i in range(model.k):
        members = pool.vectors[model.assignments == i].astype(np.float64)
        assert np.abs(model.centroids[i] - members.mean(axis=0)).max() <= 1e-6


def test_cluster_determinism():
    pool = random_pool(np.random.default_rng(17), 40, 8)
    a = cluster(pool, ClusterParams(seed=5))
    b = cluster(pool, ClusterParams(seed=5))
    assert a == b


def test_cluster_pool_too_small():
    pool = random_pool(np.random.default_rng(0), 3, 5)
    with pytest.raises(PoolTooSmall):
        cluster(pool, ClusterParams(m=2, M=4))


def test_lanczos_partition_matches_dense_pipeline():
    """Dense pipeline oracle: generalized-eigh eigenvectors, same k-means."""
    params = ClusterParams(seed=4)
    for seed in (21, 22, 23):
        pool = random_pool(np.random.default_rng(seed), 30, 6)
        model = cluster(pool, params)
        vals, vecs = dense_generalized_spectrum(pool, params.M)
        k = max(params.m, min(params.M, int((vals < params.rho).sum())))
        labels, _ = _kmeans(vecs[:, :k], k, params.kmeans_restarts, params.kmeans_max_iter, params.seed)
        assert model.k == k
        assert canon_partition(model.assignments) == canon_partition(labels)


def test_lanczos_budget_exhaustion_raises_cleanly(monkeypatch):
    import dforge.spectral as sp
    from dforge.errors import NoConvergence

    monkeypatch.setattr(sp, "LANCZOS_MAX_BASIS", 6)  # far too small to converge M=4 pairs
    pool = random_pool(np.random.default_rng(3), 30, 12)
    with pytest.raises(NoConvergence):
        smallest_eigenpairs(pool, ClusterParams(seed=0))


def test_no_quadratic_allocation():
    """The implicit path must not build an n x n similarity matrix; with
    n = 4000 a dense W would need 128 MB, caught by tracemalloc."""
    import tracemalloc

    rng = np.random.default_rng(1)
    vecs = rng.uniform(0.0, 1.0, size=(4000, 8)) + 1e-3
    pool = make_pool(vecs)
    tracemalloc.start()
    tracemalloc.reset_peak()
    cluster(pool, ClusterParams(seed=0))
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < 60e6
