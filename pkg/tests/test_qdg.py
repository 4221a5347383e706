import numpy as np
import pytest

from quanta.mlp import MlpModel, init_model
from quanta.parity import build_task_spec, draw_batch
from quanta.qdg import (
    AffinityMatrix,
    EmptyResultError,
    GradMatrix,
    IsolatedNodeError,
    angular_affinity,
    block_similarity,
    build_grad_matrix,
    cluster_purity,
    cosine_affinity,
    factored_cosine_affinity,
    normalized_laplacian,
    spectral_cluster,
    spectral_embedding,
)


def two_blocks(sizes=(6, 9), inside=0.9, across=0.05):
    truth = np.repeat(np.arange(len(sizes)), sizes)
    W = np.where(truth[:, None] == truth[None, :], inside, across)
    np.fill_diagonal(W, 1.0)
    return AffinityMatrix(W, "angular"), truth


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :])


@pytest.fixture(scope="module")
def trained():
    spec = build_task_spec(5, 10, 2, 0.4, seed=1)
    rng = np.random.default_rng(3)
    model = MlpModel(
        rng.normal(0, 0.4, (12, spec.input_dim)),
        rng.normal(0, 0.1, 12),
        rng.normal(0, 1.0, (2, 12)),
        rng.normal(0, 0.1, 2),
    )
    return model, draw_batch(spec, 60, 4)


class TestGradients:
    def test_unit_rows(self, trained):
        model, batch = trained
        g = build_grad_matrix(model, batch, loss_filter=np.inf)
        np.testing.assert_allclose(np.linalg.norm(g.A, axis=1), 1.0, atol=1e-12)
        assert len(g) + g.n_zero_dropped == len(batch)

    def test_filter(self, trained):
        model, batch = trained
        g = build_grad_matrix(model, batch, loss_filter=0.5, ground_truth=batch.subtask_ids)
        assert 0 < len(g) < len(batch)
        np.testing.assert_array_equal(g.ground_truth, batch.subtask_ids[g.sample_ids])

    def test_empty(self, trained):
        model, batch = trained
        with pytest.raises(EmptyResultError):
            build_grad_matrix(model, batch, loss_filter=0.0)

    def test_rejects_unnormalised(self):
        with pytest.raises(ValueError):
            GradMatrix(np.ones((2, 2)), np.arange(2))

    def test_factored_matches_materialised(self, trained):
        model, batch = trained
        g = build_grad_matrix(model, batch, loss_filter=np.inf)
        C1 = cosine_affinity(g)
        C2, ok = factored_cosine_affinity(model, batch)
        np.testing.assert_array_equal(ok, g.sample_ids)
        np.testing.assert_allclose(C2.values, C1.values, rtol=0, atol=1e-10)

    def test_zero_output_layer_gradients(self):
        # with W2 = 0 the hidden layer gets no gradient but the output layer does
        spec = build_task_spec(3, 6, 2, 0.4, seed=0)
        m = init_model(spec.input_dim, 5, 0, zero_output=True)
        g = build_grad_matrix(m, draw_batch(spec, 10, 1), loss_filter=np.inf)
        assert len(g) == 10


class TestAffinity:
    def test_cosine_properties(self, trained):
        C = cosine_affinity(build_grad_matrix(*trained, loss_filter=np.inf)).values
        np.testing.assert_array_equal(C, C.T)
        np.testing.assert_array_equal(np.diag(C), 1.0)
        assert C.min() >= -1 and C.max() <= 1

    def test_angular_values(self):
        C = AffinityMatrix(np.array([[1.0, 0.0, -1.0], [0.0, 1.0, 0.5], [-1.0, 0.5, 1.0]]), "cosine")
        A = angular_affinity(C).values
        np.testing.assert_allclose(A[0], [1.0, 0.5, 0.0], atol=1e-15)
        assert A[1, 2] == pytest.approx(1 - 1 / 3)
        np.testing.assert_array_equal(np.diag(A), 1.0)

    def test_angular_needs_cosine(self):
        with pytest.raises(ValueError):
            angular_affinity(AffinityMatrix(np.eye(2), "angular"))

    def test_block_similarity(self):
        W, truth = two_blocks()
        within, between = block_similarity(W.values, truth)
        assert within == pytest.approx(0.9) and between == pytest.approx(0.05)


class TestSpectral:
    def test_laplacian_null_vector(self):
        W, _ = two_blocks()
        L = normalized_laplacian(W.values)
        v = np.sqrt(W.values.sum(axis=1))
        np.testing.assert_allclose(L @ v, 0.0, atol=1e-13)

    def test_eigen_residual_and_order(self):
        W, _ = two_blocks((5, 7, 4))
        vals, vecs = spectral_embedding(W, 3)
        assert vals[0] == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.diff(vals) >= 0)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(3), atol=1e-12)

    def test_recovers_blocks(self):
        W, truth = two_blocks((6, 9, 5))
        a = spectral_cluster(W, 3, seed=0)
        assert same_partition(a.labels, truth)
        assert cluster_purity(a.labels, truth) == 1.0

    def test_deterministic(self):
        W, _ = two_blocks((6, 9, 5), inside=0.6, across=0.3)
        np.testing.assert_array_equal(spectral_cluster(W, 4, seed=7).labels, spectral_cluster(W, 4, seed=7).labels)

    def test_permutation_equivariant(self):
        W, truth = two_blocks((6, 9, 5))
        perm = np.random.default_rng(0).permutation(len(truth))
        a = spectral_cluster(AffinityMatrix(W.values[np.ix_(perm, perm)], "angular"), 3, seed=0)
        assert same_partition(a.labels, truth[perm])

    def test_one_cluster(self):
        W, _ = two_blocks()
        assert not spectral_cluster(W, 1).labels.any()

    def test_too_many_clusters(self):
        W, _ = two_blocks((2, 2))
        with pytest.raises(ValueError):
            spectral_cluster(W, 5)

    def test_isolated_node(self):
        W = np.ones((4, 4))
        W[2, :] = W[:, 2] = 0.0
        with pytest.raises(IsolatedNodeError, match="row 2"):
            spectral_cluster(AffinityMatrix(W, "angular"), 2)

    def test_shared_embedding(self):
        W, truth = two_blocks((6, 9, 5))
        emb = spectral_embedding(W, 5)
        np.testing.assert_array_equal(spectral_cluster(W, 3, embedding=emb).labels, spectral_cluster(W, 3).labels)


class TestPurity:
    def test_known(self):
        assert cluster_purity([0, 0, 0, 1, 1], [1, 1, 2, 2, 2]) == pytest.approx(4 / 5)

    def test_single_cluster(self):
        assert cluster_purity([0, 0, 0, 0], [1, 1, 1, 2]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cluster_purity([0, 1], [0])


def test_gaussian_blobs_purity():
    rng = np.random.default_rng(5)
    centres = np.array([[4.0, 0, 0], [0, 4.0, 0], [0, 0, 4.0]])
    truth = np.repeat(np.arange(3), [30, 20, 10])
    X = centres[truth] + 0.3 * rng.standard_normal((60, 3))
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    W = AffinityMatrix(np.exp(-d2 / 2.0), "angular")
    assert cluster_purity(spectral_cluster(W, 3, seed=1).labels, truth) == 1.0


def test_exact_two_blocks():
    truth = np.repeat([0, 1], [4, 6])
    W = (truth[:, None] == truth[None, :]).astype(float)
    # disconnected blocks have no zero-degree rows, only a repeated zero eigenvalue
    a = spectral_cluster(AffinityMatrix(W, "angular"), 2, seed=0)
    assert same_partition(a.labels, truth)
