"""Quanta discovery from gradients.

Samples the model already gets right are embedded by their normalised
per-sample loss gradients, compared by angular similarity, and grouped by
spectral clustering.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from sklearn.cluster import KMeans

from .mlp import MlpModel, forward_loss, per_sample_grads, per_sample_gram
from .parity import SampleBatch
from .seeds import derive_seed

log = logging.getLogger(__name__)

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
EIGEN_RESIDUAL_TOL = 1e-8


class EmptyResultError(ValueError):
    pass


class IsolatedNodeError(ValueError):
    pass


class EigenSolverError(RuntimeError):
    pass


@dataclass
class GradMatrix:
    """Row-normalised per-sample gradients of the retained samples."""

    A: np.ndarray
    sample_ids: np.ndarray
    ground_truth: Optional[np.ndarray] = None
    n_zero_dropped: int = 0
    n_filtered: int = 0

    def __post_init__(self):
        norms = np.linalg.norm(self.A, axis=1)
        if not np.allclose(norms, 1.0, rtol=0, atol=1e-9):
            raise ValueError("GradMatrix rows must have unit norm")

    def __len__(self) -> int:
        return self.A.shape[0]


@dataclass
class AffinityMatrix:
    values: np.ndarray
    kind: str  # "cosine", "angular" or "toy"

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    n_clusters: int
    seed: int
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    inertia: float = 0.0

    @property
    def eigengaps(self) -> np.ndarray:
        return np.diff(self.eigenvalues)


def build_grad_matrix(
    model: MlpModel,
    samples: SampleBatch,
    loss_filter: float = 0.1,
    ground_truth: Optional[np.ndarray] = None,
    chunk: int = 512,
) -> GradMatrix:
    """Normalised gradients (over all parameters) of samples with loss < ``loss_filter`` nats."""
    if len(samples) == 0:
        raise EmptyResultError("no samples given")
    _, losses = forward_loss(model, samples)
    keep = np.flatnonzero(losses < loss_filter)
    if keep.size == 0:
        raise EmptyResultError(f"no sample has loss below {loss_filter} nats")
    rows, ids = [], []
    zero = 0
    for start in range(0, keep.size, chunk):
        idx = keep[start : start + chunk]
        G = per_sample_grads(model, samples.take(idx))
        norms = np.linalg.norm(G, axis=1)
        ok = norms > 0
        zero += int(np.sum(~ok))
        rows.append(G[ok] / norms[ok, None])
        ids.append(idx[ok])
    if zero:
        log.warning("dropped %d samples with zero gradient", zero)
    sample_ids = np.concatenate(ids)
    if sample_ids.size == 0:
        raise EmptyResultError("every retained sample has a zero gradient")
    truth = None if ground_truth is None else np.asarray(ground_truth)[sample_ids]
    return GradMatrix(np.concatenate(rows), sample_ids, truth, zero, len(samples) - keep.size)


def cosine_affinity(grads: GradMatrix) -> AffinityMatrix:
    """C = A A^T clamped to [-1, 1], symmetric with unit diagonal."""
    A = grads.A
    C = A @ A.T
    C = 0.5 * (C + C.T)
    np.clip(C, -1.0, 1.0, out=C)
    np.fill_diagonal(C, 1.0)
    return AffinityMatrix(C, "cosine")


def retained_samples(model: MlpModel, samples: SampleBatch, loss_filter: float = 0.1) -> np.ndarray:
    """Indices of samples with loss below ``loss_filter`` nats."""
    _, losses = forward_loss(model, samples)
    return np.flatnonzero(losses < loss_filter)


def factored_cosine_affinity(model: MlpModel, samples: SampleBatch) -> tuple[AffinityMatrix, np.ndarray]:
    """Cosine affinity from the factored per-sample Gram matrix, never forming gradients.

    Returns the affinity over samples with nonzero gradient and their indices.
    """
    K = per_sample_gram(model, samples)
    K = 0.5 * (K + K.T)
    sq = np.diag(K).copy()
    ok = np.flatnonzero(sq > 0)
    if ok.size < len(samples):
        log.warning("dropped %d samples with zero gradient", len(samples) - ok.size)
    if ok.size == 0:
        raise EmptyResultError("every sample has a zero gradient")
    K = K[np.ix_(ok, ok)]
    inv = 1.0 / np.sqrt(sq[ok])
    C = K * inv[:, None] * inv[None, :]
    np.clip(C, -1.0, 1.0, out=C)
    np.fill_diagonal(C, 1.0)
    return AffinityMatrix(C, "cosine"), ok


def angular_affinity(C: AffinityMatrix) -> AffinityMatrix:
    """1 - arccos(C) / pi, in [0, 1]."""
    if C.kind != "cosine":
        raise ValueError(f"angular affinity needs a cosine matrix, got {C.kind!r}")
    return AffinityMatrix(1.0 - np.arccos(np.clip(C.values, -1.0, 1.0)) / np.pi, "angular")


def normalized_laplacian(W: np.ndarray) -> np.ndarray:
    """I - D^-1/2 W D^-1/2."""
    deg = W.sum(axis=1)
    bad = np.flatnonzero(deg <= 0)
    if bad.size:
        raise IsolatedNodeError(f"row {bad[0]} has zero degree")
    inv_sqrt = 1.0 / np.sqrt(deg)
    L = -(W * inv_sqrt[:, None]) * inv_sqrt[None, :]
    L[np.diag_indices_from(L)] += 1.0
    return 0.5 * (L + L.T)


def spectral_embedding(affinity: AffinityMatrix, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors for the ``n_components`` smallest eigenvalues of the Laplacian."""
    W = np.asarray(affinity.values, dtype=np.float64)
    m = W.shape[0]
    if not 1 <= n_components <= m:
        raise ValueError(f"n_components must be in [1, {m}], got {n_components}")
    if np.any(W < 0):
        raise ValueError("spectral clustering needs a nonnegative affinity")
    L = normalized_laplacian(W)
    try:
        vals, vecs = scipy.linalg.eigh(L, subset_by_index=[0, n_components - 1], driver="evr")
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"eigensolver failed for m={m}, k={n_components}: {exc}") from exc
    resid = np.linalg.norm(L @ vecs - vecs * vals, axis=0)
    worst = float(resid.max()) if resid.size else 0.0
    if worst > EIGEN_RESIDUAL_TOL:
        raise EigenSolverError(f"eigenpair residual {worst:.3g} exceeds {EIGEN_RESIDUAL_TOL}")
    return vals, vecs


def _kmeans(X: np.ndarray, n_clusters: int, seed: int) -> tuple[np.ndarray, float]:
    km = KMeans(
        n_clusters=n_clusters,
        init="k-means++",
        n_init=KMEANS_RESTARTS,
        max_iter=KMEANS_MAX_ITER,
        random_state=derive_seed(seed, "kmeans") % (2**32),
        algorithm="lloyd",
    )
    labels = km.fit_predict(X)
    return labels.astype(np.int64), float(km.inertia_)


def spectral_cluster(
    affinity: AffinityMatrix,
    n_clusters: int,
    seed: int = 0,
    embedding: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> ClusterAssignment:
    """Normalised spectral clustering with k-means label assignment.

    ``embedding`` may carry a precomputed (eigenvalues, eigenvectors) pair
    with at least ``n_clusters`` columns, so several cluster counts can share
    one eigensolve.
    """
    m = len(affinity)
    if not 1 <= n_clusters <= m:
        raise ValueError(f"n_clusters must be in [1, {m}], got {n_clusters}")
    if embedding is None:
        vals, vecs = spectral_embedding(affinity, n_clusters)
    else:
        vals, vecs = embedding[0][:n_clusters], embedding[1][:, :n_clusters]
    if n_clusters == 1:
        return ClusterAssignment(np.zeros(m, dtype=np.int64), 1, seed, vals, 0.0)
    X = vecs.copy()
    norms = np.linalg.norm(X, axis=1)
    X[norms > 0] /= norms[norms > 0, None]
    labels, inertia = _kmeans(X, n_clusters, seed)
    return ClusterAssignment(labels, n_clusters, seed, vals, inertia)


def cluster_purity(labels, ground_truth) -> float:
    """Fraction of samples whose cluster's majority class matches their own."""
    labels = np.asarray(labels)
    truth = np.asarray(ground_truth)
    if labels.shape != truth.shape:
        raise ValueError(f"length mismatch: {labels.shape} vs {truth.shape}")
    if labels.size == 0:
        raise ValueError("empty assignment")
    _, truth_codes = np.unique(truth, return_inverse=True)
    total = 0
    for c in np.unique(labels):
        total += np.bincount(truth_codes[labels == c]).max()
    return total / labels.size


def block_similarity(values: np.ndarray, ground_truth) -> tuple[float, float]:
    """Mean off-diagonal within-group and between-group similarity."""
    truth = np.asarray(ground_truth)
    same = truth[:, None] == truth[None, :]
    off = ~np.eye(len(truth), dtype=bool)
    within = values[same & off]
    between = values[~same]
    return float(within.mean()), float(between.mean())


def block_order(labels) -> np.ndarray:
    """Permutation grouping samples by label (stable within a label)."""
    return np.argsort(np.asarray(labels), kind="stable")
