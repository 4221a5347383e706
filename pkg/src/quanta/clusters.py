"""Rank-frequency curves of clusterings and their upper envelope.

Also hosts a synthetic model of clustered gradients: subtask i contributes
floor(A / i^alpha) Gaussian vectors around a random centre, so the true
rank-frequency slope is -alpha and the bias of the spectral pipeline can be
measured directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .qdg import AffinityMatrix, ClusterAssignment, cluster_purity, spectral_cluster, spectral_embedding
from .seeds import stream
from .sweep import FitError, fit_power_law


@dataclass
class RankFrequencyCurve:
    n_clusters: int
    sizes: np.ndarray  # descending

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, len(self.sizes) + 1)

    def size_at(self, rank: int) -> int:
        return int(self.sizes[rank - 1]) if rank <= len(self.sizes) else 0


@dataclass
class EnvelopeFit:
    lo: int
    hi: int
    slope: float
    intercept: float
    r_squared: float
    n_curves: int
    ranks: np.ndarray = field(repr=False)
    envelope: np.ndarray = field(repr=False)


def rank_frequency(assignment: ClusterAssignment | np.ndarray, n_clusters: int | None = None) -> RankFrequencyCurve:
    """Cluster sizes sorted descending; empty clusters are omitted."""
    if isinstance(assignment, ClusterAssignment):
        labels, n_clusters = assignment.labels, assignment.n_clusters
    else:
        labels = np.asarray(assignment)
        n_clusters = n_clusters if n_clusters is not None else int(labels.max()) + 1
    if labels.size == 0:
        raise ValueError("empty assignment")
    _, counts = np.unique(labels, return_counts=True)
    return RankFrequencyCurve(n_clusters, np.sort(counts)[::-1].copy())


def envelope(curves: list[RankFrequencyCurve]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise maximum over curves of size-at-rank, for every rank some curve reaches."""
    if not curves:
        raise ValueError("need at least one curve")
    top = max(len(c.sizes) for c in curves)
    env = np.zeros(top, dtype=np.int64)
    for c in curves:
        env[: len(c.sizes)] = np.maximum(env[: len(c.sizes)], c.sizes)
    return np.arange(1, top + 1), env


def envelope_slope(curves: list[RankFrequencyCurve], window: tuple[int, int] = (10, 300)) -> EnvelopeFit:
    """Log-log slope of the envelope over ranks ``lo..hi`` (clipped to available ranks)."""
    lo, hi = window
    if lo < 1 or hi <= lo:
        raise ValueError(f"bad rank window {window}")
    ranks, env = envelope(curves)
    sel = (ranks >= lo) & (ranks <= hi) & (env > 0)
    if sel.sum() < 3:
        raise FitError(f"rank window {window} holds fewer than 3 envelope points")
    fit = fit_power_law(list(zip(ranks[sel], env[sel])))
    return EnvelopeFit(
        lo=int(ranks[sel][0]),
        hi=int(ranks[sel][-1]),
        slope=fit.exponent,
        intercept=float(np.log(fit.prefactor)),
        r_squared=fit.r_squared,
        n_curves=len(curves),
        ranks=ranks[sel],
        envelope=env[sel],
    )


# ---------------------------------------------------------------------------
# toy model


@dataclass(frozen=True)
class ToyModelConfig:
    n_subtasks: int = 300
    amplitude: float = 300.0
    alpha: float = 1.0
    dim: int = 300
    sigma: float = 2.0
    k_list: tuple[int, ...] = (30, 60, 150)
    seed: int = 0

    def __post_init__(self):
        if self.n_subtasks < 1 or self.dim < 1 or not self.amplitude > 0 or not self.alpha > 0:
            raise ValueError("toy model needs positive n_subtasks, amplitude, alpha and dim")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not self.k_list or min(self.k_list) < 1:
            raise ValueError("k_list must hold positive cluster counts")

    def sizes(self) -> np.ndarray:
        """n_i = floor(A / i^alpha), zeros dropped."""
        i = np.arange(1, self.n_subtasks + 1, dtype=np.float64)
        n = np.floor(self.amplitude / i**self.alpha).astype(np.int64)
        return n[n >= 1]

    def replace(self, **kw) -> "ToyModelConfig":
        from dataclasses import replace

        return replace(self, **kw)


def toy_desk_config(**kw) -> ToyModelConfig:
    return ToyModelConfig(**kw)


def toy_paper_config(**kw) -> ToyModelConfig:
    base = dict(n_subtasks=1000, amplitude=1000.0, dim=1000, k_list=(100, 200, 500))
    base.update(kw)
    return ToyModelConfig(**base)


def gen_toy_gradients(cfg: ToyModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Stacked vectors and their 1-based subtask ids."""
    rng = stream(cfg.seed, "toy", cfg.alpha, cfg.n_subtasks, cfg.dim)
    sizes = cfg.sizes()
    centres = rng.standard_normal((len(sizes), cfg.dim))
    ids = np.repeat(np.arange(1, len(sizes) + 1), sizes)
    noise = rng.standard_normal((ids.size, cfg.dim))
    return centres[ids - 1] + cfg.sigma * noise, ids


def toy_similarity(x, y) -> float:
    """1 + cosine of the angle between x and y, in [0, 2]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("toy similarity is undefined for a zero vector")
    return float(1.0 + np.clip(x @ y / (nx * ny), -1.0, 1.0))


def toy_similarity_matrix(X: np.ndarray) -> AffinityMatrix:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("toy similarity is undefined for a zero vector")
    U = X / norms[:, None]
    S = U @ U.T
    S = 0.5 * (S + S.T)
    np.clip(S, -1.0, 1.0, out=S)
    np.fill_diagonal(S, 1.0)
    return AffinityMatrix(1.0 + S, "toy")


@dataclass
class ToySweepResult:
    config: ToyModelConfig
    curves: list[RankFrequencyCurve]
    purities: list[float]
    n_vectors: int


def toy_cluster_sweep(cfg: ToyModelConfig) -> ToySweepResult:
    """Cluster the toy vectors once per k in ``k_list`` (one shared eigensolve)."""
    X, ids = gen_toy_gradients(cfg)
    W = toy_similarity_matrix(X)
    del X
    k_max = min(max(cfg.k_list), len(ids))
    emb = spectral_embedding(W, k_max)
    curves, purities = [], []
    for k in cfg.k_list:
        k = min(k, len(ids))
        a = spectral_cluster(W, k, seed=cfg.seed, embedding=emb)
        curves.append(rank_frequency(a))
        purities.append(cluster_purity(a.labels, ids))
    return ToySweepResult(cfg, curves, purities, len(ids))


@dataclass
class AlphaRecoveryRow:
    alpha: float
    slope: float
    error: float  # slope - (-alpha)
    r_squared: float


@dataclass
class AlphaRecovery:
    rows: list[AlphaRecoveryRow]

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean([abs(r.error) for r in self.rows]))

    @property
    def spearman(self) -> float:
        if len(self.rows) < 2:
            return float("nan")
        return float(spearmanr([r.alpha for r in self.rows], [abs(r.slope) for r in self.rows]).statistic)


def alpha_recovery_sweep(
    alphas, base: ToyModelConfig | None = None, window: tuple[int, int] = (10, 300)
) -> AlphaRecovery:
    """Envelope slope of the toy model for each alpha, with its error against -alpha."""
    alphas = list(alphas)
    if not alphas:
        raise ValueError("need at least one alpha")
    base = base or ToyModelConfig()
    rows = []
    for a in alphas:
        res = toy_cluster_sweep(base.replace(alpha=float(a)))
        fit = envelope_slope(res.curves, window)
        rows.append(AlphaRecoveryRow(float(a), fit.slope, fit.slope + float(a), fit.r_squared))
    return AlphaRecovery(rows)
