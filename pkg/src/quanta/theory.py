"""Loss and scaling-law predictions of the quanta model.

Quanta are indexed k = 1, 2, ... in order of decreasing use frequency
p_k = k^-(alpha+1) / Z. A model that has learned the first n quanta incurs
loss a_k on samples that use quantum k <= n and b_k on the rest. All losses
are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

NATS_TO_BITS = 1.0 / math.log(2.0)

# Partial sums are taken explicitly up to this index before switching to the
# Euler-Maclaurin tail.
_MIN_EXPLICIT_TERMS = 10**6
_CHUNK = 1 << 20


class TheoryError(ValueError):
    """Raised for arguments outside the domain of a formula."""


@dataclass(frozen=True)
class QuantaDistribution:
    """Zipf distribution over quanta with tail exponent alpha + 1.

    ``support=None`` means infinitely many quanta; an integer restricts the
    support to {1, ..., support}.
    """

    alpha: float
    support: int | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise TheoryError(f"alpha must be positive, got {self.alpha}")
        if self.support is not None and self.support < 1:
            raise TheoryError(f"finite support must be >= 1, got {self.support}")

    @property
    def exponent(self) -> float:
        return self.alpha + 1.0

    @property
    def is_finite(self) -> bool:
        return self.support is not None

    @property
    def normalizer(self) -> float:
        if self.support is None:
            return zeta(self.exponent)
        return float(_power_sum(1, self.support, self.exponent))

    def pmf(self) -> np.ndarray:
        """Probabilities p_1..p_K as an array (finite support only)."""
        if self.support is None:
            raise TheoryError("pmf array requires finite support")
        k = np.arange(1, self.support + 1, dtype=np.float64)
        w = k ** -self.exponent
        return w / w.sum()


@dataclass(frozen=True)
class Constant:
    """Loss drops from ``b`` to ``a`` when a quantum is learned."""

    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (self.b >= self.a >= 0):
            raise TheoryError(f"Constant profile needs b >= a >= 0, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class LogFreq:
    """b_k = -log p_k (unigram-entropy baseline), a_k = 0."""


@dataclass(frozen=True)
class LogOffset:
    """b_k = -log p_k, a_k = -log(C p_k) with C > 1."""

    C: float

    def __post_init__(self):
        if not self.C > 1:
            raise TheoryError(f"LogOffset needs C > 1, got {self.C}")


LossProfile = Union[Constant, LogFreq, LogOffset]


class Axis(str, Enum):
    PARAMS = "params"
    DATA = "data"
    STEPS = "steps"


@dataclass(frozen=True)
class ScalingPrediction:
    """Predicted power law L ~ prefactor * scale^-exponent along one axis.

    ``capacity_per_quantum`` is the parameter cost C of one quantum,
    ``data_threshold`` the number tau of examples needed to learn a quantum
    and ``first_quantum_steps`` the steps T to learn the first quantum.
    """

    axis: Axis
    exponent: float
    prefactor: float
    capacity_per_quantum: float = 1.0
    data_threshold: float = 1.0
    first_quantum_steps: float = 1.0


def scaling_prediction(
    axis: Axis | str,
    dist: QuantaDistribution,
    capacity_per_quantum: float = 1.0,
    data_threshold: float = 1.0,
    first_quantum_steps: float = 1.0,
) -> ScalingPrediction:
    """Build the asymptotic prediction for ``axis`` with a=0, b=1."""
    axis = Axis(axis)
    for name, v in [
        ("capacity_per_quantum", capacity_per_quantum),
        ("data_threshold", data_threshold),
        ("first_quantum_steps", first_quantum_steps),
    ]:
        if not v > 0:
            raise TheoryError(f"{name} must be positive, got {v}")
    alpha = dist.alpha
    z = zeta(dist.exponent)
    base = 1.0 / (alpha * z)
    if axis is Axis.PARAMS:
        exponent = alpha
        prefactor = base * capacity_per_quantum**alpha
    else:
        exponent = alpha / (alpha + 1.0)
        scale = data_threshold * z if axis is Axis.DATA else first_quantum_steps
        prefactor = base * scale**exponent
    return ScalingPrediction(
        axis=axis,
        exponent=exponent,
        prefactor=prefactor,
        capacity_per_quantum=capacity_per_quantum,
        data_threshold=data_threshold,
        first_quantum_steps=first_quantum_steps,
    )


# ---------------------------------------------------------------------------
# series helpers


def _power_sum(lo: int, hi: int, s: float, log_weight: bool = False) -> float:
    """sum_{k=lo}^{hi} k^-s (times log k if ``log_weight``), in fixed-size chunks."""
    total = 0.0
    start = lo
    while start <= hi:
        stop = min(hi, start + _CHUNK - 1)
        k = np.arange(start, stop + 1, dtype=np.float64)
        t = k**-s
        if log_weight:
            t *= np.log(k)
        total += math.fsum(t) if t.size < 4096 else float(np.sum(t))
        start = stop + 1
    return total


def _power_tail(K: int, s: float) -> float:
    """sum_{k>K} k^-s via Euler-Maclaurin about x = K."""
    K = float(K)
    return (
        K ** (1 - s) / (s - 1)
        - 0.5 * K**-s
        + s * K ** (-s - 1) / 12.0
        - s * (s + 1) * (s + 2) * K ** (-s - 3) / 720.0
    )


def _log_power_tail(K: int, s: float) -> float:
    """sum_{k>K} k^-s log k via Euler-Maclaurin about x = K."""
    K = float(K)
    lk = math.log(K)
    integral = K ** (1 - s) * (lk / (s - 1) + 1.0 / (s - 1) ** 2)
    f = K**-s * lk
    fprime = K ** (-s - 1) * (1.0 - s * lk)
    return integral - 0.5 * f - fprime / 12.0


def zeta(s: float) -> float:
    """Riemann zeta for real s > 1, absolute error well below 1e-9."""
    if not s > 1:
        raise TheoryError(f"zeta(s) diverges for s <= 1 (got s={s})")
    if s > 55:
        # 2^-s is already below double precision relative to 1
        return 1.0 + 2.0**-s + 3.0**-s
    # Explicit terms until the leading neglected Euler-Maclaurin term
    # (~ s^5 M^-(s+5) / 30240) is negligible.
    M = 32 if s > 1.05 else 256
    return _power_sum(1, M, s) + _power_tail(M, s)


def zipf_pmf(k: int, dist: QuantaDistribution) -> float:
    """Probability p_k that a sample relies on quantum ``k``."""
    if k < 1 or (dist.support is not None and k > dist.support):
        raise TheoryError(f"k={k} outside the support of {dist}")
    return k**-dist.exponent / dist.normalizer


# ---------------------------------------------------------------------------
# expected loss


def _profile_weights(k: np.ndarray, profile: LossProfile, s: float, log_z: float):
    """(a_k, b_k) arrays for quanta ``k``."""
    if isinstance(profile, Constant):
        return np.full_like(k, profile.a), np.full_like(k, profile.b)
    neg_log_p = log_z + s * np.log(k)
    if isinstance(profile, LogFreq):
        return np.zeros_like(k), neg_log_p
    if isinstance(profile, LogOffset):
        return neg_log_p - math.log(profile.C), neg_log_p
    raise TypeError(f"unknown loss profile {profile!r}")


def _weighted_sum(lo: int, hi: int, dist, profile, which: int, z: float) -> float:
    """sum_{k=lo}^{hi} w_k p_k where w = a (which=0) or b (which=1)."""
    s = dist.exponent
    log_z = math.log(z)
    total = 0.0
    start = lo
    while start <= hi:
        stop = min(hi, start + _CHUNK - 1)
        k = np.arange(start, stop + 1, dtype=np.float64)
        w = _profile_weights(k, profile, s, log_z)[which]
        total += float(np.sum(w * k**-s)) / z
        start = stop + 1
    return total


def _weighted_tail(K: int, dist, profile, which: int, z: float) -> float:
    """sum_{k>K} w_k p_k for infinite support, from the analytic tails."""
    s = dist.exponent
    t0 = _power_tail(K, s) / z
    if isinstance(profile, Constant):
        return (profile.a if which == 0 else profile.b) * t0
    tlog = _log_power_tail(K, s) / z
    b_tail = math.log(z) * t0 + s * tlog
    if which == 1:
        return b_tail
    if isinstance(profile, LogFreq):
        return 0.0
    return b_tail - math.log(profile.C) * t0


def expected_loss_exact(n: int, dist: QuantaDistribution, profile: LossProfile) -> float:
    """L_n = sum_{k<=n} a_k p_k + sum_{k>n} b_k p_k, evaluated as a series.

    Infinite support sums explicitly to max(10^6, 100 n) and closes the
    series with an Euler-Maclaurin tail.
    """
    if n < 0:
        raise TheoryError(f"n must be nonnegative, got {n}")
    n = int(n)
    z = dist.normalizer
    if dist.support is not None:
        K = dist.support
        learned = _weighted_sum(1, min(n, K), dist, profile, 0, z) if n >= 1 else 0.0
        rest = _weighted_sum(n + 1, K, dist, profile, 1, z) if n < K else 0.0
        return learned + rest
    K = max(_MIN_EXPLICIT_TERMS, 100 * n)
    learned = _weighted_sum(1, n, dist, profile, 0, z) if n >= 1 else 0.0
    rest = _weighted_sum(n + 1, K, dist, profile, 1, z) + _weighted_tail(K, dist, profile, 1, z)
    return learned + rest


def expected_loss_exact_curve(ns, dist: QuantaDistribution, profile: LossProfile) -> np.ndarray:
    """Vectorised ``expected_loss_exact`` for many n sharing one partial sum."""
    ns = np.asarray(ns, dtype=np.int64)
    if ns.size == 0:
        return np.zeros(0)
    if ns.min() < 0:
        raise TheoryError("n must be nonnegative")
    z = dist.normalizer
    s = dist.exponent
    log_z = math.log(z)
    if dist.support is not None:
        K = dist.support
        total_b = None
    else:
        K = max(_MIN_EXPLICIT_TERMS, 100 * int(ns.max()))
        total_b = _weighted_tail(K, dist, profile, 1, z)
    k = np.arange(1, K + 1, dtype=np.float64)
    a, b = _profile_weights(k, profile, s, log_z)
    p = k**-s / z
    cum_a = np.concatenate([[0.0], np.cumsum(a * p)])
    bp = b * p
    cum_b = np.concatenate([[0.0], np.cumsum(bp)])
    b_all = cum_b[-1] + (total_b or 0.0)
    nc = np.minimum(ns, K)
    return cum_a[nc] + (b_all - cum_b[nc])


def entropy(dist: QuantaDistribution) -> float:
    """-sum p_k log p_k, the n=0 loss of the log-frequency profiles."""
    return expected_loss_exact(0, dist, LogFreq())


def expected_loss_closed(n: float, dist: QuantaDistribution, profile: LossProfile) -> float:
    """Integral approximation of L_n (infinite support only)."""
    if dist.support is not None:
        raise TheoryError("closed-form loss is only defined for infinite support")
    if n < 1:
        raise TheoryError(f"closed form needs n >= 1, got {n}")
    alpha = dist.alpha
    z = zeta(dist.exponent)
    decay = n**-alpha
    if isinstance(profile, Constant):
        return profile.a + (profile.b - profile.a) * decay / (alpha * z)
    head = (1 + alpha + alpha * math.log(z)) / (alpha**2 * z)
    if isinstance(profile, LogFreq):
        return head * decay + (alpha + 1) / (alpha * z) * decay * math.log(n)
    if isinstance(profile, LogOffset):
        log_c = math.log(profile.C)
        return log_c / (alpha * z) * decay - log_c + head
    raise TypeError(f"unknown loss profile {profile!r}")


def closed_form_limit(dist: QuantaDistribution, profile: LossProfile) -> float:
    """n -> infinity limit of ``expected_loss_closed``."""
    if isinstance(profile, Constant):
        return profile.a
    if isinstance(profile, LogFreq):
        return 0.0
    alpha = dist.alpha
    z = zeta(dist.exponent)
    return -math.log(profile.C) + (1 + alpha + alpha * math.log(z)) / (alpha**2 * z)


def exact_limit(dist: QuantaDistribution, profile: LossProfile) -> float:
    """n -> infinity limit of ``expected_loss_exact`` (all quanta learned)."""
    if isinstance(profile, Constant):
        return profile.a
    if isinstance(profile, LogFreq):
        return 0.0
    return entropy(dist) - math.log(profile.C)


# ---------------------------------------------------------------------------
# scaling along parameters, data and steps


def _loss_at(n: int, dist, profile) -> float:
    if n < 1:
        return expected_loss_exact(0, dist, profile)
    return expected_loss_closed(n, dist, profile)


def quanta_from_params(N: float, pred: ScalingPrediction) -> int:
    return max(0, math.floor(N / pred.capacity_per_quantum))


def _floor_root(ratio: float, exponent: float) -> int:
    """Largest integer n >= 0 with n^exponent <= ratio, robust at exact powers."""
    n = math.floor(ratio ** (1.0 / exponent))
    slack = 1.0 + 1e-12
    while (n + 1) ** exponent <= ratio * slack:
        n += 1
    while n >= 1 and n**exponent > ratio * slack:
        n -= 1
    return max(0, n)


def quanta_from_data(D: float, pred: ScalingPrediction, dist: QuantaDistribution) -> int:
    """Largest n with D p_n >= tau."""
    if not D > 0:
        raise TheoryError(f"D must be positive, got {D}")
    return _floor_root(D / (pred.data_threshold * zeta(dist.exponent)), dist.exponent)


def quanta_from_steps(S: float, pred: ScalingPrediction, dist: QuantaDistribution) -> int:
    """Largest n with T n^(alpha+1) <= S."""
    if not S > 0:
        raise TheoryError(f"S must be positive, got {S}")
    return _floor_root(S / pred.first_quantum_steps, dist.exponent)


def loss_vs_params(N: float, pred: ScalingPrediction, dist, profile) -> float:
    """Loss of a network with N parameters when each quantum costs C of them."""
    return _loss_at(quanta_from_params(N, pred), dist, profile)


def loss_vs_data(D: float, pred: ScalingPrediction, dist, profile) -> float:
    """Multi-epoch loss with D training samples and learning threshold tau."""
    return _loss_at(quanta_from_data(D, pred, dist), dist, profile)


def loss_vs_steps(S: float, pred: ScalingPrediction, dist, profile) -> float:
    """Single-epoch loss after S steps when quantum k needs T k^(alpha+1) steps."""
    return _loss_at(quanta_from_steps(S, pred, dist), dist, profile)


def parse_profile(text: str) -> LossProfile:
    """Parse ``constant:a,b``, ``logfreq`` or ``logoffset:C``."""
    name, _, args = text.partition(":")
    name = name.strip().lower()
    try:
        if name == "constant":
            if not args:
                return Constant()
            a, b = (float(v) for v in args.split(","))
            return Constant(a, b)
        if name == "logfreq":
            return LogFreq()
        if name == "logoffset":
            return LogOffset(float(args))
    except ValueError as exc:
        raise TheoryError(f"bad profile {text!r}: {exc}") from exc
    raise TheoryError(f"unknown profile {text!r}")


def profile_name(profile: LossProfile) -> str:
    if isinstance(profile, Constant):
        return f"constant:{profile.a:g},{profile.b:g}"
    if isinstance(profile, LogFreq):
        return "logfreq"
    return f"logoffset:{profile.C:g}"
