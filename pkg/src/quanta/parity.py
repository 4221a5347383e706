"""Multitask sparse parity data.

An input is ``n_tasks`` one-hot control bits followed by ``n`` uniform task
bits. When control bit i is hot the label is the parity of the task bits in
subset S_i. Subtask i is drawn with probability proportional to
i^-(alpha+1) over i = 1..n_tasks.

Subtask ids and subset indices are 1-based, matching the bit numbering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeds import stream
from .theory import QuantaDistribution


class ParityError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    n_tasks: int
    n: int
    k: int
    alpha: float
    seed: int
    subsets: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def input_dim(self) -> int:
        return self.n_tasks + self.n

    @property
    def subset_array(self) -> np.ndarray:
        """(n_tasks, k) array of 0-based task-bit indices."""
        return np.asarray(self.subsets, dtype=np.int64) - 1

    @property
    def distribution(self) -> QuantaDistribution:
        return QuantaDistribution(self.alpha, self.n_tasks)

    def frequencies(self) -> np.ndarray:
        """p_i for i = 1..n_tasks."""
        return self.distribution.pmf()


def build_task_spec(n_tasks: int, n: int, k: int, alpha: float, seed: int) -> TaskSpec:
    """Draw the subsets S_1..S_{n_tasks}; identical arguments give identical specs."""
    if n_tasks < 1 or n < 1 or k < 1:
        raise ParityError(f"n_tasks, n, k must be positive (got {n_tasks}, {n}, {k})")
    if k > n:
        raise ParityError(f"parity arity k={k} exceeds task bit count n={n}")
    if not alpha > 0:
        raise ParityError(f"alpha must be positive, got {alpha}")
    rng = stream(seed, "subsets")
    subsets = []
    for _ in range(n_tasks):
        chosen = np.sort(rng.choice(n, size=k, replace=False)) + 1
        subsets.append(tuple(int(i) for i in chosen))
    return TaskSpec(n_tasks, n, k, float(alpha), int(seed), tuple(subsets))


@dataclass
class SampleBatch:
    """Parity samples in compact form.

    ``task_bits`` is an (m, n) uint8 matrix; the control bits are implied by
    ``subtask_ids``. ``inputs`` expands to the dense (m, n_tasks + n) layout.
    """

    n_tasks: int
    subtask_ids: np.ndarray
    task_bits: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def inputs(self) -> np.ndarray:
        m = len(self)
        control = np.zeros((m, self.n_tasks), dtype=np.uint8)
        control[np.arange(m), self.subtask_ids - 1] = 1
        return np.concatenate([control, self.task_bits], axis=1)

    def take(self, index) -> "SampleBatch":
        return SampleBatch(
            self.n_tasks,
            self.subtask_ids[index],
            self.task_bits[index],
            self.labels[index],
        )

    @classmethod
    def from_inputs(cls, inputs: np.ndarray, labels: np.ndarray, n_tasks: int) -> "SampleBatch":
        inputs = np.asarray(inputs, dtype=np.uint8)
        control = inputs[:, :n_tasks]
        if not np.all(control.sum(axis=1) == 1):
            raise ParityError("each row needs exactly one hot control bit")
        ids = control.argmax(axis=1).astype(np.int64) + 1
        return cls(n_tasks, ids, np.ascontiguousarray(inputs[:, n_tasks:]), np.asarray(labels, dtype=np.uint8))


def parity_label(task_bits, subset) -> int:
    """Parity of the task bits at the 1-based positions in ``subset``."""
    bits = np.asarray(task_bits)
    idx = np.asarray(list(subset), dtype=np.int64)
    if idx.size and (idx.min() < 1 or idx.max() > bits.shape[-1]):
        raise IndexError(f"subset {tuple(subset)} out of range for {bits.shape[-1]} task bits")
    return int(bits[idx - 1].sum() % 2)


def batch_labels(spec: TaskSpec, subtask_ids: np.ndarray, task_bits: np.ndarray) -> np.ndarray:
    """Vectorised parity labels for a batch."""
    cols = spec.subset_array[subtask_ids - 1]
    picked = np.take_along_axis(task_bits, cols, axis=1)
    return (picked.sum(axis=1) % 2).astype(np.uint8)


def _make_batch(spec: TaskSpec, ids: np.ndarray, rng: np.random.Generator) -> SampleBatch:
    bits = rng.integers(0, 2, size=(ids.shape[0], spec.n), dtype=np.uint8)
    return SampleBatch(spec.n_tasks, ids, bits, batch_labels(spec, ids, bits))


def draw_subtasks(spec: TaskSpec, m: int, rng: np.random.Generator) -> np.ndarray:
    """1-based subtask ids drawn i.i.d. from the Zipf pmf."""
    cdf = np.cumsum(spec.frequencies())
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(m), side="right").astype(np.int64) + 1


def draw_batch(spec: TaskSpec, m: int, rng_seed, *stream_names) -> SampleBatch:
    """m i.i.d. samples. ``rng_seed`` is a seed or a ``numpy`` Generator."""
    if m < 1:
        raise ParityError(f"batch size must be >= 1, got {m}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else stream(rng_seed, "batch", *stream_names)
    return _make_batch(spec, draw_subtasks(spec, m, rng), rng)


def fixed_eval_set(spec: TaskSpec, per_task: int, rng_seed) -> SampleBatch:
    """Exactly ``per_task`` samples of every subtask, ordered by subtask id."""
    if per_task < 1:
        raise ParityError(f"per_task must be >= 1, got {per_task}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else stream(rng_seed, "eval")
    ids = np.repeat(np.arange(1, spec.n_tasks + 1, dtype=np.int64), per_task)
    return _make_batch(spec, ids, rng)
