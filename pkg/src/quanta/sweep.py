"""Scaling sweeps on multitask sparse parity.

A sweep trains one network per scale point (hidden width for the parameter
axis, training-set size for the data axis) and records the mean and
per-subtask test loss at regular checkpoints. Everything downstream
(power-law fits, emergence counts, convergence times) works from the
resulting :class:`SweepRecord`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .mlp import AdamState, NonFiniteGradient, TrainState, forward_loss, init_model, param_count, save_checkpoint
from .parity import SampleBatch, TaskSpec, build_task_spec, draw_batch, fixed_eval_set
from .seeds import named_seeds, stream
from .theory import NATS_TO_BITS

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
AXES = ("params", "data", "steps")


class ConfigError(ValueError):
    """Malformed sweep configuration; the message names the offending field."""


@dataclass
class SweepConfig:
    n_tasks: int = 100
    n: int = 50
    k: int = 3
    alpha: float = 0.4
    axis: str = "params"
    widths: list[int] = field(default_factory=lambda: [10, 20, 50, 100, 200])
    dataset_sizes: list[int] = field(default_factory=lambda: [10_000, 30_000, 100_000, 300_000, 1_000_000])
    data_width: int = 200
    batch_size: int = 4096
    total_steps: int = 30_000
    eval_every: int = 100
    eval_per_task: int = 200
    seed: int = 0
    loss_unit: str = "bits"
    lr: float = 1e-3
    zero_output_init: bool = True
    threshold_bits: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive_ints = ["n_tasks", "n", "k", "data_width", "batch_size", "total_steps", "eval_every", "eval_per_task"]
        for name in positive_ints:
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name}: expected a positive integer, got {v!r}")
        if self.k > self.n:
            raise ConfigError(f"k: parity arity {self.k} exceeds n={self.n}")
        if not isinstance(self.alpha, (int, float)) or not self.alpha > 0:
            raise ConfigError(f"alpha: expected a positive number, got {self.alpha!r}")
        if self.axis not in AXES:
            raise ConfigError(f"axis: expected one of {AXES}, got {self.axis!r}")
        if self.loss_unit not in ("bits", "nats"):
            raise ConfigError(f"loss_unit: expected 'bits' or 'nats', got {self.loss_unit!r}")
        for name in ("widths", "dataset_sizes"):
            vals = getattr(self, name)
            if not isinstance(vals, list) or not vals or not all(isinstance(v, int) and v >= 1 for v in vals):
                raise ConfigError(f"{name}: expected a nonempty list of positive integers, got {vals!r}")
        if self.total_steps % self.eval_every:
            raise ConfigError(f"eval_every: {self.eval_every} does not divide total_steps={self.total_steps}")
        if not self.lr > 0:
            raise ConfigError(f"lr: expected a positive number, got {self.lr!r}")
        if not self.threshold_bits > 0:
            raise ConfigError(f"threshold_bits: expected a positive number, got {self.threshold_bits!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config field")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def task_spec(self) -> TaskSpec:
        return build_task_spec(self.n_tasks, self.n, self.k, self.alpha, self.seed)

    @property
    def n_checkpoints(self) -> int:
        return self.total_steps // self.eval_every


def desk_profile(axis: str = "params", **overrides) -> SweepConfig:
    """CPU-sized default: 100 subtasks, n=50, batch 4096, 3e4 steps."""
    return SweepConfig(axis=axis, **overrides)


def paper_profile(axis: str = "params", **overrides) -> SweepConfig:
    """The full-size setting (500 subtasks, n=100, batch 20000, 2e5 steps)."""
    base = dict(
        n_tasks=500,
        n=100,
        widths=[10, 20, 50, 100, 200, 500],
        dataset_sizes=[10_000, 30_000, 100_000, 300_000, 1_000_000, 5_000_000],
        data_width=500,
        batch_size=20_000,
        total_steps=200_000,
        eval_every=1000,
        eval_per_task=200,
    )
    base.update(overrides)
    return SweepConfig(axis=axis, **base)


PROFILES = {"desk": desk_profile, "paper": paper_profile}


# ---------------------------------------------------------------------------
# records


@dataclass
class RunResult:
    """Training trajectory of one network at one scale point.

    ``subtask_losses`` has shape (n_checkpoints, n_tasks) in nats; row j is
    the evaluation after ``steps[j]`` optimiser steps.
    """

    scale: float
    width: int
    n_params: int
    dataset_size: Optional[int]
    steps: list[int]
    mean_losses: list[float]
    subtask_losses: np.ndarray
    initial_loss: float
    diverged: bool = False
    early_stop_index: Optional[int] = None

    @property
    def final_subtask_losses(self) -> np.ndarray:
        return self.subtask_losses[-1]

    @property
    def best_subtask_losses(self) -> np.ndarray:
        idx = self.early_stop_index if self.early_stop_index is not None else len(self.steps) - 1
        return self.subtask_losses[idx]

    @property
    def early_stop_step(self) -> Optional[int]:
        return None if self.early_stop_index is None else self.steps[self.early_stop_index]

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "width": self.width,
            "n_params": self.n_params,
            "dataset_size": self.dataset_size,
            "steps": list(self.steps),
            "mean_losses": [float(v) for v in self.mean_losses],
            "subtask_losses": [[float(v) for v in row] for row in self.subtask_losses],
            "initial_loss": float(self.initial_loss),
            "diverged": self.diverged,
            "early_stop_index": self.early_stop_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        d = dict(d)
        d["subtask_losses"] = np.asarray(d["subtask_losses"], dtype=np.float64).reshape(len(d["steps"]), -1)
        return cls(**d)


@dataclass
class SubtaskCurve:
    """Loss in bits of one subtask against a scale coordinate."""

    subtask_id: int
    frequency: float
    losses: list[tuple[float, float]]

    @property
    def scales(self) -> np.ndarray:
        return np.array([s for s, _ in self.losses])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.losses])


@dataclass
class SweepRecord:
    config: SweepConfig
    runs: list[RunResult]
    manifest: dict = field(default_factory=dict)

    @property
    def axis(self) -> str:
        return self.config.axis

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    @property
    def frequencies(self) -> np.ndarray:
        return self.config.task_spec().frequencies()

    @property
    def scales(self) -> np.ndarray:
        return np.array([r.scale for r in self.runs])

    def selected_subtask_losses(self) -> np.ndarray:
        """(n_scales, n_tasks) nats: early-stopped for data sweeps, final otherwise."""
        if self.axis == "data":
            return np.stack([r.best_subtask_losses for r in self.runs])
        return np.stack([r.final_subtask_losses for r in self.runs])

    def mean_losses(self) -> np.ndarray:
        """Frequency-weighted mean test loss per scale point, in nats."""
        return self.selected_subtask_losses() @ self.frequencies

    def subtask_curves(self) -> list[SubtaskCurve]:
        sel = self.selected_subtask_losses() * NATS_TO_BITS
        freqs = self.frequencies
        return [
            SubtaskCurve(i + 1, float(freqs[i]), [(float(s), float(v)) for s, v in zip(self.scales, sel[:, i])])
            for i in range(self.config.n_tasks)
        ]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "runs": [r.to_dict() for r in self.runs],
            "manifest": self.manifest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRecord":
        return cls(SweepConfig.from_dict(d["config"]), [RunResult.from_dict(r) for r in d["runs"]], d.get("manifest", {}))

    @classmethod
    def from_json(cls, text: str) -> "SweepRecord":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SweepRecord":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# training


def evaluate(model, eval_set: SampleBatch, n_tasks: int) -> np.ndarray:
    """Mean loss in nats of every subtask on a stratified evaluation set."""
    _, losses = forward_loss(model, eval_set)
    sums = np.bincount(eval_set.subtask_ids - 1, weights=losses, minlength=n_tasks)
    counts = np.bincount(eval_set.subtask_ids - 1, minlength=n_tasks)
    return sums / counts


def _train(
    config: SweepConfig,
    width: int,
    next_batch,
    dataset_size: Optional[int] = None,
    checkpoint_path=None,
) -> RunResult:
    spec = config.task_spec()
    freqs = spec.frequencies()
    eval_set = fixed_eval_set(spec, config.eval_per_task, stream(config.seed, "eval"))
    model = init_model(spec.input_dim, width, config.seed, zero_output=config.zero_output_init)
    state = TrainState(model, AdamState.fresh(model, lr=config.lr))
    initial = float(evaluate(model, eval_set, spec.n_tasks) @ freqs)
    steps, means, rows = [], [], []
    diverged = False
    best_idx, best = None, math.inf
    best_model = None
    for step in range(1, config.total_steps + 1):
        try:
            loss = state.step(next_batch(step))
        except NonFiniteGradient:
            loss = math.nan
        if not math.isfinite(loss):
            log.warning("width=%d D=%s diverged at step %d", width, dataset_size, step)
            diverged = True
            break
        if step % config.eval_every == 0:
            per = evaluate(model, eval_set, spec.n_tasks)
            mean = float(per @ freqs)
            steps.append(step)
            means.append(mean)
            rows.append(per)
            if step % (10 * config.eval_every) == 0:
                log.info("width=%d D=%s step=%d loss=%.4f bits", width, dataset_size, step, mean * NATS_TO_BITS)
            if mean < best:
                best, best_idx = mean, len(steps) - 1
                if checkpoint_path is not None and dataset_size is not None:
                    best_model = model.copy()
    subtask = np.array(rows) if rows else np.zeros((0, spec.n_tasks))
    if checkpoint_path is not None and not diverged:
        save_checkpoint(best_model if best_model is not None else model, checkpoint_path)
    scale = float(dataset_size) if dataset_size is not None else float(param_count(spec.input_dim, width))
    return RunResult(
        scale=scale,
        width=width,
        n_params=param_count(spec.input_dim, width),
        dataset_size=dataset_size,
        steps=steps,
        mean_losses=means,
        subtask_losses=subtask,
        initial_loss=initial,
        diverged=diverged,
        early_stop_index=best_idx if dataset_size is not None else None,
    )


def train_online(config: SweepConfig, width: int, checkpoint_path=None) -> RunResult:
    """Single-epoch training: a fresh batch every step."""
    spec = config.task_spec()
    rng = stream(config.seed, "data", "online")
    return _train(config, width, lambda _: draw_batch(spec, config.batch_size, rng), checkpoint_path=checkpoint_path)


def train_multi_epoch(config: SweepConfig, dataset_size: int, checkpoint_path=None) -> RunResult:
    """Multi-epoch training on a fixed set of ``dataset_size`` samples."""
    spec = config.task_spec()
    train = draw_batch(spec, dataset_size, stream(config.seed, "data", "train", dataset_size))
    shuffle = stream(config.seed, "shuffle", dataset_size)
    bs = min(config.batch_size, dataset_size)
    order = np.empty(0, dtype=np.int64)
    cursor = 0

    def next_batch(_step):
        nonlocal order, cursor
        if cursor + bs > order.size:
            order = shuffle.permutation(dataset_size)
            cursor = 0
        idx = order[cursor : cursor + bs]
        cursor += bs
        return train.take(idx)

    return _train(config, config.data_width, next_batch, dataset_size=dataset_size, checkpoint_path=checkpoint_path)


def _run_job(args) -> RunResult:
    config, kind, value, ckpt = args
    if kind == "width":
        return train_online(config, value, ckpt)
    return train_multi_epoch(config, value, ckpt)


def _manifest(config: SweepConfig, hyper: dict) -> dict:
    from . import __version__

    return {
        "tool_version": __version__,
        "config_hash": config.config_hash(),
        "seeds": {"master": config.seed, **named_seeds(config.seed)},
        "adam": {**hyper, "lr": config.lr},
        "decisions": {
            "init": "uniform(+-sqrt(6/fan_in)), zero biases" + (", zero output layer" if config.zero_output_init else ""),
            "precision": "float64",
            "mean_loss": "frequency-weighted mean of stratified per-subtask losses",
            "convergence_threshold_bits": config.threshold_bits,
        },
    }


def _run_jobs(config: SweepConfig, jobs, workers: int) -> list[RunResult]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    # aggregation keyed by scale, independent of completion order
    return sorted(results, key=lambda r: r.scale)


def run_param_sweep(config: SweepConfig, workers: int = 1, checkpoint_dir=None) -> SweepRecord:
    """Train one network per width with online batches."""
    if config.axis != "params":
        raise ConfigError(f"axis: run_param_sweep needs axis='params', got {config.axis!r}")
    jobs = []
    for w in config.widths:
        ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"width_{w}.ckpt"
        jobs.append((config, "width", w, ckpt))
    runs = _run_jobs(config, jobs, workers)
    return SweepRecord(config, runs, _manifest(config, AdamState.fresh(init_model(1, 1, 0)).hyperparameters()))


def run_data_sweep(config: SweepConfig, workers: int = 1, checkpoint_dir=None) -> SweepRecord:
    """Train a fixed-width network on each training-set size, with early stopping."""
    if config.axis != "data":
        raise ConfigError(f"axis: run_data_sweep needs axis='data', got {config.axis!r}")
    jobs = []
    for D in config.dataset_sizes:
        ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"data_{D}.ckpt"
        jobs.append((config, "data", D, ckpt))
    runs = _run_jobs(config, jobs, workers)
    return SweepRecord(config, runs, _manifest(config, AdamState.fresh(init_model(1, 1, 0)).hyperparameters()))


def run_step_sweep(config: SweepConfig, checkpoint_dir=None) -> SweepRecord:
    """A single online run at ``data_width``; the scale axis is training steps."""
    if config.axis != "steps":
        raise ConfigError(f"axis: run_step_sweep needs axis='steps', got {config.axis!r}")
    ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"width_{config.data_width}.ckpt"
    run = train_online(config, config.data_width, ckpt)
    return SweepRecord(config, [run], _manifest(config, AdamState.fresh(init_model(1, 1, 0)).hyperparameters()))


def run_sweep(config: SweepConfig, workers: int = 1, checkpoint_dir=None) -> SweepRecord:
    if config.axis == "params":
        return run_param_sweep(config, workers, checkpoint_dir)
    if config.axis == "data":
        return run_data_sweep(config, workers, checkpoint_dir)
    return run_step_sweep(config, checkpoint_dir)


# ---------------------------------------------------------------------------
# analysis


@dataclass
class StepSeries:
    steps: np.ndarray
    mean_loss: np.ndarray  # nats
    subtask_loss: np.ndarray  # (n_checkpoints, n_tasks) nats
    initial_loss: float

    def subtask_curve(self, subtask_id: int, frequency: float = float("nan")) -> SubtaskCurve:
        col = self.subtask_loss[:, subtask_id - 1] * NATS_TO_BITS
        return SubtaskCurve(subtask_id, frequency, [(float(s), float(v)) for s, v in zip(self.steps, col)])


def track_step_scaling(run: RunResult) -> StepSeries:
    """Loss against optimiser steps for one single-epoch run."""
    if not run.steps:
        raise ValueError("run has no evaluation checkpoints")
    return StepSeries(np.array(run.steps), np.array(run.mean_losses), run.subtask_losses, run.initial_loss)


def subtask_convergence_step(curve: SubtaskCurve, threshold: float = 0.1) -> Optional[float]:
    """First scale coordinate at which the loss (bits) drops below ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    for scale, loss in curve.losses:
        if loss < threshold:
            return scale
    return None


def count_learned_subtasks(
    record: SweepRecord, threshold: float = 0.1, include_post_early_stop: bool = False
) -> list[int]:
    """Subtasks with loss below ``threshold`` bits, per scale point.

    Parameter sweeps use the final checkpoint, data sweeps the early-stopped
    one. With ``include_post_early_stop`` a data-sweep subtask also counts if
    it drops below the threshold at any checkpoint after early stopping.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    out = []
    thr_nats = threshold / NATS_TO_BITS
    for run in record.runs:
        if record.axis == "data" and include_post_early_stop:
            start = run.early_stop_index or 0
            losses = run.subtask_losses[start:].min(axis=0)
        elif record.axis == "data":
            losses = run.best_subtask_losses
        else:
            losses = run.final_subtask_losses
        out.append(int(np.sum(losses < thr_nats)))
    return out


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    r_squared: float


class FitError(ValueError):
    pass


def fit_power_law(points: Sequence[tuple[float, float]]) -> PowerLawFit:
    """Least squares line through (log x, log y); y ~ prefactor * x^exponent."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 3:
        raise FitError(f"need at least 3 points, got {pts.shape[0]}")
    if not np.all(pts > 0) or not np.all(np.isfinite(pts)):
        raise FitError("power-law fit needs finite, strictly positive points")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return PowerLawFit(float(slope), float(math.exp(intercept)), r2)


def fit_window(record: SweepRecord) -> list[int]:
    """Indices of scale points used for fitting.

    Drops diverged runs, and the smallest scale if its loss is within 2% of
    the untrained loss.
    """
    means = record.mean_losses()
    keep = [i for i, r in enumerate(record.runs) if not r.diverged and np.isfinite(means[i])]
    if keep:
        first = keep[0]
        base = record.runs[first].initial_loss
        if abs(means[first] - base) <= 0.02 * base:
            keep = keep[1:]
    return keep


def fit_sweep(record: SweepRecord) -> PowerLawFit:
    """Power law of mean test loss against the sweep's scale coordinate."""
    idx = fit_window(record)
    means = record.mean_losses()
    return fit_power_law([(record.runs[i].scale, means[i]) for i in idx])


def loss_histogram(losses, edges) -> tuple[np.ndarray, np.ndarray]:
    """Density p(L) over bins and the loss-weighted density L p(L).

    The weighted density uses the mean loss within each bin, so its integral
    equals the sample mean for samples inside the edges.
    """
    losses = np.asarray(losses, dtype=np.float64).ravel()
    edges = np.asarray(edges, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("loss histogram of an empty sample")
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    counts, _ = np.histogram(losses, bins=edges)
    sums, _ = np.histogram(losses, bins=edges, weights=losses)
    widths = np.diff(edges)
    total = counts.sum()
    if total == 0:
        raise ValueError("no losses fall inside the bin edges")
    density = counts / (total * widths)
    weighted = sums / (total * widths)
    return density, weighted


def polygenicity_score(values, drop_threshold: float = 0.2) -> int:
    """Number of scale intervals whose loss drop exceeds ``drop_threshold`` of the total drop.

    1 reads as a single emergence (monogenic-like), >= 2 as gradual progress
    over several scales, 0 as no net improvement.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least 2 scale points")
    if not drop_threshold > 0:
        raise ValueError("drop_threshold must be positive")
    total = v[0] - v[-1]
    if not total > 0:
        return 0
    drops = v[:-1] - v[1:]
    return int(np.sum(drops > drop_threshold * total))


def convergence_steps(record_or_run, threshold: float = 0.1) -> dict[int, int]:
    """Subtask id -> first step with loss below ``threshold`` bits (single run)."""
    run = record_or_run.runs[-1] if isinstance(record_or_run, SweepRecord) else record_or_run
    series = track_step_scaling(run)
    out = {}
    for i in range(series.subtask_loss.shape[1]):
        s = subtask_convergence_step(series.subtask_curve(i + 1), threshold)
        if s is not None:
            out[i + 1] = int(s)
    return out


@dataclass(frozen=True)
class ConvergenceLaw:
    spearman: float
    beta: float
    r_squared: float
    n_subtasks: int


def convergence_time_law(frequencies, conv: dict[int, int]) -> ConvergenceLaw:
    """Fit S_i ~ p_i^-beta over the subtasks that converged."""
    from scipy.stats import spearmanr

    ids = sorted(conv)
    if len(ids) < 3:
        raise FitError(f"need at least 3 converged subtasks, got {len(ids)}")
    p = np.asarray(frequencies)[np.array(ids) - 1]
    s = np.array([conv[i] for i in ids], dtype=np.float64)
    rho = float(spearmanr(np.log(p), np.log(s)).statistic)
    fit = fit_power_law(list(zip(p, s)))
    return ConvergenceLaw(rho, -fit.exponent, fit.r_squared, len(ids))
