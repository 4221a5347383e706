"""Command-line entry point: ``quanta <subcommand> ...``.

Every subcommand writes its artifacts plus a ``manifest.json`` into
``--out-dir``. Failures exit nonzero and print a one-line JSON error record
on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .seeds import named_seeds
from .storage import ExperimentManifest, FormatError, write_csv

log = logging.getLogger("quanta")

THREADS_ENV = "QUANTA_THREADS"


class CliError(Exception):
    kind = "error"


class InputError(CliError):
    kind = "io_error"


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    if not 0 < lo <= hi:
        raise argparse.ArgumentTypeError(f"need 0 < lo <= hi, got {text!r}")
    return lo, hi


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {path}")
    return p


def _manifest(args, config: dict) -> ExperimentManifest:
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    return ExperimentManifest(__version__, args.command, config, {"master": seed, **named_seeds(seed)}, argv=list(args.argv))


def _finish(args, man: ExperimentManifest, outputs) -> None:
    for p in outputs:
        man.add_output(p)
    man.write(args.out_dir)
    print(json.dumps({"status": "ok", "manifest_hash": man.hash, "outputs": sorted(man.outputs)}))


# ---------------------------------------------------------------------------
# theory


def cmd_theory(args) -> None:
    from . import theory as th

    dist = th.QuantaDistribution(args.alpha)
    profile = th.parse_profile(args.loss_profile)
    lo, hi = args.n
    if args.points:
        grid = np.unique(np.round(np.logspace(np.log10(lo), np.log10(hi), args.points)))
    else:
        grid = np.arange(int(np.ceil(lo)), int(np.floor(hi)) + 1, dtype=np.float64)
    if grid.size == 0:
        raise CliError(f"empty grid for --n {lo}:{hi}")
    pred = th.scaling_prediction(args.axis, dist, args.capacity, args.tau, args.first_steps)
    if args.axis == "params":
        ns = grid.astype(np.int64)
    elif args.axis == "data":
        ns = np.array([th.quanta_from_data(D, pred, dist) for D in grid])
    else:
        ns = np.array([th.quanta_from_steps(S, pred, dist) for S in grid])
    exact = th.expected_loss_exact_curve(ns, dist, profile)
    closed = [th.expected_loss_closed(n, dist, profile) if n >= 1 else e for n, e in zip(ns, exact)]
    config = {
        "alpha": args.alpha,
        "profile": th.profile_name(profile),
        "axis": args.axis,
        "n": [lo, hi],
        "points": args.points,
        "capacity": args.capacity,
        "tau": args.tau,
        "first_steps": args.first_steps,
    }
    man = _manifest(args, config)
    out = Path(args.out_dir) / "theory.csv"
    name = th.profile_name(profile)
    rows = [(int(g) if g == int(g) else g, args.axis, args.alpha, name, e, c) for g, e, c in zip(grid, exact, closed)]
    write_csv(out, ["n_or_scale", "axis", "alpha", "profile", "loss_exact", "loss_closed"], rows, man.hash)
    _finish(args, man, [out])


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> None:
    from .parity import build_task_spec, draw_batch, fixed_eval_set
    from .seeds import stream
    from .storage import dataset_csv, write_dataset
    from .sweep import PROFILES

    base = PROFILES[args.run_profile]()
    n_tasks = args.n_tasks or base.n_tasks
    n = args.n or base.n
    k = args.k or base.k
    alpha = args.alpha if args.alpha is not None else base.alpha
    seed = args.seed if args.seed is not None else 0
    spec = build_task_spec(n_tasks, n, k, alpha, seed)
    if args.eval_per_task:
        batch = fixed_eval_set(spec, args.eval_per_task, stream(seed, "eval"))
    else:
        batch = draw_batch(spec, args.samples, stream(seed, "data", "gen", args.samples))
    config = {"n_tasks": n_tasks, "n": n, "k": k, "alpha": alpha, "seed": seed, "samples": args.samples, "eval_per_task": args.eval_per_task}
    man = _manifest(args, config)
    out = Path(args.out_dir) / ("dataset.csv" if args.csv else "dataset.bin")
    if args.csv:
        out.write_text(f"# manifest={man.hash}\n" + dataset_csv(batch))
    else:
        write_dataset(out, spec, batch)
    _finish(args, man, [out])


# ---------------------------------------------------------------------------
# sweep


def _sweep_config(args):
    from .sweep import PROFILES, ConfigError, SweepConfig

    if args.config:
        path = _existing(args.config)
        cfg = SweepConfig.from_json(path.read_text())
        data = cfg.to_dict()
    else:
        data = PROFILES[args.run_profile]().to_dict()
    data["axis"] = args.axis
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        return SweepConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def sweep_outputs(record, out_dir, manifest_hash: str) -> list[Path]:
    """curves.csv, fits.csv and the two plots for a finished sweep."""
    from .plot import PlotSpec, Series, emit_svg
    from .sweep import FitError, fit_power_law, fit_sweep, track_step_scaling
    from .theory import NATS_TO_BITS

    out_dir = Path(out_dir)
    cfg = record.config
    freqs = record.frequencies
    if record.axis == "steps":
        series = track_step_scaling(record.runs[0])
        scales = series.steps.astype(np.float64)
        per = series.subtask_loss * NATS_TO_BITS
        mean = series.mean_loss
    else:
        scales = record.scales
        per = record.selected_subtask_losses() * NATS_TO_BITS
        mean = record.mean_losses()
    rows = [(float(s), i + 1, float(freqs[i]), float(per[j, i])) for j, s in enumerate(scales) for i in range(cfg.n_tasks)]
    curves = out_dir / "curves.csv"
    write_csv(curves, ["scale", "subtask_id", "freq", "loss_bits"], rows, manifest_hash)

    try:
        if record.axis == "steps":
            pts = [(s, m) for s, m in zip(scales, mean) if m > 0]
            fit = fit_power_law(pts)
        else:
            fit = fit_sweep(record)
        fit_rows = [(record.axis, -fit.exponent, fit.prefactor, fit.r_squared)]
    except FitError as exc:
        log.warning("no power-law fit: %s", exc)
        fit_rows = [(record.axis, float("nan"), float("nan"), float("nan"))]
    fits = out_dir / "fits.csv"
    write_csv(fits, ["axis", "exponent", "prefactor", "r2"], fit_rows, manifest_hash)

    unit = "bits" if cfg.loss_unit == "bits" else "nats"
    factor = NATS_TO_BITS if unit == "bits" else 1.0
    xlabel = {"params": "parameters", "data": "training samples", "steps": "steps"}[record.axis]
    mean_pts = [(float(s), float(m * factor)) for s, m in zip(scales, mean) if m > 0]
    loss_svg = out_dir / "loss.svg"
    emit_svg(
        PlotSpec([Series("mean test loss", mean_pts, {"marker": True})], title=f"{record.axis} scaling", x_label=xlabel, y_label=f"loss ({unit})", metadata=f"manifest={manifest_hash}"),
        loss_svg,
    )
    spaghetti = []
    for i in range(cfg.n_tasks):
        pts = [(float(s), float(v)) for s, v in zip(scales, per[:, i]) if v > 0]
        if len(pts) >= 2:
            spaghetti.append(Series(f"subtask {i + 1}", pts, {"opacity": 0.35, "width": 1, "no_legend": i >= 5}))
    sub_svg = out_dir / "subtasks.svg"
    emit_svg(PlotSpec(spaghetti, title="per-subtask loss", x_label=xlabel, y_label="loss (bits)", metadata=f"manifest={manifest_hash}"), sub_svg)
    return [curves, fits, loss_svg, sub_svg]


def cmd_sweep(args) -> None:
    from .sweep import run_sweep

    cfg = _sweep_config(args)
    man = _manifest(args, cfg.to_dict())
    if args.config:
        man.add_input(args.config)
    out_dir = Path(args.out_dir)
    record = run_sweep(cfg, workers=args.threads, checkpoint_dir=out_dir)
    record.manifest.update({"manifest_hash": man.hash})
    rec_path = out_dir / "record.json"
    record.save(rec_path)
    outputs = [rec_path, *sweep_outputs(record, out_dir, man.hash), *sorted(out_dir.glob("*.ckpt"))]
    _finish(args, man, outputs)


# ---------------------------------------------------------------------------
# qdg


def cmd_qdg(args) -> None:
    from .clusters import rank_frequency
    from .mlp import load_checkpoint
    from .plot import render_heatmap
    from .qdg import angular_affinity, block_order, block_similarity, cluster_purity, factored_cosine_affinity, retained_samples, spectral_cluster
    from .storage import read_dataset, write_affinity
    from .theory import NATS_TO_BITS

    model_path, data_path = _existing(args.model), _existing(args.data)
    model = load_checkpoint(model_path)
    spec, batch = read_dataset(data_path)
    if model.input_dim != spec.input_dim:
        raise CliError(f"model input_dim {model.input_dim} does not match dataset ({spec.input_dim})")
    pool = np.arange(len(batch))
    if args.top_subtasks:
        pool = np.flatnonzero(batch.subtask_ids <= args.top_subtasks)
    sub = batch.take(pool)
    filt = args.loss_filter / NATS_TO_BITS if args.loss_unit == "bits" else args.loss_filter
    keep = retained_samples(model, sub, filt)
    if keep.size == 0:
        raise CliError(f"no sample has loss below {args.loss_filter} {args.loss_unit}")
    C, ok = factored_cosine_affinity(model, sub.take(keep))
    ids = pool[keep[ok]]
    truth = batch.subtask_ids[ids]
    A = angular_affinity(C)
    seed = args.seed if args.seed is not None else 0
    k = min(args.n_clusters, len(ids))
    assign = spectral_cluster(A, k, seed=seed)
    config = {
        "n_clusters": k,
        "loss_filter": args.loss_filter,
        "loss_unit": args.loss_unit,
        "top_subtasks": args.top_subtasks,
        "seed": seed,
        "kmeans": {"init": "k-means++", "n_init": 10, "max_iter": 300},
    }
    man = _manifest(args, config)
    man.add_input(model_path)
    man.add_input(data_path)
    out_dir = Path(args.out_dir)
    labels = out_dir / "labels.csv"
    write_csv(labels, ["sample_id", "cluster", "ground_truth"], zip(ids, assign.labels, truth), man.hash)
    rf = rank_frequency(assign)
    rank_csv = out_dir / "rankfreq.csv"
    write_csv(rank_csv, ["k", "rank", "size"], [(k, r, s) for r, s in zip(rf.ranks, rf.sizes)], man.hash)
    within, between = block_similarity(A.values, truth)
    summary = out_dir / "summary.csv"
    write_csv(
        summary,
        ["n_samples", "n_clusters", "purity", "within_similarity", "between_similarity"],
        [(len(ids), k, cluster_purity(assign.labels, truth), within, between)],
        man.hash,
    )
    order = block_order(assign.labels)
    heat = out_dir / "similarity.svg"
    heat.write_text(render_heatmap(A.values[np.ix_(order, order)], title="angular similarity", metadata=f"manifest={man.hash}"))
    outputs = [labels, rank_csv, summary, heat]
    if args.write_affinity:
        aff = out_dir / "affinity.bin"
        write_affinity(aff, A)
        outputs.append(aff)
    _finish(args, man, outputs)


# ---------------------------------------------------------------------------
# toy / envelope


def _envelope_outputs(curves, window, out_dir, manifest_hash, title) -> list[Path]:
    from .clusters import envelope, envelope_slope
    from .plot import PlotSpec, Series, emit_svg

    out_dir = Path(out_dir)
    ranks, env = envelope(curves)
    fit = envelope_slope(curves, window)
    env_csv = out_dir / "envelope.csv"
    rows = [(int(r), int(s), int(fit.lo <= r <= fit.hi)) for r, s in zip(ranks, env)]
    write_csv(env_csv, ["rank", "size", "in_window"], rows, manifest_hash)
    fit_csv = out_dir / "envelope_fit.csv"
    write_csv(fit_csv, ["slope", "intercept", "r2", "lo", "hi", "n_curves"], [(fit.slope, fit.intercept, fit.r_squared, fit.lo, fit.hi, fit.n_curves)], manifest_hash)
    series = [Series(f"k={c.n_clusters}", [(float(r), float(s)) for r, s in zip(c.ranks, c.sizes)], {"opacity": 0.6}) for c in curves]
    series.append(Series("envelope", [(float(r), float(s)) for r, s in zip(ranks, env) if s > 0], {"color": "black", "width": 2}))
    fit_line = [(float(r), float(np.exp(fit.intercept) * r**fit.slope)) for r in (fit.lo, fit.hi)]
    series.append(Series(f"slope {fit.slope:.3f}", fit_line, {"color": "black", "dash": "4 3"}))
    svg = out_dir / "envelope.svg"
    emit_svg(PlotSpec(series, title=title, x_label="rank", y_label="cluster size", metadata=f"manifest={manifest_hash}"), svg)
    return [env_csv, fit_csv, svg]


def cmd_toy(args) -> None:
    from dataclasses import asdict

    from .clusters import ToyModelConfig, alpha_recovery_sweep, toy_cluster_sweep, toy_paper_config

    if args.config:
        data = json.loads(_existing(args.config).read_text())
        if "k_list" in data:
            data["k_list"] = tuple(data["k_list"])
        try:
            cfg = ToyModelConfig(**data)
        except TypeError as exc:
            raise CliError(f"config: {exc}") from exc
    else:
        cfg = toy_paper_config() if args.run_profile == "paper" else ToyModelConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    config = {**asdict(cfg), "k_list": list(cfg.k_list), "window": list(args.window), "alphas": args.alphas}
    man = _manifest(args, config)
    if args.config:
        man.add_input(args.config)
    out_dir = Path(args.out_dir)
    res = toy_cluster_sweep(cfg)
    rank_csv = out_dir / "rankfreq.csv"
    write_csv(rank_csv, ["k", "rank", "size"], [(c.n_clusters, r, s) for c in res.curves for r, s in zip(c.ranks, c.sizes)], man.hash)
    outputs = [rank_csv, *_envelope_outputs(res.curves, args.window, out_dir, man.hash, f"toy model, alpha={cfg.alpha:g}")]
    if args.alphas:
        rec = alpha_recovery_sweep(args.alphas, cfg, args.window)
        rec_csv = out_dir / "recovery.csv"
        write_csv(rec_csv, ["alpha", "slope", "error", "r2"], [(r.alpha, r.slope, r.error, r.r_squared) for r in rec.rows], man.hash)
        outputs.append(rec_csv)
    _finish(args, man, outputs)


def read_rank_csv(path):
    from .clusters import RankFrequencyCurve
    from .storage import read_csv

    header, rows = read_csv(path)
    if header[:3] != ["k", "rank", "size"]:
        raise FormatError(f"{path}: expected columns k,rank,size")
    by_k: dict[int, list[tuple[int, int]]] = {}
    for k, r, s in (row[:3] for row in rows):
        by_k.setdefault(int(k), []).append((int(r), int(s)))
    return [RankFrequencyCurve(k, np.array([s for _, s in sorted(v)])) for k, v in sorted(by_k.items())]


def cmd_envelope(args) -> None:
    paths = [_existing(p) for p in args.curves]
    curves = [c for p in paths for c in read_rank_csv(p)]
    man = _manifest(args, {"window": list(args.window), "curves": [p.name for p in paths]})
    for p in paths:
        man.add_input(p)
    _finish(args, man, _envelope_outputs(curves, args.window, args.out_dir, man.hash, "rank-frequency envelope"))


# ---------------------------------------------------------------------------
# plot


def cmd_plot(args) -> None:
    from .plot import PlotSpec, Series, emit_svg
    from .storage import read_csv

    path = _existing(args.csv)
    header, rows = read_csv(path)
    cols = {name: i for i, name in enumerate(header)}
    for c in [args.x, args.y] + ([args.group] if args.group else []):
        if c not in cols:
            raise CliError(f"column {c!r} not in {path.name} (have {', '.join(header)})")
    groups: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        key = row[cols[args.group]] if args.group else args.y
        groups.setdefault(key, []).append((float(row[cols[args.x]]), float(row[cols[args.y]])))
    series = [Series(k, sorted(v)) for k, v in groups.items()]
    man = _manifest(args, {"csv": path.name, "x": args.x, "y": args.y, "group": args.group, "x_scale": args.x_scale, "y_scale": args.y_scale})
    man.add_input(path)
    out = Path(args.out_dir) / args.output
    emit_svg(PlotSpec(series, args.x_scale, args.y_scale, x_label=args.x, y_label=args.y, metadata=f"manifest={man.hash}"), out)
    _finish(args, man, [out])


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quanta", description="Quanta scaling experiments on multitask sparse parity.")
    p.add_argument("--threads", type=int, default=None, help=f"worker processes (default ${THREADS_ENV} or 1)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--profile", dest="run_profile", choices=["desk", "paper"], default="desk")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("theory", help="expected loss curves of the quanta model")
    t.add_argument("--alpha", type=float, default=0.4)
    t.add_argument("--profile", dest="loss_profile", default="constant:0,1", help="constant:a,b | logfreq | logoffset:C")
    t.add_argument("--n", type=_range, default=(1.0, 1e4), help="lo:hi range of n (or of D / S for data and steps)")
    t.add_argument("--axis", choices=["params", "data", "steps"], default="params")
    t.add_argument("--points", type=int, default=0, help="log-spaced points instead of every integer")
    t.add_argument("--capacity", type=float, default=1.0, help="parameters per quantum")
    t.add_argument("--tau", type=float, default=1.0, help="samples needed to learn a quantum")
    t.add_argument("--first-steps", type=float, default=1.0, help="steps to learn the first quantum")
    t.set_defaults(func=cmd_theory)

    g = sub.add_parser("gen", help="sample a multitask sparse parity dataset")
    g.add_argument("--n-tasks", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--samples", "-m", type=int, default=10_000)
    g.add_argument("--eval-per-task", type=int, default=0, help="stratified set with this many samples per subtask")
    g.add_argument("--csv", action="store_true", help="write a debug CSV instead of the binary file")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sweep", help="train networks along one scaling axis")
    s.add_argument("axis", choices=["params", "data", "steps"])
    s.add_argument("--config", help="JSON SweepConfig (defaults to the --profile settings)")
    s.set_defaults(func=cmd_sweep)

    q = sub.add_parser("qdg", help="cluster samples by gradient similarity")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--n-clusters", type=int, default=30)
    q.add_argument("--loss-filter", type=float, default=0.1)
    q.add_argument("--loss-unit", choices=["nats", "bits"], default="nats")
    q.add_argument("--top-subtasks", type=int, default=0, help="keep only the most frequent subtasks")
    q.add_argument("--write-affinity", action="store_true")
    q.set_defaults(func=cmd_qdg)

    y = sub.add_parser("toy", help="rank-frequency envelope of the Gaussian cluster model")
    y.add_argument("--config", help="JSON ToyModelConfig")
    y.add_argument("--window", type=_range, default=(10, 300))
    y.add_argument("--alphas", type=_floats, default=None, help="also run an alpha-recovery sweep")
    y.set_defaults(func=cmd_toy)

    e = sub.add_parser("envelope", help="envelope slope of rank-frequency CSVs")
    e.add_argument("--curves", nargs="+", required=True)
    e.add_argument("--window", type=_range, default=(10, 300))
    e.set_defaults(func=cmd_envelope)

    pl = sub.add_parser("plot", help="SVG plot of two CSV columns")
    pl.add_argument("--csv", required=True)
    pl.add_argument("--x", required=True)
    pl.add_argument("--y", required=True)
    pl.add_argument("--group")
    pl.add_argument("--x-scale", choices=["log", "linear"], default="log")
    pl.add_argument("--y-scale", choices=["log", "linear"], default="log")
    pl.add_argument("--output", default="plot.svg")
    pl.set_defaults(func=cmd_plot)
    return p


def _error_kind(exc: BaseException) -> str:
    from .sweep import ConfigError

    if isinstance(exc, CliError):
        return exc.kind
    if isinstance(exc, ConfigError):
        return "config_error"
    if isinstance(exc, (OSError, FormatError)):
        return "io_error"
    return "error"


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None:
        args.threads = int(os.environ.get(THREADS_ENV, "1"))
    try:
        from threadpoolctl import threadpool_limits

        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=max(1, args.threads)):
            args.func(args)
    except Exception as exc:  # reported as a machine-readable record
        record = {"status": "error", "kind": _error_kind(exc), "type": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
