"""Cached desk-scale runs shared by the CLI and the acceptance suite.

Each sweep is stored under ``<cache>/<axis>-<config hash>/`` with its
record and checkpoints, so a finished run is never repeated.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

from .sweep import SweepConfig, SweepRecord, desk_profile, run_sweep

log = logging.getLogger(__name__)

DEFAULT_CACHE = Path(__file__).resolve().parents[2] / "results" / "desk"


def cache_root() -> Path:
    return Path(os.environ.get("QUANTA_CACHE", DEFAULT_CACHE))


def run_dir(config: SweepConfig, root=None) -> Path:
    return Path(root or cache_root()) / f"{config.axis}-{config.config_hash()}"


def cached_sweep(config: SweepConfig, root=None, workers: int = 1, compute: bool = True) -> SweepRecord | None:
    """Load the record for ``config`` or run and store it (None if absent and not ``compute``)."""
    d = run_dir(config, root)
    rec = d / "record.json"
    if rec.exists():
        return SweepRecord.load(rec)
    if not compute:
        return None
    d.mkdir(parents=True, exist_ok=True)
    log.info("running %s sweep into %s", config.axis, d)
    record = run_sweep(config, workers=workers, checkpoint_dir=d)
    tmp = d / "record.json.tmp"
    record.save(tmp)
    tmp.replace(rec)
    return record


def desk_param_config() -> SweepConfig:
    return desk_profile("params")


def desk_data_config() -> SweepConfig:
    return desk_profile("data")


if __name__ == "__main__":
    import sys

    logging.basicConfig(level=logging.INFO)
    for axis in sys.argv[1:] or ["params", "data"]:
        cached_sweep(desk_profile(axis))
