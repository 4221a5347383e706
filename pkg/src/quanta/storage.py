"""On-disk formats: parity datasets, affinity matrices, CSV tables and run manifests.

Binary files are little-endian and start with a 4-byte magic and a u32
format version.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .parity import SampleBatch, TaskSpec, build_task_spec
from .qdg import AffinityMatrix

DATASET_MAGIC = b"QPAR"
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sIIIIdQQ")  # magic, version, n_tasks, n, k, alpha, seed, m

AFFINITY_MAGIC = b"QAFF"
AFFINITY_VERSION = 1
_AFFINITY_HEADER = struct.Struct("<4sIQ8s")  # magic, version, m, kind
_KINDS = ("cosine", "angular", "toy")


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# datasets


def write_dataset(path, spec: TaskSpec, batch: SampleBatch) -> None:
    """Header, then each input row bit-packed, then one byte per label."""
    if batch.n_tasks != spec.n_tasks or batch.task_bits.shape[1] != spec.n:
        raise FormatError("batch does not match the task spec")
    header = _DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, spec.n_tasks, spec.n, spec.k, spec.alpha, spec.seed, len(batch))
    rows = np.packbits(batch.inputs.astype(np.uint8), axis=1, bitorder="little")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rows.tobytes())
        fh.write(batch.labels.astype(np.uint8).tobytes())


def read_dataset(path) -> tuple[TaskSpec, SampleBatch]:
    raw = Path(path).read_bytes()
    if len(raw) < _DATASET_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n_tasks, n, k, alpha, seed, m = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: not a parity dataset (magic {magic!r})")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    width = n_tasks + n
    row_bytes = (width + 7) // 8
    body = np.frombuffer(raw, dtype=np.uint8, offset=_DATASET_HEADER.size)
    if body.size != m * row_bytes + m:
        raise FormatError(f"{path}: expected {m * row_bytes + m} payload bytes, found {body.size}")
    inputs = np.unpackbits(body[: m * row_bytes].reshape(m, row_bytes), axis=1, count=width, bitorder="little")
    labels = body[m * row_bytes :].copy()
    spec = build_task_spec(n_tasks, n, k, alpha, seed)
    return spec, SampleBatch.from_inputs(inputs, labels, n_tasks)


def dataset_csv(batch: SampleBatch) -> str:
    """Debug view: subtask id, label and the task bits as a 0/1 string."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "subtask_id", "label", "task_bits"])
    for i in range(len(batch)):
        w.writerow([i, int(batch.subtask_ids[i]), int(batch.labels[i]), "".join(map(str, batch.task_bits[i]))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# affinities


def write_affinity(path, affinity: AffinityMatrix) -> None:
    if affinity.kind not in _KINDS:
        raise FormatError(f"unknown affinity kind {affinity.kind!r}")
    vals = np.ascontiguousarray(affinity.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_AFFINITY_HEADER.pack(AFFINITY_MAGIC, AFFINITY_VERSION, vals.shape[0], affinity.kind.encode().ljust(8, b"\0")))
        fh.write(vals.tobytes())


def read_affinity(path) -> AffinityMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _AFFINITY_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, m, kind = _AFFINITY_HEADER.unpack_from(raw)
    if magic != AFFINITY_MAGIC or version != AFFINITY_VERSION:
        raise FormatError(f"{path}: not a version {AFFINITY_VERSION} affinity file")
    vals = np.frombuffer(raw, dtype="<f8", offset=_AFFINITY_HEADER.size)
    if vals.size != m * m:
        raise FormatError(f"{path}: expected {m * m} values, found {vals.size}")
    return AffinityMatrix(vals.reshape(m, m).astype(np.float64), kind.rstrip(b"\0").decode())


# ---------------------------------------------------------------------------
# CSV


def fmt(v) -> str:
    """Locale-independent text for one cell; floats keep 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence], manifest_hash: str | None = None) -> str:
    buf = io.StringIO()
    if manifest_hash:
        buf.write(f"# manifest={manifest_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], manifest_hash: str | None = None) -> None:
    Path(path).write_text(csv_text(header, rows, manifest_hash))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def csv_payload(text: str) -> str:
    """The CSV without its manifest comment line."""
    return "\n".join(ln for ln in text.splitlines() if not ln.startswith("#"))


# ---------------------------------------------------------------------------
# manifests


def git_blob_hash(data: bytes) -> str:
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class ExperimentManifest:
    """Provenance of one CLI invocation.

    ``hash`` depends only on the tool version, command, resolved config and
    input contents, so reruns of the same experiment share it.
    """

    tool_version: str
    command: str
    config: dict
    seeds: dict
    argv: list[str] = field(default_factory=list)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    started: str = field(default_factory=_now)
    finished: str = ""

    @property
    def hash(self) -> str:
        key = {"tool_version": self.tool_version, "command": self.command, "config": self.config, "inputs": self.inputs}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]

    def add_input(self, path) -> None:
        self.inputs[Path(path).name] = git_blob_hash(Path(path).read_bytes())

    def add_output(self, path) -> None:
        self.outputs[Path(path).name] = git_blob_hash(Path(path).read_bytes())

    def to_dict(self) -> dict:
        return {
            "manifest_hash": self.hash,
            "tool_version": self.tool_version,
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "finished": self.finished,
        }

    def write(self, out_dir) -> Path:
        """Finalise and write ``manifest.json``; written last as the commit point."""
        self.finished = _now()
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        d = json.loads(Path(path).read_text())
        d.pop("manifest_hash", None)
        return cls(**d)
