"""Configuration, file formats and run manifests.

CSV floats are written with ``repr`` so every value parses back bit for bit.
Heatmaps are 16-bit binary PGM files with a JSON sidecar holding the grid
origin, cell size and the normalisation bounds.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .compliance import FinRayModel
from .control import PlantParams, Scenario, ScenarioKind
from .errors import ConfigError, IoFailure
from .kinematics import LinkageGeometry
from .slipnet import SlipDataset, TrainConfig
from .tactile import CSV_HEADER, N_ARRAYS, N_TAXELS, TactileFrame, TraceSpec, stack, unstack

CONFIG_ENV = "FINRAY_CONFIG"

_NUM = {"type": "number"}
_INT = {"type": "integer"}


def _field_schema(value) -> dict:
    if isinstance(value, bool):
        return {"type": "boolean"}
    if isinstance(value, int):
        return {"type": "integer"}
    if isinstance(value, float):
        return {"type": "number"}
    if isinstance(value, (tuple, list)):
        return {"type": "array", "items": _NUM}
    if isinstance(value, str):
        return {"type": "string"}
    return {}


def _section(instance, **override) -> dict:
    """Object schema keyed by the dataclass fields of ``instance``; types from its defaults."""
    props = {k: _field_schema(getattr(instance, k)) for k in instance.__dataclass_fields__}
    props.update(override)
    return {"type": "object", "properties": props, "additionalProperties": False}


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "linkage": _section(LinkageGeometry(), theta_offset={"type": ["number", "null"]},
                            actuator_travel={"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}),
        "finray": _section(FinRayModel(),
                           rest_shape={"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}),
        "trace": _section(TraceSpec()),
        "train": _section(TrainConfig(), learning_rate={"type": "number", "minimum": 0},
                          epochs={"type": "integer", "minimum": 1},
                          hidden={"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}),
        "plant": _section(PlantParams()),
        "scenario": _section(Scenario(), kind={"enum": [k.value for k in ScenarioKind]},
                             cap_load={"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}),
        "catalog": {"type": ["string", "null"]},
    },
}


@dataclass(frozen=True)
class ToolConfig:
    linkage: LinkageGeometry = field(default_factory=LinkageGeometry)
    finray: FinRayModel = field(default_factory=FinRayModel)
    trace: TraceSpec = field(default_factory=TraceSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    scenario: dict = field(default_factory=dict)
    catalog: str | None = None

    def to_dict(self) -> dict:
        return {
            "linkage": self.linkage.to_dict(),
            "finray": self.finray.to_dict(),
            "trace": self.trace.to_dict(),
            "train": self.train.to_dict(),
            "plant": self.plant.to_dict(),
            "scenario": dict(self.scenario),
            "catalog": self.catalog,
        }

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def config_from_dict(d: dict) -> ToolConfig:
    """Validate against the schema, then build typed sections."""
    try:
        jsonschema.validate(d, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}") from None
    try:
        return ToolConfig(
            linkage=LinkageGeometry.from_dict(d.get("linkage", {})),
            finray=FinRayModel.from_dict(d.get("finray", {})),
            trace=TraceSpec.from_dict(d.get("trace", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            plant=PlantParams.from_dict(d.get("plant", {})),
            scenario=dict(d.get("scenario", {})),
            catalog=d.get("catalog"),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config rejected: {e}") from None


def default_config_path() -> Path:
    return Path(str(resources.files("finray").joinpath("data/default_config.json")))


def load_config(path=None) -> ToolConfig:
    """Load ``path``, else ``$FINRAY_CONFIG``, else the packaged defaults."""
    path = path or os.environ.get(CONFIG_ENV) or default_config_path()
    return config_from_dict(read_json(path))


# -------------------------------------------------------------------- json

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise IoFailure(f"no such file: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None


def write_json(path, obj) -> Path:
    return write_text(path, canonical_json(obj))


def write_text(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            f.write(text)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from None
    return path


# --------------------------------------------------------------------- csv

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> Path:
    return write_text(path, format_csv(header, rows))


def parse_csv(text: str, source="<text>") -> tuple:
    """Header and rows as strings."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise IoFailure(f"{source}: empty CSV")
    return rows[0], rows[1:]


def read_csv(path) -> tuple:
    try:
        with open(path, newline="") as f:
            text = f.read()
    except FileNotFoundError:
        raise IoFailure(f"no such file: {path}") from None
    return parse_csv(text, path)


def format_trace(frames, labels=None) -> str:
    t, x = stack(frames)
    header = CSV_HEADER + (["label"] if labels is not None else [])
    flat = x.reshape(len(t), -1)
    rows = []
    for i in range(len(t)):
        row = [float(t[i])] + [float(v) for v in flat[i]]
        if labels is not None:
            row.append(int(labels[i]))
        rows.append(row)
    return format_csv(header, rows)


def write_trace(path, frames, labels=None) -> Path:
    return write_text(path, format_trace(frames, labels))


def read_trace(path) -> tuple:
    """Frames and labels (None when the file has no label column)."""
    header, rows = read_csv(path)
    if header[: len(CSV_HEADER)] != CSV_HEADER:
        raise IoFailure(f"{path}: not a trace file (unexpected header)")
    labelled = len(header) == len(CSV_HEADER) + 1 and header[-1] == "label"
    data = np.array([[float(v) for v in r[: len(CSV_HEADER)]] for r in rows]).reshape(-1, len(CSV_HEADER))
    frames = unstack(data[:, 0], data[:, 1:].reshape(-1, N_ARRAYS, N_TAXELS))
    labels = np.array([int(r[-1]) for r in rows], dtype=int) if labelled else None
    return frames, labels


def dataset_header(window: int = 1) -> list:
    """Trace columns, then ``lag{j}_`` columns for older frames, then ``label``."""
    lags = [f"lag{j}_{c}" for j in range(1, window) for c in CSV_HEADER[1:]]
    return CSV_HEADER + lags + ["label"]


def write_dataset(path, dataset: SlipDataset) -> Path:
    n, k = len(dataset), dataset.window
    t = dataset.timestamps if dataset.timestamps is not None else np.arange(n, dtype=float)
    x = dataset.features.reshape(n, N_ARRAYS * N_TAXELS, k).transpose(0, 2, 1).reshape(n, -1)
    rows = ([float(t[i])] + [float(v) for v in x[i]] + [int(dataset.labels[i])] for i in range(n))
    return write_csv(path, dataset_header(k), rows)


def read_dataset(path, split: str = "train") -> SlipDataset:
    header, rows = read_csv(path)
    nodes = N_ARRAYS * N_TAXELS
    k = (len(header) - 2) // nodes
    if k < 1 or header != dataset_header(k):
        raise IoFailure(f"{path}: not a dataset file (unexpected header)")
    data = np.array([[float(v) for v in r[:-1]] for r in rows]).reshape(-1, 1 + k * nodes)
    labels = np.array([int(r[-1]) for r in rows], dtype=int)
    x = data[:, 1:].reshape(-1, k, nodes).transpose(0, 2, 1)
    return SlipDataset(x[..., 0] if k == 1 else x, labels, split, data[:, 0])


# ---------------------------------------------------------------- manifest

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    command: list
    config_hash: str
    seed: int | None
    version: str
    outputs: dict           # file name -> sha256

    def to_dict(self) -> dict:
        return {"command": list(self.command), "config_hash": self.config_hash, "seed": self.seed,
                "version": self.version, "outputs": dict(sorted(self.outputs.items()))}


def write_manifest(path, argv, config: ToolConfig, seed, outputs) -> RunManifest:
    base = Path(path).parent
    digests = {}
    for p in outputs:
        p = Path(p)
        name = str(p.relative_to(base)) if p.is_relative_to(base) else str(p)
        digests[name] = file_digest(p)
    m = RunManifest(list(argv), config.digest(), seed, __version__, digests)
    write_json(path, m.to_dict())
    return m


# ----------------------------------------------------------------- heatmap

PGM_MAX = 65535
ZERO_RANGE_VALUE = 32768  # every pixel of a constant grid


def heatmap_pixels(values: np.ndarray) -> tuple:
    """Min-max scale to 0..65535. A constant grid maps to the mid value.

    Rows are flipped so the first image row is the largest y.
    """
    v = np.asarray(values, float)
    if v.size == 0:
        raise ValueError("empty grid")
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi > lo:
        px = np.rint((v - lo) / (hi - lo) * PGM_MAX).astype(np.uint16)
    else:
        px = np.full(v.shape, ZERO_RANGE_VALUE, dtype=np.uint16)
    return px[::-1], lo, hi


def emit_heatmap(grid, path) -> tuple:
    """Write ``path`` (binary 16-bit PGM) and ``path + '.json'``. Returns both paths."""
    px, lo, hi = heatmap_pixels(grid.values)
    h, w = px.shape
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n{PGM_MAX}\n".encode("ascii"))
            f.write(px.astype(">u2").tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from None
    side = Path(str(path) + ".json")
    write_json(side, {
        "origin": [float(grid.origin[0]), float(grid.origin[1])],
        "cell_size": float(grid.cell_size),
        "shape": [int(h), int(w)],
        "min": lo,
        "max": hi,
        "row_order": "first row is the largest y",
    })
    return path, side


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise IoFailure(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data[m.end():], dtype=dtype, count=w * h).reshape(h, w).astype(np.int64)
