"""Dataset (JSONL) and checkpoint (little-endian binary) serialization.

Checkpoint layout::

    b"E2ED" | u32 version | u32 n + config JSON | u32 tensor count |
    per tensor: u16 n + UTF-8 name | u8 rank | rank x u32 dims | f64 data
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import ModelConfig
from .evaluation import GroundTruthReplay
from .model import DrivingModel, model_param_shapes
from .scenario import MANEUVERS, Episode, Scenario, sample_scenario

DATASET_FILE = "episodes.jsonl"
MAGIC = b"E2ED"
VERSION = 1
MODEL_KIND = "driving_model"
GT_REPLAY_KIND = "gt_replay"

ARRAY_KEYS = {"image": 64 * 64 * 3, "ego_history": 32, "gt_traj": 60}
TEXT_KEYS = ("nav_text", "prompt_text", "gt_text")
KEYS = ("seed", "maneuver", "image", "ego_history", "nav_text", "prompt_text", "gt_traj", "gt_text")


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DatasetSchemaError(DatasetFormatError):
    def __init__(self, key: str, message: str, line: int | None = None):
        self.key = key
        super().__init__(f"key {key!r}: {message}", line)


class CheckpointFormatError(ValueError):
    pass


class CheckpointCompatibilityError(ValueError):
    pass


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def file_digest(path) -> str:
    """Short content hash used as checkpoint and dataset identifiers."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# ------------------------------------------------------------------ datasets


def episode_to_dict(e: Episode) -> dict:
    d = {
        "seed": int(e.seed),
        "maneuver": e.maneuver,
        "image": np.asarray(e.image, dtype=np.float64).reshape(-1).tolist(),
        "ego_history": np.asarray(e.ego_history, dtype=np.float64).reshape(-1).tolist(),
        "nav_text": e.nav_text,
        "prompt_text": e.prompt_text,
        "gt_traj": np.asarray(e.gt_traj, dtype=np.float64).reshape(-1).tolist(),
        "gt_text": e.gt_text,
    }
    # Scenarios are regenerated from the seed; only edited ones need storing.
    if e.scenario is not None and e.scenario != sample_scenario(e.seed):
        d["scenario"] = e.scenario.to_dict()
    return d


def _float_array(key, value, size, line) -> np.ndarray:
    if not isinstance(value, list):
        raise DatasetSchemaError(key, "expected an array", line)
    if len(value) != size:
        raise DatasetSchemaError(key, f"expected {size} values, got {len(value)}", line)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise DatasetSchemaError(key, "values must be numbers", line)
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DatasetSchemaError(key, "values must be finite", line)
    return arr


def episode_from_dict(d: dict, line: int | None = None) -> Episode:
    if not isinstance(d, dict):
        raise DatasetFormatError("expected a JSON object", line)
    for key in KEYS:
        if key not in d:
            raise DatasetSchemaError(key, "missing", line)
    seed = d["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise DatasetSchemaError("seed", "expected an unsigned 64-bit integer", line)
    if d["maneuver"] not in MANEUVERS:
        raise DatasetSchemaError("maneuver", f"unknown maneuver {d['maneuver']!r}", line)
    for key in TEXT_KEYS:
        if not isinstance(d[key], str):
            raise DatasetSchemaError(key, "expected a string", line)
    arrays = {k: _float_array(k, d[k], n, line) for k, n in ARRAY_KEYS.items()}
    if arrays["image"].min() < 0.0 or arrays["image"].max() > 1.0:
        raise DatasetSchemaError("image", "pixel values must lie in [0, 1]", line)
    try:
        scenario = Scenario.from_dict(d["scenario"]) if "scenario" in d else sample_scenario(seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetSchemaError("scenario", f"malformed ({exc})", line) from exc
    if scenario.maneuver != d["maneuver"]:
        raise DatasetSchemaError("maneuver", "does not match the scenario generated from the seed", line)
    return Episode(seed, d["maneuver"], arrays["image"].reshape(64, 64, 3), arrays["ego_history"],
                   d["nav_text"], d["prompt_text"], arrays["gt_traj"].reshape(10, 6), d["gt_text"], scenario)


def dumps_dataset(episodes) -> str:
    return "".join(json.dumps(episode_to_dict(e), ensure_ascii=False, allow_nan=False) + "\n" for e in episodes)


def write_dataset(path, episodes) -> None:
    _atomic_write(path, dumps_dataset(episodes).encode("utf-8"))


def read_dataset(path) -> list[Episode]:
    """Parse a JSONL dataset; blank lines are skipped and errors carry 1-based line numbers."""
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                d = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"malformed JSON ({exc.msg})", i) from exc
            episodes.append(episode_from_dict(d, i))
    return episodes


def dataset_path(path) -> Path:
    """Accept either a dataset directory or the JSONL file itself."""
    p = Path(path)
    return p / DATASET_FILE if p.is_dir() else p


# --------------------------------------------------------------- checkpoints


def _config_json(cfg: dict) -> bytes:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(model) -> bytes:
    if isinstance(model, GroundTruthReplay):
        config, tensors = {"kind": GT_REPLAY_KIND}, []
    else:
        config = dict(model.config.to_dict(), kind=MODEL_KIND)
        tensors = [(n, p.value) for n, p in model.params.items()]
    cfg = _config_json(config)
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, value in tensors:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(path, model) -> None:
    _atomic_write(path, checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated: need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Decode raw bytes into ``(config dict, {name: array})`` in file order."""
    r = _Reader(data)
    if bytes(r.take(4)) != MAGIC:
        raise CheckpointFormatError("bad magic: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (n_cfg,) = r.unpack("<I")
    try:
        config = json.loads(bytes(r.take(n_cfg)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"config block is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise CheckpointFormatError("config block must be a JSON object")
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n_name,) = r.unpack("<H")
        try:
            name = bytes(r.take(n_name)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError("tensor name is not UTF-8") from exc
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor {name!r}")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = math.prod(dims)
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(r.data):
        raise CheckpointFormatError(f"{len(r.data) - r.pos} trailing bytes after the last tensor")
    return config, tensors


def model_from_parts(config: dict, tensors: dict[str, np.ndarray]):
    kind = config.get("kind", MODEL_KIND)
    if kind == GT_REPLAY_KIND:
        if tensors:
            raise CheckpointCompatibilityError("ground-truth replay checkpoints carry no tensors")
        return GroundTruthReplay()
    if kind != MODEL_KIND:
        raise CheckpointCompatibilityError(f"unknown checkpoint kind {kind!r}")
    try:
        cfg = ModelConfig.from_dict({k: v for k, v in config.items() if k != "kind"})
    except (TypeError, ValueError) as exc:
        raise CheckpointCompatibilityError(f"invalid model config: {exc}") from exc
    cfg.lora_enabled = any(".lora_" in n for n in tensors)
    expected = {name: shape for name, shape, _ in model_param_shapes(cfg)}
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointCompatibilityError(f"tensor names do not match the config: missing={missing} extra={extra}")
    for name, arr in tensors.items():
        if arr.shape != tuple(expected[name]):
            raise CheckpointCompatibilityError(f"{name}: shape {arr.shape}, expected {tuple(expected[name])}")
    params = {n: nx.Parameter(n, arr) for n, arr in tensors.items()}
    return DrivingModel(cfg, params=params)


def load_checkpoint(path):
    """Return a :class:`DrivingModel` (or a ground-truth replay stub)."""
    return model_from_parts(*parse_checkpoint(Path(path).read_bytes()))
