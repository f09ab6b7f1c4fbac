"""Dataset container and checkpoint persistence.

A dataset directory holds `manifest.json` plus one raw sample file per trial:
little-endian float32, row-major C x T. Any EEG export pipeline can produce
this layout.

Checkpoints are a single binary file: an 8-byte magic, a little-endian uint64
header length, a canonical JSON header (sorted keys, no extra whitespace),
then the parameter blobs concatenated in header order. Serialization is
fully deterministic, so saving a reloaded model reproduces the bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .boosting import GbtModel, GbtParams, Tree
from .covariance import EegTrial
from .exceptions import ValidationError
from .labels import PhonCategory, token_from_string
from .networks import DeepAutoencoder, MinMaxScaler, SpatialCnn, TemporalCnn
from .pipeline import PipelineConfig, PipelineModel, TaskModel

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
CHECKPOINT_MAGIC = b"PHDCKPT\x01"
CHECKPOINT_VERSION = 1

_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


# ---------------------------------------------------------------------------
# dataset container


def save_dataset(trials: list[EegTrial], out_dir, sampling_rate_hz: float = 1000.0) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "trials").mkdir(parents=True, exist_ok=True)
    if not trials:
        raise ValidationError("refusing to write an empty dataset")
    c, t = trials[0].channels, trials[0].samples
    records = []
    for i, trial in enumerate(trials):
        if (trial.channels, trial.samples) != (c, t):
            raise ValidationError(
                f"trial {i} shape {trial.channels}x{trial.samples} != dataset shape {c}x{t}"
            )
        rel = f"trials/{i:05d}_{trial.subject_id}_{trial.token.value}.f32"
        trial.data.astype("<f4").tofile(out_dir / rel)
        records.append({
            "subject_id": trial.subject_id,
            "token": trial.token.value,
            "path": rel,
        })
    manifest = {
        "format_version": MANIFEST_VERSION,
        "channels": c,
        "samples": t,
        "sampling_rate_hz": sampling_rate_hz,
        "trials": records,
    }
    path = out_dir / MANIFEST_NAME
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_dataset(path) -> list[EegTrial]:
    """Read a manifest (file or its directory) and materialize all trials."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.exists():
        raise ValidationError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {manifest_path} is not valid JSON: {exc}") from None
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ValidationError(
            f"unsupported manifest version {manifest.get('format_version')!r}"
        )
    c, t = int(manifest["channels"]), int(manifest["samples"])
    base = manifest_path.parent
    trials: list[EegTrial] = []
    for i, rec in enumerate(manifest["trials"]):
        token = token_from_string(rec["token"])  # raises naming the bad value
        f = base / rec["path"]
        if not f.exists():
            raise ValidationError(f"trial {i} ({rec['path']}): sample file missing")
        raw = np.fromfile(f, dtype="<f4")
        if raw.size != c * t:
            raise ValidationError(
                f"trial {i} ({rec['path']}): expected {c * t} values, found {raw.size}"
            )
        trials.append(EegTrial(rec["subject_id"], token, raw.reshape(c, t)))
    return trials


def read_trial_file(path, channels: int) -> np.ndarray:
    raw = np.fromfile(Path(path), dtype="<f4")
    if raw.size == 0 or raw.size % channels != 0:
        raise ValidationError(
            f"{path}: {raw.size} values do not form a {channels}-channel trial"
        )
    return raw.reshape(channels, -1)


# ---------------------------------------------------------------------------
# checkpoint format


def _net_arrays(prefix: str, net) -> dict[str, np.ndarray]:
    return {f"{prefix}/{p.name}": p.data for p in net.params}


def _load_net_arrays(prefix: str, net, blobs: dict[str, np.ndarray]) -> None:
    for p in net.params:
        arr = blobs[f"{prefix}/{p.name}"]
        if arr.shape != p.data.shape:
            raise ValidationError(
                f"checkpoint blob {prefix}/{p.name} has shape {arr.shape}, "
                f"expected {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype)


def _gbt_arrays(prefix: str, model: GbtModel) -> dict[str, np.ndarray]:
    n_nodes = [len(t.feature) for t in model.trees]
    offsets = np.cumsum([0] + n_nodes).astype("<i8")
    cat = lambda attr: (
        np.concatenate([getattr(t, attr) for t in model.trees])
        if model.trees else np.zeros(0)
    )
    return {
        f"{prefix}/base_score": np.atleast_1d(model.base_score).astype("<f8"),
        f"{prefix}/tree_offsets": offsets,
        f"{prefix}/tree_class": np.asarray(model.tree_class, dtype="<i8"),
        f"{prefix}/node_feature": cat("feature").astype("<i8"),
        f"{prefix}/node_threshold": cat("threshold").astype("<f8"),
        f"{prefix}/node_left": cat("left").astype("<i8"),
        f"{prefix}/node_right": cat("right").astype("<i8"),
        f"{prefix}/node_value": cat("value").astype("<f8"),
    }


def _load_gbt(prefix: str, meta: dict, blobs: dict[str, np.ndarray]) -> GbtModel:
    params = GbtParams.from_dict(meta["params"])
    base = blobs[f"{prefix}/base_score"]
    if meta["kind"] == "binary":
        base = base[0]
    model = GbtModel(meta["kind"], int(meta["n_classes"]), int(meta["n_features"]),
                     base, params)
    offsets = blobs[f"{prefix}/tree_offsets"].astype(np.int64)
    model.tree_class = [int(v) for v in blobs[f"{prefix}/tree_class"]]
    for a, b in zip(offsets[:-1], offsets[1:]):
        model.trees.append(Tree(
            blobs[f"{prefix}/node_feature"][a:b].astype(np.int64),
            blobs[f"{prefix}/node_threshold"][a:b].astype(np.float64),
            blobs[f"{prefix}/node_left"][a:b].astype(np.int64),
            blobs[f"{prefix}/node_right"][a:b].astype(np.int64),
            blobs[f"{prefix}/node_value"][a:b].astype(np.float64),
        ))
    return model


def _task_arrays(prefix: str, task: TaskModel) -> tuple[dict, dict[str, np.ndarray]]:
    meta = {
        "cnn": task.cnn.config_dict(),
        "tcnn": task.tcnn.config_dict(),
        "dae": task.dae.config_dict(),
        "gbt": {
            "kind": task.gbt.kind,
            "n_classes": task.gbt.n_classes,
            "n_features": task.gbt.n_features,
            "params": task.gbt.params.to_dict(),
        },
    }
    blobs = {}
    blobs.update(_net_arrays(f"{prefix}/cnn", task.cnn))
    blobs.update(_net_arrays(f"{prefix}/tcnn", task.tcnn))
    blobs.update(_net_arrays(f"{prefix}/dae", task.dae))
    blobs[f"{prefix}/scaler_min"] = task.scaler.min_.astype("<f8")
    blobs[f"{prefix}/scaler_range"] = task.scaler.range_.astype("<f8")
    blobs.update(_gbt_arrays(f"{prefix}/gbt", task.gbt))
    return meta, blobs


def _load_task(prefix: str, meta: dict, blobs: dict[str, np.ndarray]) -> TaskModel:
    c = dict(meta["cnn"])
    cnn = SpatialCnn(
        tuple(c["input_hw"]), n_classes=c["n_classes"],
        conv_channels=tuple(c["conv_channels"]), kernel=c["kernel"],
        feature_width=c["feature_width"], dense_widths=tuple(c["dense_widths"]),
        dropout_conv=c["dropout_conv"], dropout_dense=c["dropout_dense"],
        in_channels=c["in_channels"], seed=c["seed"],
    )
    _load_net_arrays(f"{prefix}/cnn", cnn, blobs)
    c = dict(meta["tcnn"])
    tcnn = TemporalCnn(
        c["input_len"], n_classes=c["n_classes"], kernel=c["kernel"],
        n_layers=c["n_layers"], hidden_channels=c["hidden_channels"],
        dropout_mid=c["dropout_mid"], dropout_late=c["dropout_late"],
        in_channels=c["in_channels"], seed=c["seed"],
    )
    _load_net_arrays(f"{prefix}/tcnn", tcnn, blobs)
    c = dict(meta["dae"])
    dae = DeepAutoencoder(
        c["input_width"], hidden=tuple(c["hidden"]), bottleneck=c["bottleneck"],
        dropout=c["dropout"], seed=c["seed"],
    )
    _load_net_arrays(f"{prefix}/dae", dae, blobs)
    scaler = MinMaxScaler()
    scaler.min_ = blobs[f"{prefix}/scaler_min"].astype(np.float64)
    scaler.range_ = blobs[f"{prefix}/scaler_range"].astype(np.float64)
    gbt = _load_gbt(f"{prefix}/gbt", meta["gbt"], blobs)
    return TaskModel(cnn=cnn, tcnn=tcnn, dae=dae, scaler=scaler, gbt=gbt)


def save_checkpoint(model: PipelineModel, path) -> None:
    path = Path(path)
    task_meta = {}
    blobs: dict[str, np.ndarray] = {}
    for cat in model.categories:
        meta, arrays = _task_arrays(f"task/{cat.value}", model.tasks[cat])
        task_meta[cat.value] = meta
        blobs.update(arrays)
    p2_meta, p2_blobs = _task_arrays("phase2", model.phase2)
    blobs.update(p2_blobs)
    names = sorted(blobs)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "channels": model.channels,
        "lag": model.lag,
        "categories": [c.value for c in model.categories],
        "tasks": task_meta,
        "phase2": p2_meta,
        "blobs": [
            {
                "name": name,
                "dtype": blobs[name].dtype.str.lstrip("<=|"),
                "shape": list(blobs[name].shape),
            }
            for name in names
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            arr = blobs[name]
            fh.write(np.ascontiguousarray(arr).astype(
                _DTYPES[arr.dtype.str.lstrip("<=|")]).tobytes())


def load_checkpoint(path) -> PipelineModel:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8 or not raw.startswith(CHECKPOINT_MAGIC):
        raise ValidationError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<Q", raw, off)
    off += 8
    if off + header_len > len(raw):
        raise ValidationError(f"{path}: truncated header")
    header = json.loads(raw[off:off + header_len].decode())
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"{path}: unsupported checkpoint version {header.get('format_version')!r}"
        )
    off += header_len
    blobs: dict[str, np.ndarray] = {}
    for spec in header["blobs"]:
        dtype = _DTYPES[spec["dtype"]]
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        if off + nbytes > len(raw):
            raise ValidationError(f"{path}: truncated blob {spec['name']}")
        blobs[spec["name"]] = np.frombuffer(
            raw, dtype=dtype, count=count, offset=off
        ).reshape(spec["shape"]).copy()
        off += nbytes
    if off != len(raw):
        raise ValidationError(f"{path}: {len(raw) - off} trailing bytes")
    config = PipelineConfig.from_dict(header["config"])
    categories = tuple(PhonCategory(c) for c in header["categories"])
    tasks = {
        cat: _load_task(f"task/{cat.value}", header["tasks"][cat.value], blobs)
        for cat in categories
    }
    phase2 = _load_task("phase2", header["phase2"], blobs)
    return PipelineModel(
        categories=categories, tasks=tasks, phase2=phase2, config=config,
        channels=int(header["channels"]), lag=int(header["lag"]),
    )
