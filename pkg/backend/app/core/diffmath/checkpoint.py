"""
Checkpoint files: a flat binary of parameter buffers next to a JSON manifest.

``<stem>.bin`` holds the raw little-endian buffers back to back, and
``<stem>.json`` lists name, shape and byte offset of each, plus precision,
step count and any extra metadata (the model config).
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from app.core.errors import CheckpointError
from app.core.diffmath.nn import Module

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


def _paths(path: Union[str, Path]) -> Tuple[Path, Path]:
    stem = Path(path)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_checkpoint(path: Union[str, Path], module: Module, step: int,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write module parameters; returns the manifest path"""
    bin_path, manifest_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    precision = None
    with open(bin_path, "wb") as fh:
        for name, param in module.named_parameters():
            buffer = np.ascontiguousarray(param.values).astype(param.dtype.newbyteorder("<"), copy=False)
            precision = precision or str(param.dtype)
            fh.write(buffer.tobytes())
            entries.append({"name": name, "shape": list(param.shape), "offset": offset, "dtype": str(param.dtype)})
            offset += buffer.nbytes
    manifest = {
        "version": MANIFEST_VERSION,
        "precision": precision or "float64",
        "step": int(step),
        "parameters": entries,
        "metadata": metadata or {},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2))
    logger.info(f"Checkpoint written: {manifest_path} ({len(entries)} tensors, step {step})")
    return manifest_path


def read_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    _, manifest_path = _paths(path)
    if not manifest_path.exists():
        raise CheckpointError(f"checkpoint manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint manifest {manifest_path}: {e}") from e
    if manifest.get("version") != MANIFEST_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')}")
    return manifest


def load_checkpoint(path: Union[str, Path], module: Module) -> Dict[str, Any]:
    """Copy stored buffers into module parameters; returns the manifest"""
    bin_path, _ = _paths(path)
    manifest = read_manifest(path)
    if not bin_path.exists():
        raise CheckpointError(f"checkpoint data not found: {bin_path}")
    raw = bin_path.read_bytes()
    stored = {entry["name"]: entry for entry in manifest["parameters"]}
    params = dict(module.named_parameters())
    missing = sorted(set(params) - set(stored))
    unexpected = sorted(set(stored) - set(params))
    if missing or unexpected:
        raise CheckpointError(f"parameter names differ: missing={missing[:5]} unexpected={unexpected[:5]}")
    for name, param in params.items():
        entry = stored[name]
        if tuple(entry["shape"]) != param.shape:
            raise CheckpointError(f"{name}: stored shape {entry['shape']} != model shape {list(param.shape)}")
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + count * dtype.itemsize
        if end > len(raw):
            raise CheckpointError(f"{name}: checkpoint data truncated")
        values = np.frombuffer(raw, dtype=dtype, count=count, offset=entry["offset"]).reshape(param.shape)
        param.values = values.astype(param.dtype, copy=True)
        param.grad = None
    logger.info(f"Checkpoint loaded: {bin_path} (step {manifest['step']})")
    return manifest
