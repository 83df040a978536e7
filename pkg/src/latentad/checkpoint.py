"""Versioned binary checkpoints.

Container layout: magic, u32 version, u64 header length, canonical JSON
header (array table + metadata), then the raw little-endian payloads in
table order. Writing the same state twice produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import StandardizeStats
from .errors import DataError
from .generator import (ConvParams, GeneratorArch, GeneratorParams, NormParams)
from .hierarchy import HierarchySpec

MAGIC = b"LADK"
VERSION = 1

_DTYPES = {"f8": "<f8", "i8": "<i8", "b1": "|b1"}


def save_archive(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype == np.bool_:
            code = "b1"
        elif arr.dtype == np.int64:
            code = "i8"
        else:
            arr = arr.astype(np.float64)
            code = "f8"
        arr = arr.astype(_DTYPES[code])
        table.append({"name": name, "shape": list(arr.shape), "dtype": code})
        blobs.append(arr.tobytes())
    header = json.dumps({"arrays": table, "meta": meta}, sort_keys=True,
                        separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen].decode())
    arrays: dict[str, np.ndarray] = {}
    pos = 16 + hlen
    for entry in header["arrays"]:
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
        pos += count * dtype.itemsize
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]


def _params_arrays(params: GeneratorParams) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for i, conv in enumerate(params.convs):
        out[f"conv{i}.kernel"] = conv.kernel
        out[f"conv{i}.bias"] = conv.bias
    for i, norm in enumerate(params.norms):
        out[f"norm{i}.gamma"] = norm.gamma
        out[f"norm{i}.beta"] = norm.beta
        out[f"norm{i}.running_mean"] = norm.running_mean
        out[f"norm{i}.running_var"] = norm.running_var
    return out


def _params_from_arrays(arch: GeneratorArch, arrays: dict[str, np.ndarray]) -> GeneratorParams:
    n_layers = len(arch.layer_filters())
    convs = [ConvParams(arrays[f"conv{i}.kernel"], arrays[f"conv{i}.bias"])
             for i in range(n_layers)]
    norms = [NormParams(arrays[f"norm{i}.gamma"], arrays[f"norm{i}.beta"],
                        arrays[f"norm{i}.running_mean"], arrays[f"norm{i}.running_var"])
             for i in range(n_layers - 1)]
    return GeneratorParams(arch, convs, norms)


def save_model(path, params: GeneratorParams, spec: HierarchySpec,
               stats: StandardizeStats | None = None, pipeline: dict | None = None,
               extra_arrays: dict[str, np.ndarray] | None = None,
               extra_meta: dict | None = None) -> None:
    """Model checkpoint: parameters + hierarchy + standardization + pipeline meta."""
    arrays = _params_arrays(params)
    if stats is not None:
        arrays["stats.mean"] = stats.mean
        arrays["stats.std"] = stats.std
    if extra_arrays:
        arrays.update(extra_arrays)
    arch = params.arch
    meta = {
        "kind": "model",
        "arch": {
            "n_features": arch.n_features,
            "sub_window_len": arch.sub_window_len,
            "filter_multiplier": arch.filter_multiplier,
            "max_filters": arch.max_filters,
            "state_dim": arch.state_dim,
        },
        "hierarchy": {"a": list(spec.a), "d": list(spec.d),
                      "sub_window_len": spec.sub_window_len},
        "pipeline": pipeline or {},
    }
    if extra_meta:
        meta.update(extra_meta)
    save_archive(path, arrays, meta)


def load_model(path):
    """Returns (params, hierarchy spec, stats or None, meta)."""
    arrays, meta = load_archive(path)
    if meta.get("kind") not in ("model", "train-state"):
        raise DataError(f"{path}: not a model checkpoint")
    a = meta["arch"]
    arch = GeneratorArch(a["n_features"], a["sub_window_len"], a["filter_multiplier"],
                         a["max_filters"], a["state_dim"])
    h = meta["hierarchy"]
    spec = HierarchySpec(tuple(h["a"]), tuple(h["d"]), h["sub_window_len"])
    params = _params_from_arrays(arch, arrays)
    stats = None
    if "stats.mean" in arrays:
        stats = StandardizeStats(arrays["stats.mean"], arrays["stats.std"])
    return params, spec, stats, meta
