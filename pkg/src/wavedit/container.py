"""FBDS tensor container: named-tensor snapshots with bit-exact round trips.

Layout (all integers little-endian):

    magic   4 bytes  b"FBDS"
    version u32      currently 1
    count   u32
    then per tensor:
        name_len u16, name utf-8 bytes
        dtype    u8   (0 = f64, 1 = f32, 2 = u8)
        ndim     u8, dims u32 * ndim
        payload  raw little-endian bytes

Frequency states and triplane checkpoints are stored as flat tensor maps
with a JSON metadata entry under the reserved name ``__meta__``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .subband import FrequencyState
from .wavelet import DetailLevel, Subbands2D

MAGIC = b"FBDS"
VERSION = 1

_DTYPE_TAGS = {0: "<f8", 1: "<f4", 2: "u1"}
_TAG_FOR = {np.dtype(np.float64): 0, np.dtype(np.float32): 1, np.dtype(np.uint8): 2}


class ContainerError(ValueError):
    pass


def write_container(tensors: dict, path) -> None:
    """tensors: name -> ndarray (f64, f32, or u8)."""
    blobs = [struct.pack("<4sII", MAGIC, VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _TAG_FOR:
            raise ContainerError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        tag = _TAG_FOR[arr.dtype]
        encoded = np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag])
        name_b = name.encode("utf-8")
        blobs.append(struct.pack("<H", len(name_b)))
        blobs.append(name_b)
        blobs.append(struct.pack("<BB", tag, arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blobs.append(encoded.tobytes())
    Path(path).write_bytes(b"".join(blobs))


def read_container(path) -> dict:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if len(raw) < 12:
        raise ContainerError("file too short for a container header")
    magic, version, count = struct.unpack_from("<4sII", view, 0)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    offset = 12
    out = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset:offset + name_len]).decode("utf-8")
            offset += name_len
            tag, ndim = struct.unpack_from("<BB", view, offset)
            offset += 2
            dims = struct.unpack_from(f"<{ndim}I", view, offset)
            offset += 4 * ndim
            if tag not in _DTYPE_TAGS:
                raise ContainerError(f"unknown dtype tag {tag}")
            dtype = np.dtype(_DTYPE_TAGS[tag])
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(raw):
                raise ContainerError(f"truncated payload for tensor {name!r}")
            arr = np.frombuffer(view[offset:offset + nbytes], dtype=dtype).reshape(dims)
            offset += nbytes
        except struct.error as exc:
            raise ContainerError(f"truncated container: {exc}") from exc
        out[name] = arr.copy()
    return out


# ---------------------------------------------------------------------------
# FrequencyState and triplane checkpoints


def _state_tensors(state: FrequencyState, prefix: str = "") -> dict:
    tensors = {f"{prefix}low": state.subbands.low}
    for lvl, det in enumerate(state.subbands.details, start=1):
        for orient, band in det.bands():
            tensors[f"{prefix}d{lvl}.{orient}"] = band
    return tensors


def _state_from_tensors(tensors: dict, meta: dict, prefix: str = "") -> FrequencyState:
    levels = meta["levels"]
    details = tuple(
        DetailLevel(
            hl=tensors[f"{prefix}d{lvl}.hl"].astype(np.float64),
            lh=tensors[f"{prefix}d{lvl}.lh"].astype(np.float64),
            hh=tensors[f"{prefix}d{lvl}.hh"].astype(np.float64),
        )
        for lvl in range(1, levels + 1)
    )
    sub = Subbands2D(
        low=tensors[f"{prefix}low"].astype(np.float64),
        details=details,
        filter_index=meta["filter_index"],
        levels=levels,
    )
    return FrequencyState(subbands=sub, filter_index=meta["filter_index"],
                          levels=levels, latent_shape=tuple(meta["latent_shape"]))


def _meta_tensor(meta: dict) -> np.ndarray:
    return np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                         dtype=np.uint8).copy()


def _read_meta(tensors: dict) -> dict:
    if "__meta__" not in tensors:
        raise ContainerError("container has no __meta__ entry")
    return json.loads(bytes(tensors["__meta__"]).decode("utf-8"))


def save_state(state: FrequencyState, path) -> None:
    tensors = _state_tensors(state)
    tensors["__meta__"] = _meta_tensor({
        "kind": "frequency_state",
        "filter_index": state.filter_index,
        "levels": state.levels,
        "latent_shape": list(state.latent_shape),
    })
    write_container(tensors, path)


def load_state(path) -> FrequencyState:
    tensors = read_container(path)
    meta = _read_meta(tensors)
    if meta.get("kind") != "frequency_state":
        raise ContainerError(f"not a frequency-state container: {meta.get('kind')!r}")
    return _state_from_tensors(tensors, meta)


def save_triplane(ft, mlp, path) -> None:
    from .triplane import PLANE_NAMES

    tensors = {}
    for name, state in zip(PLANE_NAMES, ft.states()):
        tensors.update(_state_tensors(state, prefix=f"{name}."))
    for i, (w, b) in enumerate(mlp.weights):
        tensors[f"mlp.w{i}"] = w
        tensors[f"mlp.b{i}"] = b
    state0 = ft.plane_xy
    tensors["__meta__"] = _meta_tensor({
        "kind": "triplane",
        "filter_index": state0.filter_index,
        "levels": state0.levels,
        "latent_shape": list(state0.latent_shape),
        "mlp_layers": len(mlp.weights),
    })
    write_container(tensors, path)


def load_triplane(path):
    from .triplane import FrequencyTriplane, MlpDecoder, PLANE_NAMES

    tensors = read_container(path)
    meta = _read_meta(tensors)
    if meta.get("kind") != "triplane":
        raise ContainerError(f"not a triplane container: {meta.get('kind')!r}")
    states = [_state_from_tensors(tensors, meta, prefix=f"{name}.")
              for name in PLANE_NAMES]
    weights = [
        (tensors[f"mlp.w{i}"].astype(np.float64), tensors[f"mlp.b{i}"].astype(np.float64))
        for i in range(meta["mlp_layers"])
    ]
    return FrequencyTriplane(*states), MlpDecoder(weights=weights)
