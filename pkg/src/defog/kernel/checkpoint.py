"""Binary checkpoint format for model parameters and optimizer state.

Layout (all integers little-endian):

    bytes 0..7    magic ``DFGCKPT1``
    bytes 8..11   u32 header length
    header        UTF-8 JSON: entry table (name, kind, shape, dtype),
                  optional Adam block (step counter, moment names), free-form
                  ``meta`` echoed back on load
    payload       raw arrays in header order: store entries, then Adam first
                  moments, then second moments

Loads verify the byte count exactly and restores refuse any name or shape
that disagrees with the live model, so a checkpoint can never be silently
poured into the wrong architecture.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from .optim import Adam, ParamStore

MAGIC = b"DFGCKPT1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _dtype_name(arr: np.ndarray) -> str:
    name = arr.dtype.name
    if name not in _DTYPES:
        raise DataError(f"checkpoint: unsupported dtype {name}")
    return name


def save_checkpoint(path: str | Path, store: ParamStore, adam: Adam | None = None,
                    meta: dict | None = None) -> None:
    entries = []
    blobs: list[bytes] = []
    for name, kind, t in store.entries():
        entries.append({"name": name, "kind": kind, "shape": list(t.shape),
                        "dtype": _dtype_name(t.data)})
        blobs.append(np.ascontiguousarray(t.data).astype(
            _DTYPES[_dtype_name(t.data)], copy=False).tobytes())

    adam_block = None
    if adam is not None:
        names = list(store.params.keys())
        adam_block = {"step": adam.state["step"], "names": names,
                      "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                      "eps": adam.eps}
        for key in ("m", "v"):
            for name in names:
                arr = adam.state[key][name]
                blobs.append(np.ascontiguousarray(arr).astype(
                    _DTYPES[_dtype_name(arr)], copy=False).tobytes())

    header = json.dumps({"entries": entries, "adam": adam_block,
                         "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> dict:
    """Parse a checkpoint into arrays without touching any live model.

    Returns {"entries": [(name, kind, array), ...], "adam": block-with-
    "m"/"v" dicts or None, "meta": dict}.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise DataError(f"{path}: not a {MAGIC.decode()} checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise DataError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt header ({exc})") from exc

    offset = 12 + hlen
    body = raw[offset:]
    pos = 0

    def take(shape: list[int], dtype: str) -> np.ndarray:
        nonlocal pos
        if dtype not in _DTYPES:
            raise DataError(f"{path}: unsupported dtype {dtype}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(_DTYPES[dtype]).itemsize
        if pos + nbytes > len(body):
            raise DataError(f"{path}: truncated payload")
        arr = np.frombuffer(body, dtype=_DTYPES[dtype], count=count, offset=pos)
        pos += nbytes
        return arr.reshape(shape).astype(dtype, copy=True)

    entries = []
    param_specs = {}
    for e in header["entries"]:
        arr = take(e["shape"], e["dtype"])
        entries.append((e["name"], e["kind"], arr))
        if e["kind"] == "param":
            param_specs[e["name"]] = (e["shape"], e["dtype"])

    adam_block = header.get("adam")
    if adam_block is not None:
        for key in ("m", "v"):
            moments = {}
            for name in adam_block["names"]:
                if name not in param_specs:
                    raise DataError(f"{path}: optimizer names unknown param {name!r}")
                shape, dtype = param_specs[name]
                moments[name] = take(shape, dtype)
            adam_block[key] = moments

    if pos != len(body):
        raise DataError(f"{path}: {len(body) - pos} unexplained trailing bytes")
    return {"entries": entries, "adam": adam_block, "meta": header.get("meta", {})}


def restore_checkpoint(path: str | Path, store: ParamStore,
                       adam: Adam | None = None) -> dict:
    """Load a checkpoint into a live store (and optimizer), strictly.

    The checkpoint and the store must agree on every entry name, kind and
    shape; any disagreement raises DataError naming the first offender.
    Returns the checkpoint ``meta`` block.
    """
    ck = load_checkpoint(path)
    live = {(name, kind): t for name, kind, t in store.entries()}
    seen = set()
    for name, kind, arr in ck["entries"]:
        t = live.get((name, kind))
        if t is None:
            raise DataError(f"{path}: entry {name!r} ({kind}) has no match in the model")
        if tuple(arr.shape) != t.shape:
            raise DataError(
                f"{path}: entry {name!r} shape {tuple(arr.shape)} != model shape {t.shape}")
        t.data[...] = arr.astype(t.dtype, copy=False)
        seen.add((name, kind))
    missing = set(live) - seen
    if missing:
        name, kind = sorted(missing)[0]
        raise DataError(f"{path}: model entry {name!r} ({kind}) absent from checkpoint")

    if adam is not None:
        block = ck["adam"]
        if block is None:
            raise DataError(f"{path}: checkpoint carries no optimizer state")
        if set(block["names"]) != set(store.params.keys()):
            raise DataError(f"{path}: optimizer state names do not match the model")
        adam.state["step"] = int(block["step"])
        for key in ("m", "v"):
            for name in block["names"]:
                adam.state[key][name][...] = block[key][name]
    return ck["meta"]
