"""Flat tensor-blob checkpoint format.

Layout: one ASCII magic line ``RVCKPT1 <header_bytes>``, a UTF-8 JSON header
indexing every tensor (name, dtype, shape, byte offset into the data block)
plus the resolved config snapshot, then the raw little-endian tensor bytes
back to back. The same file carries model parameters and buffers.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import ArchiveError, ShapeMismatchError

_MAGIC = b"RVCKPT1"

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
    "uint8": np.uint8,
    "bool": np.bool_,
}


def save_checkpoint(path, state_dict: dict, config_text: str = "") -> None:
    """Serialize a torch ``state_dict`` (tensors only) plus a config snapshot."""
    index = []
    chunks = []
    offset = 0
    for name, tensor in state_dict.items():
        array = np.ascontiguousarray(tensor.detach().cpu().numpy())
        dtype = str(array.dtype)
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {dtype} for tensor {name}")
        raw = array.tobytes()
        index.append(
            {"name": name, "dtype": dtype, "shape": list(array.shape), "offset": offset}
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": index, "config": config_text}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + b" " + str(len(header)).encode("ascii") + b"\n")
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path):
    """Return (state_dict of torch tensors, config snapshot text)."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC + b" "):
        raise ArchiveError("not a checkpoint file", path=path, offset=0)
    newline = data.find(b"\n")
    if newline < 0:
        raise ArchiveError("truncated magic line", path=path, offset=len(data))
    try:
        header_len = int(data[len(_MAGIC) + 1 : newline])
    except ValueError:
        raise ArchiveError("bad header length", path=path, offset=len(_MAGIC) + 1) from None
    header_start = newline + 1
    header_end = header_start + header_len
    if len(data) < header_end:
        raise ArchiveError("truncated header", path=path, offset=len(data))
    try:
        header = json.loads(data[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"bad header: {exc}", path=path, offset=header_start) from exc
    blob = data[header_end:]
    state = {}
    for item in header["tensors"]:
        dtype = _DTYPES.get(item["dtype"])
        if dtype is None:
            raise ArchiveError(
                f"unsupported dtype {item['dtype']}", path=path, offset=header_start
            )
        shape = tuple(item["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        start = item["offset"]
        if start + nbytes > len(blob):
            raise ArchiveError(
                f"tensor {item['name']} truncated",
                path=path,
                offset=header_end + len(blob),
            )
        array = np.frombuffer(blob[start : start + nbytes], dtype=dtype).reshape(shape)
        state[item["name"]] = torch.from_numpy(array.copy())
    return state, header.get("config", "")


def load_into_model(path, model: torch.nn.Module) -> str:
    """Load a checkpoint into ``model``, validating names and shapes."""
    state, config_text = load_checkpoint(path)
    own = model.state_dict()
    missing = sorted(set(own) - set(state))
    unexpected = sorted(set(state) - set(own))
    if missing or unexpected:
        raise ShapeMismatchError(
            f"checkpoint does not match model (missing={missing[:3]}, unexpected={unexpected[:3]})"
        )
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(own[name].shape):
            raise ShapeMismatchError(
                f"tensor {name}: checkpoint shape {tuple(tensor.shape)} vs model {tuple(own[name].shape)}"
            )
    model.load_state_dict(state)
    return config_text
