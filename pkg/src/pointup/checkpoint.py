"""Binary checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a UTF-8
JSON header, then the raw little-endian float64 blobs in header order.
The JSON carries the format version, arbitrary metadata (architecture
hyperparameters), the tensor manifest, and optimizer scalars, so a file
is self-describing and round-trips bit-exactly.
"""

import json
import os

import numpy as np

from .errors import ParseError

MAGIC = b"PTUPCKP1"
VERSION = 1


def _blob(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(path, tensors, metadata=None, optimizer_state=None):
    """Write named float64 arrays plus optional Adam state to ``path``.

    ``tensors`` maps name -> ndarray (or Tensor). Writing is atomic: the
    payload lands in a temp file first and is renamed into place.
    """
    entries = []
    blobs = []
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value), dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(_blob(arr))

    header = {
        "version": VERSION,
        "metadata": metadata or {},
        "tensors": entries,
        "optimizer": None,
    }
    if optimizer_state is not None:
        moment_entries = []
        for kind in ("m", "v"):
            for name, arr in optimizer_state[kind].items():
                moment_entries.append({"kind": kind, "name": name,
                                       "shape": list(np.asarray(arr).shape)})
                blobs.append(_blob(arr))
        header["optimizer"] = {
            "lr": optimizer_state["lr"],
            "beta1": optimizer_state["beta1"],
            "beta2": optimizer_state["beta2"],
            "eps": optimizer_state["eps"],
            "t": optimizer_state["t"],
            "moments": moment_entries,
        }

    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors, metadata, optimizer_state)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ParseError(path, 1, "not a checkpoint file (bad magic)")
        header_len = int.from_bytes(fh.read(8), "little")
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(path, 1, f"corrupt checkpoint header: {exc}") from None
        if header.get("version") != VERSION:
            raise ParseError(path, 1, f"unsupported checkpoint version {header.get('version')}")

        def read_array(shape):
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ParseError(path, 1, "truncated checkpoint payload")
            return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)

        tensors = {}
        for entry in header["tensors"]:
            tensors[entry["name"]] = read_array(entry["shape"])

        optimizer_state = None
        if header["optimizer"] is not None:
            opt = header["optimizer"]
            moments = {"m": {}, "v": {}}
            for entry in opt["moments"]:
                moments[entry["kind"]][entry["name"]] = read_array(entry["shape"])
            optimizer_state = {
                "lr": opt["lr"], "beta1": opt["beta1"], "beta2": opt["beta2"],
                "eps": opt["eps"], "t": opt["t"],
                "m": moments["m"], "v": moments["v"],
            }
    return tensors, header["metadata"], optimizer_state
