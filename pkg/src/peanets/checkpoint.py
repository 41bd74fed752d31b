"""Flat binary checkpoint container.

Layout (stable across versions):

* An ASCII header of newline-terminated lines:
    - line 1: the literal magic ``PEANETS-CKPT 1``
    - zero or more ``meta <key> <value>`` lines (value may contain spaces)
    - one ``array <name> <dim0> <dim1> ...`` line per array, in storage order
    - the literal terminator line ``end``
* Immediately after the terminator: the raw data of every array in header
  order, each as little-endian float64 (``<f8``) in row-major order.

All stored arrays are double precision.
"""

from __future__ import annotations

import numpy as np

MAGIC = "PEANETS-CKPT 1"


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file does not follow the documented layout."""


def save_arrays(path, meta: dict, arrays: dict) -> None:
    """Write ``arrays`` (name -> ndarray) with ``meta`` string pairs."""
    lines = [MAGIC]
    for key, value in meta.items():
        lines.append(f"meta {key} {value}")
    for name, arr in arrays.items():
        dims = " ".join(str(d) for d in np.asarray(arr).shape)
        lines.append(f"array {name} {dims}".rstrip())
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_arrays(path):
    """Read a checkpoint; returns (meta dict, name -> float64 ndarray)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    terminator = b"\nend\n"
    split = blob.find(terminator)
    if split < 0:
        raise CheckpointFormatError("missing header terminator")
    header_lines = blob[:split].decode("ascii").split("\n")
    if not header_lines or header_lines[0] != MAGIC:
        raise CheckpointFormatError(f"bad magic line: {header_lines[:1]!r}")

    meta: dict = {}
    specs: list = []
    for line in header_lines[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "array":
            parts = rest.split(" ")
            name, dims = parts[0], tuple(int(d) for d in parts[1:])
            specs.append((name, dims))
        else:
            raise CheckpointFormatError(f"unknown header line: {line!r}")

    arrays: dict = {}
    offset = split + len(terminator)
    for name, dims in specs:
        count = int(np.prod(dims)) if dims else 1
        nbytes = count * 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointFormatError(f"truncated data for array {name!r} at byte {offset}")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(dims)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointFormatError(f"{len(blob) - offset} trailing bytes after arrays")
    return meta, arrays
