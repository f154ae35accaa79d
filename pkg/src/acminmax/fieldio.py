"""Binary persistence of scalar fields.

Layout: 8-byte magic, little-endian uint32 format version, little-endian
uint32 length of a UTF-8 JSON header, the header, then the nodal values as
row-major little-endian float64.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .energy import ScalarField
from .errors import FormatError
from .manifold import build_manifold

MAGIC = b"ACFIELD\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def _manifold_header(m):
    return {"kind": m.kind, "size": [float(s) for s in m.size],
            "resolution": [int(r) for r in m.shape]}


def _potential_header(p):
    if p is None:
        return None
    out = {"kind": p.kind, "scale": float(p.scale)}
    if p.table is not None:
        out["table"] = [np.asarray(a, float).tolist() for a in p.table]
    return out


def save_field(path, u: ScalarField, epsilon=None, potential=None, extra=None):
    """Write ``u`` with its manifold description and optional metadata."""
    header = {"manifold": _manifold_header(u.manifold), "n_values": int(u.values.size),
              "epsilon": None if epsilon is None else float(epsilon),
              "potential": _potential_header(potential)}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def _read_header(fh, path):
    prefix = fh.read(_PREFIX.size)
    if len(prefix) != _PREFIX.size:
        raise FormatError(f"{path}: truncated prefix")
    magic, version, hlen = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    blob = fh.read(hlen)
    if len(blob) != hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from None
    for key in ("manifold", "n_values"):
        if key not in header:
            raise FormatError(f"{path}: header lacks {key!r}")
    return header


def read_header(path) -> dict:
    """Metadata only; the values are not read."""
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def load_field(path, manifold=None):
    """Read a field written by :func:`save_field`.

    Returns ``(field, header)``.  When ``manifold`` is given it must match
    the stored description, otherwise the manifold is rebuilt from the
    header.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        data = fh.read()
    n = int(header["n_values"])
    if len(data) != 8 * n:
        raise FormatError(f"{path}: expected {8 * n} bytes of values, found {len(data)}")
    desc = header["manifold"]
    if manifold is None:
        try:
            manifold = build_manifold(desc["kind"], desc["resolution"], desc["size"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: bad manifold description ({exc})") from None
    elif _manifold_header(manifold) != desc:
        raise FormatError(f"{path}: stored manifold {desc} differs from the one supplied")
    if manifold.n_nodes != n:
        raise FormatError(f"{path}: {n} values for a manifold with {manifold.n_nodes} nodes")
    values = np.frombuffer(data, dtype="<f8").astype(float)
    return ScalarField(manifold, values), header
