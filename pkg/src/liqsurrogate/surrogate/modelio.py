"""LIQT model container.

Layout (little-endian)::

    magic      4s   b"LIQT"
    version    u16
    schema_id  16s  ascii hex
    meta_len   u32  length of the UTF-8 JSON metadata blob that follows
    meta       bytes  hyperparameters, feature names, target, kind
    n_trees    u32
    per tree:  n_nodes u32, then feature i4[n], threshold f8[n],
               left i4[n], right i4[n], value f8[n], gain f8[n]
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError
from .trees import Hyperparams, Tree, TreeEnsemble

MAGIC = b"LIQT"
VERSION = 1
_HEAD = struct.Struct("<4sH16sI")
_ARRAYS = (("feature", "<i4"), ("threshold", "<f8"), ("left", "<i4"), ("right", "<i4"), ("value", "<f8"), ("gain", "<f8"))


def dumps(ens: TreeEnsemble) -> bytes:
    hp = ens.hyperparams
    meta = {
        "hyperparams": {
            "n_trees": hp.n_trees,
            "min_leaf": hp.min_leaf,
            "max_depth": hp.max_depth,
            "features_per_split": hp.features_per_split,
            "bootstrap": hp.bootstrap,
        },
        "feature_names": list(ens.feature_names),
        "target": ens.target,
        "kind": ens.kind,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(_HEAD.pack(MAGIC, VERSION, ens.schema_id.encode("ascii").ljust(16, b"\0")[:16], len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(ens.trees)))
    for t in ens.trees:
        buf.write(struct.pack("<I", t.n_nodes))
        for name, dt in _ARRAYS:
            buf.write(np.asarray(getattr(t, name)).astype(dt).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> TreeEnsemble:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise ModelFormatError("truncated model file")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    magic, version, sid, meta_len = _HEAD.unpack(take(_HEAD.size))
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    try:
        meta = json.loads(bytes(take(meta_len)).decode())
        hp = Hyperparams(**meta["hyperparams"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"bad metadata: {exc}") from exc
    (n_trees,) = struct.unpack("<I", take(4))
    trees = []
    for _ in range(n_trees):
        (n,) = struct.unpack("<I", take(4))
        arrays = {}
        for name, dt in _ARRAYS:
            size = np.dtype(dt).itemsize * n
            arrays[name] = np.frombuffer(take(size), dtype=dt).astype(dt[1:])
        t = Tree(**arrays)
        inner = t.feature != -1
        if np.any(t.feature[inner] >= len(meta["feature_names"])) or np.any(t.left[inner] >= n) or np.any(t.right[inner] >= n):
            raise ModelFormatError("node index out of range")
        trees.append(t)
    if pos != len(view):
        raise ModelFormatError("trailing bytes after last tree")
    return TreeEnsemble(
        trees=tuple(trees),
        hyperparams=hp,
        schema_id=bytes(sid).rstrip(b"\0").decode("ascii"),
        feature_names=tuple(meta["feature_names"]),
        target=meta.get("target", ""),
        kind=meta.get("kind", ""),
    )


def save_model(ens: TreeEnsemble, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(ens))
    return path


def load_model(path) -> TreeEnsemble:
    return loads(Path(path).read_bytes())
