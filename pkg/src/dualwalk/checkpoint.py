"""Binary checkpoint blocks.

A checkpoint is a sequence of blocks.  Each block starts with one
tab-separated manifest line and is followed by little-endian arrays:

``transe  d  E  R  seed``
    E*d float32 entity rows, then R*d float32 relation rows.
``kmeans  N``
    E int32 assignments, N*d float32 centroids, N*d float32 learned parts.
``params  count``
    ``count`` lines of ``name  shape  offset`` (shape as ``AxB``, offset in
    floats), then one float32 blob holding every parameter row-major.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import ClusterModel, EmbeddingTable

F32 = np.dtype("<f4")
I32 = np.dtype("<i4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    embeddings: EmbeddingTable | None = None
    seed: int = 0
    clusters: ClusterModel | None = None
    params: dict[str, np.ndarray] = field(default_factory=dict)


def _shape_str(shape) -> str:
    return "x".join(str(int(s)) for s in shape) if len(shape) else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    buf = io.BytesIO()
    if ckpt.embeddings is not None:
        E, R = ckpt.embeddings.entity_vectors, ckpt.embeddings.relation_vectors
        d = E.shape[1]
        buf.write(f"transe\t{d}\t{E.shape[0]}\t{R.shape[0]}\t{ckpt.seed}\n".encode())
        buf.write(np.ascontiguousarray(E, dtype=F32).tobytes())
        buf.write(np.ascontiguousarray(R, dtype=F32).tobytes())
    if ckpt.clusters is not None:
        cm = ckpt.clusters
        if ckpt.embeddings is None:
            raise CheckpointError("kmeans block needs the transe block")
        buf.write(f"kmeans\t{cm.n_clusters}\n".encode())
        buf.write(np.ascontiguousarray(cm.assignment, dtype=I32).tobytes())
        buf.write(np.ascontiguousarray(cm.centroids, dtype=F32).tobytes())
        buf.write(np.ascontiguousarray(cm.learned_parts, dtype=F32).tobytes())
    if ckpt.params:
        buf.write(f"params\t{len(ckpt.params)}\n".encode())
        offset = 0
        for name, arr in ckpt.params.items():
            buf.write(f"{name}\t{_shape_str(arr.shape)}\t{offset}\n".encode())
            offset += int(np.asarray(arr).size)
        for arr in ckpt.params.values():
            buf.write(np.ascontiguousarray(arr, dtype=F32).tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read_line(fh) -> str | None:
    line = fh.readline()
    if not line:
        return None
    if not line.endswith(b"\n"):
        raise CheckpointError("truncated manifest line")
    return line[:-1].decode()


def _read_array(fh, dtype, count, shape=None):
    raw = fh.read(dtype.itemsize * count)
    if len(raw) != dtype.itemsize * count:
        raise CheckpointError("truncated array data")
    arr = np.frombuffer(raw, dtype=dtype).astype(np.float64 if dtype == F32 else np.int64)
    return arr.reshape(shape) if shape is not None else arr


def read_checkpoint(path) -> Checkpoint:
    ckpt = Checkpoint()
    with open(path, "rb") as fh:
        while True:
            head = _read_line(fh)
            if head is None:
                break
            fields = head.split("\t")
            kind = fields[0]
            if kind == "transe":
                d, n_ent, n_rel, seed = (int(x) for x in fields[1:5])
                E = _read_array(fh, F32, n_ent * d, (n_ent, d))
                R = _read_array(fh, F32, n_rel * d, (n_rel, d))
                ckpt.embeddings = EmbeddingTable(E, R)
                ckpt.seed = seed
            elif kind == "kmeans":
                if ckpt.embeddings is None:
                    raise CheckpointError("kmeans block before transe block")
                N = int(fields[1])
                n_ent, d = ckpt.embeddings.entity_vectors.shape
                assign = _read_array(fh, I32, n_ent)
                cents = _read_array(fh, F32, N * d, (N, d))
                learned = _read_array(fh, F32, N * d, (N, d))
                ckpt.clusters = ClusterModel(assign, cents, learned, [])
            elif kind == "params":
                manifest = []
                for _ in range(int(fields[1])):
                    line = _read_line(fh)
                    if line is None:
                        raise CheckpointError("truncated parameter manifest")
                    name, shape, offset = line.split("\t")
                    manifest.append((name, _parse_shape(shape), int(offset)))
                total = sum(int(np.prod(s)) for _, s, _ in manifest)
                blob = _read_array(fh, F32, total)
                for name, shape, offset in manifest:
                    size = int(np.prod(shape))
                    ckpt.params[name] = blob[offset:offset + size].reshape(shape)
            else:
                raise CheckpointError(f"unknown checkpoint block {kind!r}")
    return ckpt
