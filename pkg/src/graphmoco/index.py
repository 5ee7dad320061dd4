"""Exact-search embedding index: unit-norm rows, parallel variant keys, and
the fingerprint of the checkpoint that produced them.

Search is an exhaustive cosine scan with an ascending-key tie-break; pools
stay small enough (10^4) that approximate neighbors would buy nothing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .corpus import Corpus

MAGIC = b"GMIDX001"
FORMAT_VERSION = 1


class VocabVersionError(ValueError):
    """Checkpoint vocabulary version differs from what the caller expects."""


@dataclass
class EmbeddingIndex:
    vectors: np.ndarray  # (R, dim) float32, unit rows
    keys: list[str]
    fingerprint: str

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D matrix")
        if self.vectors.shape[0] != len(self.keys):
            raise ValueError("row count must equal key count")

    def __len__(self) -> int:
        return len(self.keys)


def build_index(
    checkpoint: Checkpoint,
    corpus: Corpus,
    fingerprint: str = "",
    expected_vocab_version: int | None = None,
) -> EmbeddingIndex:
    """Embed every corpus variant with the trained query encoder."""
    if (
        expected_vocab_version is not None
        and checkpoint.vocab.version != expected_vocab_version
    ):
        raise VocabVersionError(
            f"checkpoint vocab version {checkpoint.vocab.version} != "
            f"expected {expected_vocab_version}"
        )
    encoder = checkpoint.build_query_encoder()
    keys: list[str] = []
    rows: list[np.ndarray] = []
    variants = corpus.variants
    for start in range(0, len(variants), 64):
        chunk = variants[start : start + 64]
        for emb in encoder.embed_variants(chunk):
            keys.append(emb.variant_key)
            rows.append(emb.vector)
    vectors = (
        np.stack(rows).astype(np.float32)
        if rows
        else np.zeros((0, checkpoint.config.out_dim), dtype=np.float32)
    )
    return EmbeddingIndex(vectors=vectors, keys=keys, fingerprint=fingerprint)


def query_index(
    index: EmbeddingIndex, query: np.ndarray, top_k: int
) -> list[tuple[str, float]]:
    """Exhaustive cosine ranking, descending, ties broken by ascending key."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if len(index) == 0:
        raise ValueError("cannot query an empty index")
    q = np.asarray(query, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm == 0:
        raise ValueError("cannot query with a zero vector")
    q = q / norm
    row_norms = np.linalg.norm(index.vectors.astype(np.float64), axis=1)
    sims = (index.vectors.astype(np.float64) @ q) / row_norms
    order = sorted(range(len(index)), key=lambda i: (-sims[i], index.keys[i]))
    return [(index.keys[i], float(sims[i])) for i in order[:top_k]]


def save_index(index: EmbeddingIndex, path) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "dim": int(index.vectors.shape[1]) if index.vectors.size else 0,
        "count": len(index),
        "keys": index.keys,
        "fingerprint": index.fingerprint,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob = np.ascontiguousarray(index.vectors.astype("<f4")).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest_bytes)))
        fh.write(manifest_bytes)
        fh.write(blob)


def load_index(path) -> EmbeddingIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not an index file (bad magic)")
    (manifest_len,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16 : 16 + manifest_len].decode("utf-8"))
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported index format version {manifest['format_version']}")
    count, dim = manifest["count"], manifest["dim"]
    vectors = (
        np.frombuffer(data, dtype="<f4", count=count * dim, offset=16 + manifest_len)
        .reshape(count, dim)
        .copy()
    )
    if count == 0:
        vectors = np.zeros((0, dim if dim else 0), dtype=np.float32)
    return EmbeddingIndex(
        vectors=vectors, keys=list(manifest["keys"]), fingerprint=manifest["fingerprint"]
    )
