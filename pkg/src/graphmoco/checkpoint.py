"""Self-describing single-file checkpoint container.

Layout: 8-byte magic, 8-byte little-endian manifest length, UTF-8 JSON
manifest, then raw little-endian array bytes back to back.  The manifest
carries the config snapshot, the vocabulary, the epoch counter, the queue
head pointer, and per-array name/shape/dtype/offset records.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .graph_encoder import FunctionEncoder, build_function_encoder
from .normalizer import Vocab

MAGIC = b"GMCKPT01"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocab
    epoch: int
    query_state: dict[str, torch.Tensor]
    key_state: dict[str, torch.Tensor]
    queue_buffer: torch.Tensor | None = None
    queue_head: int = 0

    def build_query_encoder(self) -> FunctionEncoder:
        """Reconstruct the trained (query-side) encoder."""
        encoder = _encoder_from_config(self.config, self.vocab)
        encoder.load_state_dict(self.query_state)
        return encoder

    def build_key_encoder(self) -> FunctionEncoder:
        encoder = _encoder_from_config(self.config, self.vocab)
        encoder.load_state_dict(self.key_state)
        return encoder


def _encoder_from_config(config: TrainConfig, vocab: Vocab) -> FunctionEncoder:
    return build_function_encoder(
        vocab,
        seed=config.seed,
        d=config.d,
        filters_per_size=config.filters_per_size,
        windows=config.windows,
        layers=config.layers,
        hidden_dim=config.hidden_dim,
        out_dim=config.out_dim,
        activation=config.activation,
        two_tuple_enabled=config.two_tuple_enabled,
        two_tuple_node_cap=config.two_tuple_node_cap,
        directed_aggregation=config.directed_aggregation,
        address_pattern=config.address_pattern,
    )


def _tensor_bytes(t: torch.Tensor) -> tuple[bytes, str]:
    arr = t.detach().cpu().numpy()
    if arr.dtype == np.float32:
        code = "<f4"
    elif arr.dtype == np.float64:
        code = "<f8"
    else:
        raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")
    return np.ascontiguousarray(arr).astype(_DTYPES[code]).tobytes(), code


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: list[dict] = []
    blobs: list[bytes] = []
    offset = 0

    def add(name: str, tensor: torch.Tensor) -> None:
        nonlocal offset
        blob, code = _tensor_bytes(tensor)
        arrays.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": code,
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)

    for name, tensor in ckpt.query_state.items():
        add(f"query.{name}", tensor)
    for name, tensor in ckpt.key_state.items():
        add(f"key.{name}", tensor)
    if ckpt.queue_buffer is not None:
        add("queue.buffer", ckpt.queue_buffer)

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.to_json(),
        "epoch": ckpt.epoch,
        "queue_head": ckpt.queue_head,
        "arrays": arrays,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest_bytes)))
        fh.write(manifest_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (manifest_len,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16 : 16 + manifest_len].decode("utf-8"))
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError(
            f"{path}: unsupported checkpoint format version {manifest['format_version']}"
        )
    base = 16 + manifest_len
    tensors: dict[str, torch.Tensor] = {}
    for record in manifest["arrays"]:
        start = base + record["offset"]
        count = int(np.prod(record["shape"], dtype=np.int64))
        arr = np.frombuffer(
            data, dtype=_DTYPES[record["dtype"]], count=count, offset=start
        ).reshape(record["shape"])
        tensors[record["name"]] = torch.from_numpy(arr.copy())
    query_state = {
        k[len("query.") :]: v for k, v in tensors.items() if k.startswith("query.")
    }
    key_state = {k[len("key.") :]: v for k, v in tensors.items() if k.startswith("key.")}
    return Checkpoint(
        config=TrainConfig.from_dict(manifest["config"]),
        vocab=Vocab.from_json(manifest["vocab"]),
        epoch=int(manifest["epoch"]),
        query_state=query_state,
        key_state=key_state,
        queue_buffer=tensors.get("queue.buffer"),
        queue_head=int(manifest.get("queue_head", 0)),
    )


def checkpoint_fingerprint(path: str | Path) -> str:
    """SHA-256 of the checkpoint file; recorded in indexes built from it."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
