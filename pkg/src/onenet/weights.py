"""Weight archives: OTSR tensors packed behind an index.

Layout (little-endian)::

    b"ONWT" 0x01
    u64  config hash (FNV-1a 64 of ModelConfig.canonical_text())
    u32  entry count
    per entry: u16 path length | path (utf-8) | u64 payload offset | u64 payload length
    payloads (one OTSR blob each, offsets are absolute)
    u64  FNV-1a 64 of every preceding byte
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import otsr
from .errors import ConfigMismatchError, FormatError
from .models import ModelConfig, Network, build, config_hash, fnv1a_64
from .nn import Module
from .tensor import Tensor

MAGIC = b"ONWT\x01"


@dataclass
class WeightStore:
    tensors: dict[str, Tensor] = field(default_factory=dict)
    config_hash: int = 0
    version: int = MAGIC[4]

    @classmethod
    def from_module(cls, net: Module, chash: int) -> "WeightStore":
        return cls({k: Tensor(v.data.copy()) for k, v in net.state().items()}, chash)

    def apply_to(self, net: Module) -> None:
        state = net.state()
        missing = set(state) - set(self.tensors)
        extra = set(self.tensors) - set(state)
        if missing or extra:
            raise ConfigMismatchError(
                f"archive entries do not match the network (missing {sorted(missing)[:3]}, "
                f"unexpected {sorted(extra)[:3]})")
        for name, t in state.items():
            src = self.tensors[name]
            if src.shape != t.shape:
                raise ConfigMismatchError(f"{name}: archive shape {src.shape} != {t.shape}")
            t.data[...] = src.data


def encode(store: WeightStore) -> bytes:
    names = list(store.tensors)
    blobs = [otsr.encode(store.tensors[n]) for n in names]
    paths = [n.encode("utf-8") for n in names]
    index_len = sum(2 + len(p) + 16 for p in paths)
    offset = len(MAGIC) + 8 + 4 + index_len
    head = [MAGIC, struct.pack("<QI", store.config_hash, len(names))]
    for p, blob in zip(paths, blobs):
        head.append(struct.pack("<H", len(p)) + p + struct.pack("<QQ", offset, len(blob)))
        offset += len(blob)
    body = b"".join(head + blobs)
    return body + struct.pack("<Q", fnv1a_64(body))


def decode(buf: bytes) -> WeightStore:
    if len(buf) < len(MAGIC) + 20 or buf[:4] != MAGIC[:4]:
        raise FormatError("not a weight archive (bad magic)")
    if buf[4] != MAGIC[4]:
        raise FormatError(f"unsupported weight archive version {buf[4]}")
    body, (checksum,) = buf[:-8], struct.unpack("<Q", buf[-8:])
    if fnv1a_64(body) != checksum:
        raise FormatError("weight archive checksum mismatch (truncated or modified)")
    chash, count = struct.unpack_from("<QI", body, 5)
    pos = 17
    tensors: dict[str, Tensor] = {}
    try:
        for _ in range(count):
            (plen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            path = body[pos : pos + plen].decode("utf-8")
            pos += plen
            off, length = struct.unpack_from("<QQ", body, pos)
            pos += 16
            if off + length > len(body):
                raise FormatError(f"entry {path!r} points past the end of the archive")
            tensors[path] = otsr.decode(body[off : off + length])
    except struct.error as exc:
        raise FormatError("truncated weight archive index") from exc
    return WeightStore(tensors, chash)


def save_weights(net: Network, path) -> None:
    store = WeightStore.from_module(net, config_hash(net.config))
    Path(path).write_bytes(encode(store))


def load_weights(path, config: Optional[ModelConfig] = None) -> WeightStore:
    """Read an archive; with ``config`` given, insist that it was written for it."""
    store = decode(Path(path).read_bytes())
    if config is not None and store.config_hash != config_hash(config):
        raise ConfigMismatchError(
            f"archive config hash {store.config_hash:016x} != {config_hash(config):016x}")
    return store


def load_network(path, config: ModelConfig, dtype=np.float32) -> Network:
    net = build(config, seed=None, dtype=dtype)
    load_weights(path, config).apply_to(net)
    return net
