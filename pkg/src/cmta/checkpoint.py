"""Binary little-endian checkpoint format.

Layout::

    b"CMTA" | u32 version | u32 n | n bytes canonical JSON {"config", "meta"}
    | 32 bytes vocab SHA-256 | u32 entry count
    | entries: u16 name_len, name, u8 dtype, u8 ndim, u32 dims[ndim], raw data
    | u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CMTAModel, ModelConfig
from .tokenizer import Vocab

MAGIC = b"CMTA"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


class VersionMismatch(CheckpointError):
    pass


class VocabHashMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"corrupt checkpoint at byte {offset}: {reason}")
        self.offset = offset


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab_sha256: str
    meta: dict = field(default_factory=dict)


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    blob = canonical_json({"config": ckpt.config.to_dict(), "meta": ckpt.meta})
    out += struct.pack("<I", len(blob)) + blob
    digest = bytes.fromhex(ckpt.vocab_sha256)
    if len(digest) != 32:
        raise CheckpointError("vocab hash must be a SHA-256 hex digest")
    out += digest
    out += struct.pack("<I", len(ckpt.params))
    for name, arr in ckpt.params.items():
        arr = np.asarray(arr)
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded)) + encoded
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < 4 + 4 + 4 + 32 + 4 + 4:
        raise CorruptFile(len(buf), "file too short")
    if buf[:4] != MAGIC:
        raise CorruptFile(0, "bad magic")
    (stored_crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CorruptFile(len(buf) - 4, "CRC32 mismatch (truncated or modified)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {VERSION}")
    end = len(buf) - 4
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > end:
            raise CorruptFile(pos, f"need {n} bytes, {end - pos} left")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (blob_len,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(blob_len).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(12, f"bad header JSON: {exc}") from None
    vocab_hash = take(32).hex()
    (count,) = struct.unpack("<I", take(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CorruptFile(pos - 2, f"unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        data = np.frombuffer(take(nbytes), dtype=dt).reshape(shape)
        params[name] = data.astype(dt.newbyteorder("="), copy=True)
    if pos != end:
        raise CorruptFile(pos, "trailing bytes after last entry")
    return Checkpoint(config, params, vocab_hash, header.get("meta", {}))


def save_checkpoint(model: CMTAModel, path: str | Path, vocab: Vocab, meta: dict | None = None) -> None:
    ckpt = Checkpoint(model.config, model.state_dict(), vocab.sha256(), meta if meta is not None else model.meta)
    data = to_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


def read_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def load_checkpoint(path: str | Path, vocab: Vocab | None = None) -> CMTAModel:
    """Rebuild a model; if ``vocab`` is given its hash must match the stored one."""
    ckpt = read_checkpoint(path)
    if vocab is not None and vocab.sha256() != ckpt.vocab_sha256:
        raise VocabHashMismatch(
            f"checkpoint was trained with vocab {ckpt.vocab_sha256[:12]}..., got {vocab.sha256()[:12]}..."
        )
    model = CMTAModel(ckpt.config, ckpt.params)
    model.meta = dict(ckpt.meta)
    return model
