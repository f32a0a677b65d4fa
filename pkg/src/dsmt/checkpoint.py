"""Binary checkpoint format.

Layout (all little-endian)::

    b"DSMT"  u32 version  u64 vocab_digest  u64 epoch  f64 best_valid_mrr
    u32 len  <config JSON, utf-8, sorted keys>
    u32 n_arrays
    n_arrays x ( u32 len <name utf-8>  u32 ndim  ndim x u64 extent )
    n_arrays x <float64 values, row-major>
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointDigestError, CheckpointError, CheckpointTruncatedError, CheckpointVersionError

MAGIC = b"DSMT"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    vocab_digest: int
    params: dict
    best_valid_mrr: float = float("nan")
    epoch: int = 0
    version: int = VERSION
    meta: dict = field(default_factory=dict)


def to_bytes(ckpt):
    cfg = json.dumps(ckpt.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [
        MAGIC,
        struct.pack("<IQQd", ckpt.version, ckpt.vocab_digest, ckpt.epoch, ckpt.best_valid_mrr),
        struct.pack("<I", len(cfg)),
        cfg,
        struct.pack("<I", len(ckpt.params)),
    ]
    for name, arr in ckpt.params.items():
        nb = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    for arr in ckpt.params.values():
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(self.path, self.pos + n, len(self.buf))
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf, path="<bytes>", expected_digest=None):
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a dsmt checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    digest, epoch, best = r.unpack("<QQd")
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointDigestError(
            f"{path}: vocabulary digest {digest:016x} does not match dataset {expected_digest:016x}"
        )
    (clen,) = r.unpack("<I")
    config = json.loads(r.take(clen).decode("utf-8"))
    (count,) = r.unpack("<I")
    table = []
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        table.append((name, tuple(int(s) for s in shape)))
    expected = r.pos + 8 * sum(int(np.prod(s)) for _, s in table)
    if len(buf) < expected:
        raise CheckpointTruncatedError(path, expected, len(buf))
    if len(buf) > expected:
        raise CheckpointError(f"{path}: {len(buf) - expected} trailing bytes")
    params = {}
    for name, shape in table:
        n = int(np.prod(shape))
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    return Checkpoint(config, digest, params, best, epoch, version)


def save_checkpoint(path, ckpt):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))


def load_checkpoint(path, expected_digest=None):
    """Read and verify a checkpoint; nothing is returned on any error."""
    path = Path(path)
    return from_bytes(path.read_bytes(), str(path), expected_digest)
