"""The ``.dstk`` token stream: bit-exact packing of semantic + acoustic ids.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"DSTK"
    4       1     version (1)
    5       4     sample_rate (24000)
    9       4     frame rate in centi-hertz (1250)
    13      1     n_s
    14      1     n_a
    15      1     bits per token (11)
    16      4     num_frames
    20      ...   payload

The payload is frame-major: per frame the semantic id (when ``n_s == 1``)
followed by ``n_a`` acoustic ids coarse to fine. Each id takes 11 bits,
most significant bit first; the last byte is zero-padded.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tokens import (
    MAX_TOKEN_ID,
    SAMPLE_RATE,
    TOKEN_BITS,
    AcousticTokenSeq,
    ConditioningSpec,
    SemanticTokenSeq,
)

MAGIC = b"DSTK"
VERSION = 1
FRAME_RATE_CENTI_HZ = 1250
_HEADER = struct.Struct("<4sBIIBBBI")
HEADER_SIZE = _HEADER.size


class BitstreamError(ValueError):
    code = "bitstream"


class BadMagicError(BitstreamError):
    code = "bad-magic"


class UnsupportedVersionError(BitstreamError):
    code = "bad-version"


class HeaderError(BitstreamError):
    code = "bad-header"


class TruncatedError(BitstreamError):
    code = "truncated"

    def __init__(self, missing: int, what: str = "payload"):
        super().__init__(f"truncated {what}: {missing} byte(s) missing")
        self.missing = missing


class PaddingError(BitstreamError):
    code = "nonzero-padding"


def payload_bits(num_frames: int, spec: ConditioningSpec) -> int:
    return num_frames * spec.depth * TOKEN_BITS


def file_size(num_frames: int, spec: ConditioningSpec) -> int:
    return HEADER_SIZE + math.ceil(payload_bits(num_frames, spec) / 8)


@dataclass(frozen=True)
class TokenBitstream:
    spec: ConditioningSpec
    num_frames: int
    payload: bytes

    @property
    def payload_bits(self) -> int:
        return payload_bits(self.num_frames, self.spec)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            MAGIC, VERSION, SAMPLE_RATE, FRAME_RATE_CENTI_HZ,
            self.spec.n_s, self.spec.n_a, TOKEN_BITS, self.num_frames,
        )
        return header + self.payload

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


def pack_ids(grid: np.ndarray) -> bytes:
    """Pack a ``(frames, tokens_per_frame)`` id grid MSB-first into bytes."""
    flat = np.asarray(grid, dtype=np.int64).reshape(-1)
    if flat.size and (flat.min() < 0 or flat.max() >= MAX_TOKEN_ID):
        raise ValueError(f"token ids must lie in [0, {MAX_TOKEN_ID})")
    shifts = np.arange(TOKEN_BITS - 1, -1, -1)
    bits = ((flat[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)
    return np.packbits(bits).tobytes()


def unpack_ids(payload: bytes, num_tokens: int) -> np.ndarray:
    nbits = num_tokens * TOKEN_BITS
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    if bits[nbits:].any():
        raise PaddingError("pad bits after the last token must be zero")
    weights = 1 << np.arange(TOKEN_BITS - 1, -1, -1)
    return bits[:nbits].reshape(num_tokens, TOKEN_BITS).astype(np.int64) @ weights


def pack(sem: SemanticTokenSeq | None, ac: AcousticTokenSeq, spec: ConditioningSpec) -> TokenBitstream:
    if ac.depth < spec.n_a:
        raise ValueError(f"acoustic tokens have depth {ac.depth}, stream needs n_a={spec.n_a}")
    columns = []
    if spec.n_s:
        if sem is None:
            raise ValueError("n_s=1 requires semantic tokens")
        if len(sem) != len(ac):
            raise ValueError(f"semantic ({len(sem)}) and acoustic ({len(ac)}) frame counts differ")
        columns.append(sem.ids[:, None])
    columns.append(ac.ids[:, : spec.n_a])
    grid = np.concatenate(columns, axis=1)
    return TokenBitstream(spec=spec, num_frames=len(ac), payload=pack_ids(grid))


def unpack(data: bytes) -> tuple[SemanticTokenSeq | None, AcousticTokenSeq, ConditioningSpec]:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"not a token stream: magic {data[:4]!r} != {MAGIC!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedError(HEADER_SIZE - len(data), "header")
    _, version, rate, frame_rate, n_s, n_a, bits, frames = _HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported stream version {version}")
    if rate != SAMPLE_RATE or frame_rate != FRAME_RATE_CENTI_HZ or bits != TOKEN_BITS:
        raise HeaderError(f"unexpected header values rate={rate} frame_rate={frame_rate} bits={bits}")
    try:
        spec = ConditioningSpec(n_s=n_s, n_a=n_a)
    except ValueError as exc:
        raise HeaderError(str(exc)) from None
    need = file_size(frames, spec)
    if len(data) < need:
        raise TruncatedError(need - len(data))
    if len(data) > need:
        raise HeaderError(f"{len(data) - need} trailing byte(s) after payload")
    ids = unpack_ids(data[HEADER_SIZE:], frames * spec.depth).reshape(frames, spec.depth)
    sem = SemanticTokenSeq(ids[:, 0]) if spec.n_s else None
    ac = AcousticTokenSeq(ids[:, spec.n_s :].reshape(frames, spec.n_a))
    return sem, ac, spec


def read(path):
    return unpack(Path(path).read_bytes())
