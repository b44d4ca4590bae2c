"""Bit-exact serialized token streams (`.rvqs`).

Header (little-endian, 19 bytes):

    magic[4] = "RVQS", version u16, sample_rate u32, frame_rate u16,
    K u16, q u8, T u32

Payload: one code per (frame, stage), frame-major then stage-major, each
log2(K) bits wide, LSB-first within the bit buffer, zero-padded to a byte
boundary.  A q' <= q prefix of every stream is itself a valid stream.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptPadding,
    InvalidInput,
    NotABitstream,
    Truncated,
)
from .rvq import TokenStream

MAGIC = b"RVQS"
VERSION = 1
_HEADER_FMT = "<4sHIHHBI"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)  # 19 bytes


@dataclass(frozen=True)
class StreamHeader:
    sample_rate: int
    frame_rate: int
    codebook_size: int
    n_stages: int
    n_frames: int
    version: int = VERSION

    def __post_init__(self):
        if self.codebook_size < 2 or self.codebook_size & (self.codebook_size - 1):
            raise NotABitstream(f"header K={self.codebook_size} is not a power of two")
        if self.n_stages < 1:
            raise NotABitstream(f"header q={self.n_stages} must be >= 1")
        if self.sample_rate <= 0 or self.frame_rate <= 0:
            raise NotABitstream("header rates must be positive")

    @property
    def bits_per_code(self) -> int:
        return int(math.log2(self.codebook_size))

    @property
    def payload_bits(self) -> int:
        return self.n_frames * self.n_stages * self.bits_per_code

    @property
    def payload_bytes(self) -> int:
        return (self.payload_bits + 7) // 8


def _pack_codes(codes: np.ndarray, bits: int) -> bytes:
    """Pack flat codes LSB-first into bytes, zero-padded to a boundary."""
    if codes.size == 0:
        return b""
    bit_matrix = (codes[:, None].astype(np.uint32) >> np.arange(bits)) & 1
    return np.packbits(bit_matrix.astype(np.uint8).ravel(), bitorder="little").tobytes()


def _unpack_codes(payload: bytes, bits: int, count: int) -> np.ndarray:
    bit_array = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    used = count * bits
    if np.any(bit_array[used:] != 0):
        raise CorruptPadding("padding bits after the payload are not zero")
    code_bits = bit_array[:used].reshape(count, bits).astype(np.uint32)
    return (code_bits << np.arange(bits, dtype=np.uint32)).sum(axis=1)


def pack(tokens: TokenStream, sample_rate: int) -> bytes:
    """Serialize a token stream; size = 19 + ceil(T*q*log2(K)/8) bytes."""
    if sample_rate <= 0:
        raise InvalidInput(f"sample_rate must be positive, got {sample_rate}")
    k = tokens.codebook_size
    if tokens.frames.size and int(tokens.frames.max()) >= k:
        raise InvalidInput(f"token index {int(tokens.frames.max())} overflows K={k}")
    header = StreamHeader(
        sample_rate=sample_rate,
        frame_rate=tokens.frame_rate,
        codebook_size=k,
        n_stages=tokens.n_stages,
        n_frames=tokens.n_frames,
    )
    head = struct.pack(
        _HEADER_FMT,
        MAGIC,
        VERSION,
        header.sample_rate,
        header.frame_rate,
        header.codebook_size,
        header.n_stages,
        header.n_frames,
    )
    return head + _pack_codes(tokens.frames.ravel(), header.bits_per_code)


def unpack(data: bytes) -> tuple[StreamHeader, TokenStream]:
    """Parse a stream; inverse of :func:`pack` on every field."""
    if len(data) < HEADER_SIZE:
        if len(data) < 4 or data[:4] != MAGIC:
            raise NotABitstream("too short to hold a stream header")
        raise Truncated(HEADER_SIZE, len(data))
    magic, version, sample_rate, frame_rate, k, q, t = struct.unpack_from(_HEADER_FMT, data)
    if magic != MAGIC:
        raise NotABitstream(f"bad magic {magic!r}")
    if version != VERSION:
        raise NotABitstream(f"unsupported stream version {version}")
    header = StreamHeader(
        sample_rate=sample_rate,
        frame_rate=frame_rate,
        codebook_size=k,
        n_stages=q,
        n_frames=t,
    )
    payload = data[HEADER_SIZE:]
    if len(payload) != header.payload_bytes:
        raise Truncated(HEADER_SIZE + header.payload_bytes, len(data))
    codes = _unpack_codes(payload, header.bits_per_code, t * q)
    tokens = TokenStream(
        codes.reshape(t, q), codebook_size=k, frame_rate=frame_rate
    )
    return header, tokens


def prefix(data: bytes, n_stages: int) -> bytes:
    """Re-pack a stream keeping only the first n_stages codes per frame."""
    header, tokens = unpack(data)
    if not 1 <= n_stages <= header.n_stages:
        raise InvalidInput(
            f"prefix stages must be in [1, {header.n_stages}], got {n_stages}"
        )
    trimmed = TokenStream(
        tokens.frames[:, :n_stages],
        codebook_size=header.codebook_size,
        frame_rate=header.frame_rate,
    )
    return pack(trimmed, header.sample_rate)
