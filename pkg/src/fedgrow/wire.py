"""Binary formats: weight payloads and the sealed transport codec.

All integers are little-endian. Weight payload layout:

    magic "FDTW" | version u32 | depth u32 | weights_only u8 | n_tensors u32
    table  : per tensor (name_hash u64, rank u8, dims u32 * rank)
    data   : per tensor float64 raw values [, adam_m, adam_v] in table order

The weights-only flag (1) is the wire mode used by the federation; flag 0
additionally carries both Adam moment tensors after each raw tensor. Round
trips are bit-exact.

The sealed codec stands in for the encrypt/decrypt step of the protocol: a
keyed XOR keystream plus a keyed integrity tag. It is deliberately not real
public-key cryptography; it gives the simulator a tamper-evident payload
boundary with deterministic output.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError, ProtocolError

WEIGHT_MAGIC = b"FDTW"
WEIGHT_VERSION = 1

_HEADER = struct.Struct("<4sIIBI")
_TABLE_ENTRY = struct.Struct("<QB")

CODEC_IDENTITY = "identity"
CODEC_SEALED = "sealed"
CODECS = (CODEC_IDENTITY, CODEC_SEALED)

_MAC_SIZE = 16
_STREAM_BLOCK = 64


def name_hash(name: str) -> int:
    """Stable 64-bit hash of a tensor name."""
    return int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass
class WeightPayload:
    """Parsed payload: header fields plus read-only array views."""

    depth: int
    weights_only: bool
    table: tuple[tuple[int, tuple[int, ...]], ...]
    header_bytes: bytes
    raws: list[np.ndarray]
    moments: list[tuple[np.ndarray, np.ndarray]] | None

    @property
    def weight_count(self) -> int:
        return sum(r.size for r in self.raws)


def payload_header_size(n_tensors: int, ranks: list[int]) -> int:
    return _HEADER.size + sum(_TABLE_ENTRY.size + 4 * r for r in ranks)


def serialize_model(model, weights_only: bool = True) -> bytes:
    """Model -> payload bytes; see module docstring for the layout."""
    params = model.parameters()
    buf = bytearray()
    buf += _HEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, model.depth, 1 if weights_only else 0, len(params))
    for p in params:
        dims = p.raw.data.shape
        buf += _TABLE_ENTRY.pack(name_hash(p.name), len(dims))
        buf += struct.pack(f"<{len(dims)}I", *dims)
    for p in params:
        buf += p.raw.data.tobytes()
        if not weights_only:
            buf += p.m.tobytes()
            buf += p.v.tobytes()
    return bytes(buf)


def parse_payload(data: bytes) -> WeightPayload:
    """Payload bytes -> parsed header and array views (no model needed)."""
    if len(data) < _HEADER.size:
        raise FormatError(f"payload truncated: {len(data)} bytes, header needs {_HEADER.size}")
    magic, version, depth, flag, n_tensors = _HEADER.unpack_from(data, 0)
    if magic != WEIGHT_MAGIC:
        raise FormatError(f"bad payload magic: expected {WEIGHT_MAGIC!r}, found {magic!r}")
    if version != WEIGHT_VERSION:
        raise FormatError(f"payload version mismatch: expected {WEIGHT_VERSION}, found {version}")
    if flag not in (0, 1):
        raise FormatError(f"bad weights-only flag: {flag}")
    offset = _HEADER.size
    table: list[tuple[int, tuple[int, ...]]] = []
    for _ in range(n_tensors):
        if offset + _TABLE_ENTRY.size > len(data):
            raise FormatError("payload truncated inside tensor table")
        h, rank = _TABLE_ENTRY.unpack_from(data, offset)
        offset += _TABLE_ENTRY.size
        if offset + 4 * rank > len(data):
            raise FormatError("payload truncated inside tensor dims")
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        table.append((h, dims))
    header_bytes = bytes(data[:offset])

    weights_only = flag == 1
    raws: list[np.ndarray] = []
    moments: list[tuple[np.ndarray, np.ndarray]] | None = None if weights_only else []
    for _, dims in table:
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        copies = 1 if weights_only else 3
        need = 8 * count * copies
        if offset + need > len(data):
            raise FormatError(f"payload truncated inside tensor data at byte {offset}")
        raw = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(dims)
        offset += 8 * count
        if not weights_only:
            m = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(dims)
            offset += 8 * count
            v = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(dims)
            offset += 8 * count
            moments.append((m, v))
        raws.append(raw)
    if offset != len(data):
        raise FormatError(f"payload has {len(data) - offset} trailing bytes")
    return WeightPayload(depth, weights_only, tuple(table), header_bytes, raws, moments)


def load_payload(model, payload: WeightPayload) -> None:
    """Copy payload tensors into the model's params; shapes must match exactly."""
    params = model.parameters()
    if payload.depth != model.depth:
        raise FormatError(f"payload depth {payload.depth} does not match model depth {model.depth}")
    if len(payload.table) != len(params):
        raise FormatError(
            f"payload tensor count mismatch: expected {len(params)}, found {len(payload.table)}"
        )
    for p, (h, dims), raw in zip(params, payload.table, payload.raws):
        if h != name_hash(p.name):
            raise FormatError(f"payload tensor hash mismatch at {p.name!r}")
        if tuple(dims) != p.raw.data.shape:
            raise FormatError(
                f"payload shape mismatch at {p.name!r}: expected {p.raw.data.shape}, found {tuple(dims)}"
            )
        p.raw.data = raw.astype(np.float64)  # fresh writeable copy
    if payload.moments is not None:
        for p, (m, v) in zip(params, payload.moments):
            p.m = m.astype(np.float64)
            p.v = v.astype(np.float64)


def deserialize_model(data: bytes, config, seed: int = 0):
    """Payload bytes -> fresh model; ``seed`` feeds only future growth."""
    from .model import DynamicTransformer  # deferred: wire <-> model layering

    payload = parse_payload(data)
    if payload.depth < 1 or payload.depth > config.target_layers:
        raise FormatError(
            f"payload depth {payload.depth} outside 1..{config.target_layers} for this config"
        )
    model = DynamicTransformer(config, seed, depth=payload.depth)
    load_payload(model, payload)
    return model


def average_payloads(payloads: list[bytes]) -> bytes:
    """Elementwise mean of weight payloads, anchored on the first payload.

    Summation order is the list order (caller fixes it to client-id order).
    The anchored form ``p0 + sum(pi - p0)/M`` returns the shared payload
    bit-exactly when all payloads are identical, which a naive sum/M does not.
    """
    if not payloads:
        raise ProtocolError("average_payloads: empty payload list")
    first = parse_payload(payloads[0])
    header = payloads[0][: len(first.header_bytes)]
    for other in payloads[1:]:
        if other[: len(header)] != header:
            raise ProtocolError("average_payloads: payloads carry different tensor tables")
    if not first.weights_only:
        raise ProtocolError("average_payloads: expected weights-only payloads")
    m = len(payloads)
    base = np.frombuffer(payloads[0], dtype="<f8", offset=len(header))
    acc = np.zeros_like(base)
    for other in payloads[1:]:
        acc += np.frombuffer(other, dtype="<f8", offset=len(header)) - base
    mean = base + acc / m
    return bytes(header) + mean.tobytes()


# ---------------------------------------------------------------------------
# sealed transport codec
# ---------------------------------------------------------------------------


def _key_bytes(key: int) -> bytes:
    return int(key).to_bytes(8, "little", signed=False)


def _keystream(key: bytes, n: int) -> np.ndarray:
    blocks = []
    for counter in range((n + _STREAM_BLOCK - 1) // _STREAM_BLOCK):
        h = hashlib.blake2b(counter.to_bytes(8, "little"), key=key, digest_size=_STREAM_BLOCK)
        blocks.append(h.digest())
    stream = np.frombuffer(b"".join(blocks), dtype=np.uint8)
    return stream[:n]


def seal(data: bytes, codec: str, key: int = 0) -> bytes:
    """Wrap payload bytes for transport; deterministic for fixed (data, key)."""
    if codec == CODEC_IDENTITY:
        return data
    if codec != CODEC_SEALED:
        raise ConfigError(f"unknown codec {codec!r}; expected one of {CODECS}")
    kb = _key_bytes(key)
    raw = np.frombuffer(data, dtype=np.uint8)
    cipher = (raw ^ _keystream(kb, len(data))).tobytes()
    mac = hashlib.blake2b(cipher, key=kb, digest_size=_MAC_SIZE).digest()
    return cipher + mac


def unseal(blob: bytes, codec: str, key: int = 0) -> bytes:
    """Inverse of seal; raises IntegrityError on any corruption."""
    if codec == CODEC_IDENTITY:
        return blob
    if codec != CODEC_SEALED:
        raise ConfigError(f"unknown codec {codec!r}; expected one of {CODECS}")
    if len(blob) < _MAC_SIZE:
        raise IntegrityError(f"sealed blob too short: {len(blob)} bytes")
    kb = _key_bytes(key)
    cipher, mac = blob[:-_MAC_SIZE], blob[-_MAC_SIZE:]
    expected = hashlib.blake2b(cipher, key=kb, digest_size=_MAC_SIZE).digest()
    if mac != expected:
        raise IntegrityError("sealed blob failed its integrity check")
    raw = np.frombuffer(cipher, dtype=np.uint8)
    return (raw ^ _keystream(kb, len(cipher))).tobytes()
