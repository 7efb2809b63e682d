"""Deterministic synthetic seq2seq corpus and client-shard splitting.

Samples map a token sequence to a frame sequence through a fixed teacher:
frame j is the mean of the codebook vectors of the tokens in a width-3 window
centered at token position floor(j / r), plus a small sinusoidal position
bias. The mapping is smooth, has an exact closed-form oracle, and a
single-block model fits it only imperfectly, so added depth has headroom.

Every sample is generated from its own derived seed, which makes generation
chunk-invariant: producing indices [0, n) in one call or several yields
identical samples.

Corpus files use the same header discipline as weight payloads:

    magic "FDTC" | version u32 | n_samples u32 | frame_dim u32
    per sample: s_len u32, f_len u32, tokens i64 * s_len, frames f64 * (f_len * frame_dim)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .rng import generator, init_normal, subseed

CORPUS_MAGIC = b"FDTC"
CORPUS_VERSION = 1

_BIAS_AMPLITUDE = 0.1
_WINDOW = 3  # token window width for the teacher mapping


@dataclass(frozen=True)
class SyntheticTask:
    """Corpus recipe; the codebook is a pure function of (seed, sizes)."""

    seed: int
    vocab_size: int
    frame_dim: int
    min_tokens: int
    max_tokens: int
    frames_per_token: int
    position_bias: bool = True

    def __post_init__(self):
        if self.vocab_size < 1 or self.frame_dim < 1 or self.frames_per_token < 1:
            raise ConfigError("task sizes must be positive")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError(
                f"task token range [{self.min_tokens}, {self.max_tokens}] is invalid"
            )

    def codebook(self) -> np.ndarray:
        return init_normal((self.vocab_size, self.frame_dim), subseed(self.seed, "codebook"))


@dataclass(frozen=True, eq=False)
class Sample:
    tokens: np.ndarray  # int64 [S]
    frames: np.ndarray  # float64 [S * r, frame_dim]


def position_bias_table(n_frames: int, frame_dim: int) -> np.ndarray:
    """Fixed sinusoidal bias added to teacher frames; closed form, no RNG."""
    j = np.arange(n_frames, dtype=np.float64)[:, None]
    d = np.arange(frame_dim, dtype=np.float64)[None, :]
    freq = np.power(10.0, -2.0 * d / frame_dim)
    return _BIAS_AMPLITUDE * np.sin((j + 1.0) * freq)


def teacher_frames(task: SyntheticTask, tokens: np.ndarray, codebook: np.ndarray | None = None) -> np.ndarray:
    """Deterministic target frames for a token sequence."""
    cb = task.codebook() if codebook is None else codebook
    s = len(tokens)
    r = task.frames_per_token
    f = s * r
    frames = np.empty((f, task.frame_dim), dtype=np.float64)
    for j in range(f):
        p = j // r
        lo, hi = max(0, p - 1), min(s, p + 2)
        frames[j] = cb[tokens[lo:hi]].mean(axis=0)
    if task.position_bias:
        frames += position_bias_table(f, task.frame_dim)
    return frames


def generate(task: SyntheticTask, n_samples: int, start: int = 0) -> list[Sample]:
    """Samples with indices [start, start + n_samples); chunk-invariant."""
    if n_samples < 1:
        raise ConfigError(f"generate: n_samples must be >= 1, got {n_samples}")
    cb = task.codebook()
    out = []
    for i in range(start, start + n_samples):
        g = generator(subseed(task.seed, "sample", i))
        s = int(g.integers(task.min_tokens, task.max_tokens + 1))
        tokens = g.integers(0, task.vocab_size, size=s, dtype=np.int64)
        out.append(Sample(tokens, teacher_frames(task, tokens, cb)))
    return out


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """Shard size proportions; Balanced{n} is Ratios{1 x n}."""

    ratios: tuple[int, ...]

    def __post_init__(self):
        if not self.ratios:
            raise ConfigError("split ratios must be non-empty")
        if any(r < 1 for r in self.ratios):
            raise ConfigError(f"split ratios must be positive, got {self.ratios}")

    @staticmethod
    def balanced(n_clients: int) -> "SplitSpec":
        if n_clients < 1:
            raise ConfigError(f"balanced split needs >= 1 client, got {n_clients}")
        return SplitSpec((1,) * n_clients)


def split_sizes(total: int, spec: SplitSpec) -> list[int]:
    """Proportional shard sizes; the remainder goes to the largest ratio
    (first such index on ties)."""
    rsum = sum(spec.ratios)
    sizes = [total * r // rsum for r in spec.ratios]
    remainder = total - sum(sizes)
    if remainder:
        sizes[max(range(len(spec.ratios)), key=lambda i: (spec.ratios[i], -i))] += remainder
    return sizes


def split(samples: list[Sample], spec: SplitSpec, seed: int) -> list[list[Sample]]:
    """Disjoint shards covering the input, assigned by a seeded permutation."""
    sizes = split_sizes(len(samples), spec)
    perm = generator(subseed(seed, "split")).permutation(len(samples))
    shards = []
    offset = 0
    for size in sizes:
        shards.append([samples[i] for i in perm[offset : offset + size]])
        offset += size
    return shards


def holdout(samples: list[Sample], n_test: int, seed: int) -> tuple[list[Sample], list[Sample]]:
    """Seeded disjoint train/test split preserving original order within each part."""
    total = len(samples)
    if not 0 < n_test < total:
        raise ConfigError(f"holdout: n_test={n_test} must be in 1..{total - 1}")
    perm = generator(subseed(seed, "holdout")).permutation(total)
    test_idx = set(int(i) for i in perm[:n_test])
    train = [s for i, s in enumerate(samples) if i not in test_idx]
    test = [s for i, s in enumerate(samples) if i in test_idx]
    return train, test


def shard_fingerprint(samples: list[Sample]) -> int:
    """Content hash of a shard; identical shards produce identical local
    data orders regardless of which client holds them."""
    h = hashlib.blake2b(digest_size=8)
    for s in samples:
        h.update(len(s.tokens).to_bytes(4, "little"))
        h.update(s.tokens.astype("<i8").tobytes())
    return int.from_bytes(h.digest(), "little")


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def collate(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Pad a list of samples into rectangular arrays.

    Returns (tokens [B, Smax], token_lengths [B], frames [B, Fmax, d],
    frame_lengths [B]); padding is zeros and is excluded via the lengths.
    """
    b = len(samples)
    s_max = max(len(s.tokens) for s in samples)
    f_max = max(s.frames.shape[0] for s in samples)
    fd = samples[0].frames.shape[1]
    tokens = np.zeros((b, s_max), dtype=np.int64)
    frames = np.zeros((b, f_max, fd), dtype=np.float64)
    t_len = np.empty(b, dtype=np.int64)
    f_len = np.empty(b, dtype=np.int64)
    for i, s in enumerate(samples):
        t_len[i] = len(s.tokens)
        f_len[i] = s.frames.shape[0]
        tokens[i, : t_len[i]] = s.tokens
        frames[i, : f_len[i]] = s.frames
    return tokens, t_len, frames, f_len


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


def corpus_to_bytes(samples: list[Sample]) -> bytes:
    fd = samples[0].frames.shape[1]
    buf = bytearray()
    buf += struct.pack("<4sIII", CORPUS_MAGIC, CORPUS_VERSION, len(samples), fd)
    for s in samples:
        buf += struct.pack("<II", len(s.tokens), s.frames.shape[0])
        buf += s.tokens.astype("<i8").tobytes()
        buf += s.frames.astype("<f8").tobytes()
    return bytes(buf)


def corpus_from_bytes(data: bytes) -> list[Sample]:
    head = struct.Struct("<4sIII")
    if len(data) < head.size:
        raise FormatError(f"corpus truncated: {len(data)} bytes")
    magic, version, n, fd = head.unpack_from(data, 0)
    if magic != CORPUS_MAGIC:
        raise FormatError(f"bad corpus magic: expected {CORPUS_MAGIC!r}, found {magic!r}")
    if version != CORPUS_VERSION:
        raise FormatError(f"corpus version mismatch: expected {CORPUS_VERSION}, found {version}")
    offset = head.size
    out = []
    for _ in range(n):
        if offset + 8 > len(data):
            raise FormatError("corpus truncated inside sample header")
        s_len, f_len = struct.unpack_from("<II", data, offset)
        offset += 8
        need = 8 * s_len + 8 * f_len * fd
        if offset + need > len(data):
            raise FormatError(f"corpus truncated inside sample data at byte {offset}")
        tokens = np.frombuffer(data, dtype="<i8", count=s_len, offset=offset).copy()
        offset += 8 * s_len
        frames = (
            np.frombuffer(data, dtype="<f8", count=f_len * fd, offset=offset)
            .reshape(f_len, fd)
            .copy()
        )
        offset += 8 * f_len * fd
        out.append(Sample(tokens, frames))
    if offset != len(data):
        raise FormatError(f"corpus has {len(data) - offset} trailing bytes")
    return out


def save_corpus(path: str | Path, samples: list[Sample]) -> None:
    Path(path).write_bytes(corpus_to_bytes(samples))


def load_corpus(path: str | Path) -> list[Sample]:
    return corpus_from_bytes(Path(path).read_bytes())
