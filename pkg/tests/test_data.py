"""Synthetic corpus generation, splitting, holdout, and corpus files."""

import numpy as np
import pytest

from fedgrow.data import (
    Sample,
    SplitSpec,
    SyntheticTask,
    collate,
    corpus_from_bytes,
    corpus_to_bytes,
    generate,
    holdout,
    position_bias_table,
    shard_fingerprint,
    split,
    split_sizes,
    teacher_frames,
)
from fedgrow.errors import ConfigError, FormatError


def task(**over):
    base = dict(
        seed=42, vocab_size=16, frame_dim=6, min_tokens=4, max_tokens=9, frames_per_token=2
    )
    base.update(over)
    return SyntheticTask(**base)


class TestGeneration:
    def test_deterministic(self):
        a = generate(task(), 10)
        b = generate(task(), 10)
        for x, y in zip(a, b):
            assert np.array_equal(x.tokens, y.tokens)
            assert x.frames.tobytes() == y.frames.tobytes()

    def test_chunked_equals_single_call(self):
        whole = generate(task(), 10)
        parts = generate(task(), 6) + generate(task(), 4, start=6)
        for x, y in zip(whole, parts):
            assert np.array_equal(x.tokens, y.tokens)
            assert x.frames.tobytes() == y.frames.tobytes()

    def test_constant_tokens_without_bias_give_codebook_row(self):
        t = task(position_bias=False)
        tokens = np.full(6, 3, dtype=np.int64)
        frames = teacher_frames(t, tokens)
        row = t.codebook()[3]
        assert np.allclose(frames, row[None, :], rtol=1e-14, atol=1e-14)

    def test_frames_match_independent_window_oracle(self):
        t = task()
        sample = generate(t, 3)[2]
        cb = t.codebook()
        r = t.frames_per_token
        s = len(sample.tokens)
        bias = position_bias_table(s * r, t.frame_dim)
        for j in range(s * r):
            p = j // r
            window = [sample.tokens[q] for q in range(max(0, p - 1), min(s, p + 2))]
            expected = sum(cb[w] for w in window) / len(window) + bias[j]
            assert np.max(np.abs(sample.frames[j] - expected)) < 1e-12

    def test_lengths_within_range_and_frame_ratio(self):
        t = task()
        for s in generate(t, 25):
            assert t.min_tokens <= len(s.tokens) <= t.max_tokens
            assert s.frames.shape == (len(s.tokens) * t.frames_per_token, t.frame_dim)

    def test_token_range_validated(self):
        with pytest.raises(ConfigError):
            task(min_tokens=5, max_tokens=4)


def make_dummy_samples(n):
    return [
        Sample(np.array([i % 7, (i * 3) % 7], dtype=np.int64), np.zeros((4, 2)))
        for i in range(n)
    ]


class TestSplit:
    def test_balanced_five_way_2520(self):
        sizes = split_sizes(12600, SplitSpec.balanced(5))
        assert sizes == [2520] * 5

    def test_ratio_one_one_three(self):
        sizes = split_sizes(12600, SplitSpec((1, 1, 3)))
        assert sizes == [2520, 2520, 7560]

    def test_exact_small_proportion(self):
        sizes = split_sizes(10, SplitSpec((1, 1, 8)))
        assert sizes == [1, 1, 8]

    def test_remainder_goes_to_largest_ratio(self):
        assert split_sizes(11, SplitSpec((1, 1, 1))) == [5, 3, 3]
        assert split_sizes(11, SplitSpec((1, 3, 1))) == [2, 7, 2]

    def test_partition_property(self):
        samples = make_dummy_samples(103)
        shards = split(samples, SplitSpec((2, 3, 4)), seed=5)
        assert sum(len(s) for s in shards) == 103
        seen_ids = sorted(id(x) for shard in shards for x in shard)
        assert seen_ids == sorted(id(x) for x in samples)

    def test_deterministic_assignment(self):
        samples = make_dummy_samples(20)
        a = split(samples, SplitSpec((1, 1)), seed=9)
        b = split(samples, SplitSpec((1, 1)), seed=9)
        assert [[id(x) for x in s] for s in a] == [[id(x) for x in s] for s in b]

    def test_empty_ratios_rejected(self):
        with pytest.raises(ConfigError):
            SplitSpec(())

    def test_nonpositive_ratio_rejected(self):
        with pytest.raises(ConfigError):
            SplitSpec((1, 0, 2))


class TestHoldout:
    def test_paper_scale_arithmetic(self):
        samples = make_dummy_samples(13100)
        train, test = holdout(samples, 500, seed=1)
        assert len(train) == 12600
        assert len(test) == 500

    def test_partition(self):
        samples = make_dummy_samples(50)
        train, test = holdout(samples, 13, seed=2)
        ids = sorted(id(x) for x in train + test)
        assert ids == sorted(id(x) for x in samples)
        assert not (set(id(x) for x in train) & set(id(x) for x in test))

    def test_deterministic_membership(self):
        samples = make_dummy_samples(30)
        a = holdout(samples, 10, seed=3)
        b = holdout(samples, 10, seed=3)
        assert [id(x) for x in a[1]] == [id(x) for x in b[1]]

    def test_oversized_test_rejected(self):
        with pytest.raises(ConfigError):
            holdout(make_dummy_samples(5), 5, seed=0)


class TestCollate:
    def test_padded_shapes_and_lengths(self):
        t = task()
        samples = generate(t, 4)
        tokens, t_len, frames, f_len = collate(samples)
        assert tokens.shape[0] == 4 and frames.shape[0] == 4
        assert tokens.shape[1] == max(t_len)
        assert frames.shape[1] == max(f_len)
        for i, s in enumerate(samples):
            assert np.array_equal(tokens[i, : t_len[i]], s.tokens)
            assert np.all(tokens[i, t_len[i] :] == 0)
            assert np.array_equal(frames[i, : f_len[i]], s.frames)


class TestCorpusFile:
    def test_roundtrip_bit_exact(self):
        samples = generate(task(), 12)
        blob = corpus_to_bytes(samples)
        back = corpus_from_bytes(blob)
        assert corpus_to_bytes(back) == blob
        for a, b in zip(samples, back):
            assert np.array_equal(a.tokens, b.tokens)
            assert a.frames.tobytes() == b.frames.tobytes()

    def test_bad_magic(self):
        blob = bytearray(corpus_to_bytes(generate(task(), 2)))
        blob[1] ^= 0x55
        with pytest.raises(FormatError, match="magic"):
            corpus_from_bytes(bytes(blob))

    def test_truncation_detected(self):
        blob = corpus_to_bytes(generate(task(), 2))
        with pytest.raises(FormatError):
            corpus_from_bytes(blob[:-4])


class TestFingerprint:
    def test_identical_content_same_fingerprint(self):
        a = generate(task(), 5)
        b = generate(task(), 5)
        assert shard_fingerprint(a) == shard_fingerprint(b)

    def test_different_content_differs(self):
        a = generate(task(), 5)
        b = generate(task(seed=43), 5)
        assert shard_fingerprint(a) != shard_fingerprint(b)
