"""Growable encoder/decoder model: shapes, causality, growth, serialization."""

import numpy as np
import pytest

from fedgrow.data import SyntheticTask, collate, generate
from fedgrow.errors import ConfigError, DataError, FormatError, GrowthCapError
from fedgrow.model import DynamicTransformer, ModelConfig, batch_loss, loss, new_model
from fedgrow.optim import AdamState, adam_step
from fedgrow.rng import generator
from fedgrow.tensor import Tensor, backward, no_grad
from fedgrow.wire import deserialize_model, parse_payload, serialize_model


def tiny_config(**over):
    base = dict(
        vocab_size=11,
        frame_dim=5,
        d_model=8,
        heads=2,
        ffn_dim=12,
        target_layers=6,
        growth_parts=6,
        max_seq_len=32,
    )
    base.update(over)
    return ModelConfig(**base)


def probe_batch(config, seed=0, batch=2, tokens=5, frames=7):
    g = generator(seed)
    toks = g.integers(0, config.vocab_size, size=(batch, tokens))
    target = g.standard_normal((batch, frames, config.frame_dim))
    return toks, target


class TestConstruction:
    def test_initial_depth_is_layers_over_parts(self):
        assert new_model(tiny_config(), 1).depth == 1

    def test_initial_depth_two(self):
        assert new_model(tiny_config(target_layers=4, growth_parts=2), 1).depth == 2

    def test_same_seed_serializes_identically(self):
        a = serialize_model(new_model(tiny_config(), 9))
        b = serialize_model(new_model(tiny_config(), 9))
        assert a == b

    def test_indivisible_layers_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(target_layers=5, growth_parts=2)

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            tiny_config(d_model=9, heads=2)

    def test_biases_start_zero(self):
        model = new_model(tiny_config(), 3)
        assert np.all(model.head.b.raw.data == 0.0)
        assert np.all(model.enc_blocks[0].ffn1.b.raw.data == 0.0)


class TestForward:
    def test_output_shape_matches_target(self):
        config = tiny_config()
        model = new_model(config, 1)
        toks, target = probe_batch(config, batch=2, tokens=5, frames=7)
        out = model.forward(toks, target)
        assert out.data.shape == target.shape

    def test_causality_probe_all_positions(self):
        config = tiny_config()
        model = new_model(config, 2, depth=2)
        toks, target = probe_batch(config, seed=4, batch=1, tokens=4, frames=6)
        with no_grad():
            base = model.forward(toks, target).data
        for j in range(6):
            bumped = target.copy()
            bumped[0, j] += 1.0
            with no_grad():
                out = model.forward(toks, bumped).data
            changed = np.abs(out - base).max(axis=-1)[0] > 0
            assert not changed[: j + 1].any(), f"perturbing frame {j} leaked backward"
            # the shifted frame feeds positions strictly after j
            assert changed[j + 1 :].any() or j == 5

    def test_batch_permutation_equivariance(self):
        config = tiny_config()
        model = new_model(config, 5)
        g = generator(2)
        toks = g.integers(0, config.vocab_size, size=(3, 6))
        target = g.standard_normal((3, 9, config.frame_dim))
        with no_grad():
            base = model.forward(toks, target).data
            flipped = model.forward(toks[::-1].copy(), target[::-1].copy()).data
        assert np.allclose(base, flipped[::-1], atol=1e-12)

    def test_token_out_of_range(self):
        config = tiny_config()
        model = new_model(config, 1)
        toks, target = probe_batch(config)
        toks[0, 0] = config.vocab_size
        with pytest.raises(DataError):
            model.forward(toks, target)

    def test_sequence_cap(self):
        config = tiny_config()
        model = new_model(config, 1)
        g = generator(0)
        toks = g.integers(0, config.vocab_size, size=(1, config.max_seq_len + 1))
        target = g.standard_normal((1, 4, config.frame_dim))
        with pytest.raises(DataError):
            model.forward(toks, target)

    def test_padding_isolated_from_valid_rows(self):
        # a padded batch must reproduce each sample's solo forward
        config = tiny_config()
        model = new_model(config, 7, depth=2)
        task = SyntheticTask(
            seed=5,
            vocab_size=config.vocab_size,
            frame_dim=config.frame_dim,
            min_tokens=3,
            max_tokens=6,
            frames_per_token=2,
        )
        samples = generate(task, 3)
        tokens, t_len, frames, f_len = collate(samples)
        with no_grad():
            batch_out = model.forward(tokens, frames, t_len).data
            for i, s in enumerate(samples):
                solo = model.forward(
                    s.tokens[None, :], s.frames[None, :, :], np.array([len(s.tokens)])
                ).data
                got = batch_out[i, : f_len[i]]
                assert np.allclose(got, solo[0], atol=1e-9), f"sample {i} differs under padding"


class TestLoss:
    def test_zero_when_equal(self):
        x = generator(1).standard_normal((2, 3, 4))
        assert float(loss(Tensor(x), x).data) == 0.0

    def test_unit_difference(self):
        x = np.zeros((2, 5, 3))
        assert float(loss(Tensor(x + 1.0), x).data) == 1.0

    def test_matches_loop_oracle(self):
        g = generator(2)
        a, b = g.standard_normal((2, 3, 4)), g.standard_normal((2, 3, 4))
        total = sum(
            (a[i, j, k] - b[i, j, k]) ** 2
            for i in range(2)
            for j in range(3)
            for k in range(4)
        )
        assert abs(float(loss(Tensor(a), b).data) - total / 24) < 1e-12


class TestGrowth:
    def test_grow_preserves_existing_tensors_bitwise(self):
        model = new_model(tiny_config(), 3)
        images = {p.name: p.raw.data.tobytes() for p in model.parameters()}
        model.grow(1)
        assert model.depth == 2
        current = {p.name: p.raw.data for p in model.parameters()}
        for name, img in images.items():
            assert current[name].tobytes() == img

    def test_grow_at_cap_rejected(self):
        model = new_model(tiny_config(target_layers=2, growth_parts=2), 1, depth=2)
        with pytest.raises(GrowthCapError):
            model.grow(1)

    def test_param_count_grows_by_per_block_counts(self):
        model = new_model(tiny_config(), 3)
        before = model.param_count()
        model.grow(1)
        after = model.param_count()
        assert after["block_params"] - before["block_params"] == (
            before["per_enc_block"] + before["per_dec_block"]
        )
        assert after["fixed_params"] == before["fixed_params"]

    def test_per_block_counts_match_hand_enumeration(self):
        d, h, f = 8, 2, 16
        model = new_model(tiny_config(d_model=d, heads=h, ffn_dim=f), 1)
        # encoder block: 2 layer norms, 4 attention projections, 2 ffn layers
        enc = 2 * 2 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d)
        # decoder block adds one layer norm and another 4 projections
        dec = enc + 2 * d + 4 * (d * d + d)
        counts = model.param_count()
        assert counts["per_enc_block"] == enc
        assert counts["per_dec_block"] == dec

    def test_grown_blocks_match_fresh_deep_model(self):
        # growth draws from the same seed stream as deep-from-start construction
        config = tiny_config()
        grown = new_model(config, 11)
        grown.grow(2)
        deep = new_model(config, 11, depth=3)
        assert serialize_model(grown) == serialize_model(deep)

    def test_prefix_forward_identical_across_growth(self):
        config = tiny_config()
        model = new_model(config, 13, depth=2)
        toks, target = probe_batch(config, seed=8)
        with no_grad():
            before = model.forward(toks, target).data.tobytes()
        model.grow(1)
        with no_grad():
            after = model.forward(toks, target, depth=2).data.tobytes()
        assert before == after

    def test_stacks_always_equal_length(self):
        model = new_model(tiny_config(), 1)
        for _ in range(3):
            model.grow(1)
            assert len(model.enc_blocks) == len(model.dec_blocks) == model.depth

    def test_new_block_moments_start_zero(self):
        model = new_model(tiny_config(), 1)
        model.grow(1)
        for p in model.enc_blocks[1].params():
            assert np.all(p.m == 0.0) and np.all(p.v == 0.0)


class TestFrontLayerNorm:
    def test_zero_gamma_makes_sublayers_identity(self):
        # with pre-LN and zero-initialized biases, zeroing every LN gain that
        # feeds a sublayer turns each block into the identity map:
        # x + Sublayer(0) == x. Cross-attention reads its values from the
        # encoder memory, so the encoder's final norm is part of its input.
        config = tiny_config()
        model = new_model(config, 21, depth=2)
        for blk in list(model.enc_blocks) + list(model.dec_blocks):
            for p in blk.params():
                if p.name.endswith(".gamma"):
                    p.raw.data[:] = 0.0
                if p.name.endswith(".b"):
                    p.raw.data[:] = 0.0
        model.final_norm_enc.gamma.raw.data[:] = 0.0
        toks, target = probe_batch(config, seed=3)
        with no_grad():
            deep = model.forward(toks, target).data
            shallow = model.forward(toks, target, depth=0).data
        assert np.array_equal(deep, shallow)

    def test_gradient_reaches_bottom_block_at_full_depth(self):
        config = tiny_config()
        model = new_model(config, 17, depth=config.target_layers)
        toks, target = probe_batch(config, seed=6)
        out = model.forward(toks, target)
        backward(loss(out, target))
        bottom = model.enc_blocks[0].attn.q.w
        assert bottom.raw.grad is not None
        assert np.linalg.norm(bottom.raw.grad) > 0


class TestSerialization:
    def test_roundtrip_bit_exact(self):
        config = tiny_config()
        model = new_model(config, 23, depth=2)
        blob = serialize_model(model)
        clone = deserialize_model(blob, config)
        assert serialize_model(clone) == blob

    def test_weights_only_length_contract(self):
        model = new_model(tiny_config(), 2)
        blob = serialize_model(model, weights_only=True)
        payload = parse_payload(blob)
        n_weights = sum(p.raw.data.size for p in model.parameters())
        assert len(blob) == len(payload.header_bytes) + 8 * n_weights

    def test_moments_roundtrip(self):
        config = tiny_config()
        model = new_model(config, 2)
        toks, target = probe_batch(config)
        backward(loss(model.forward(toks, target), target))
        adam_step(model.parameters(), AdamState(lr=0.01))
        blob = serialize_model(model, weights_only=False)
        clone = deserialize_model(blob, config)
        for a, b in zip(model.parameters(), clone.parameters()):
            assert a.raw.data.tobytes() == b.raw.data.tobytes()
            assert a.m.tobytes() == b.m.tobytes()
            assert a.v.tobytes() == b.v.tobytes()
        assert serialize_model(clone, weights_only=False) == blob

    def test_tampered_magic_rejected(self):
        blob = bytearray(serialize_model(new_model(tiny_config(), 2)))
        blob[0] ^= 0xFF
        with pytest.raises(FormatError, match="magic"):
            parse_payload(bytes(blob))

    def test_config_mismatch_names_expected_and_found(self):
        model = new_model(tiny_config(), 2)
        blob = serialize_model(model)
        other = tiny_config(d_model=16, ffn_dim=24)
        with pytest.raises(FormatError, match="expected"):
            deserialize_model(blob, other)


class TestInfer:
    def test_single_frame_equals_teacher_forced_zero_frame(self):
        config = tiny_config()
        model = new_model(config, 31, depth=2)
        toks, _ = probe_batch(config, seed=9, frames=1)
        got = model.infer(toks, 1)
        with no_grad():
            expected = model.forward(toks, np.zeros((2, 1, config.frame_dim))).data
        assert np.array_equal(got, expected)

    def test_deterministic(self):
        config = tiny_config()
        model = new_model(config, 33)
        toks, _ = probe_batch(config, seed=10)
        assert np.array_equal(model.infer(toks, 5), model.infer(toks, 5))

    def test_training_reduces_teacher_forced_loss(self):
        # 200 centralized steps on a small fixed task beat the fresh model
        config = tiny_config(d_model=16, ffn_dim=24, vocab_size=8, frame_dim=4)
        task = SyntheticTask(
            seed=77,
            vocab_size=config.vocab_size,
            frame_dim=config.frame_dim,
            min_tokens=4,
            max_tokens=8,
            frames_per_token=2,
        )
        samples = generate(task, 64)
        tokens, t_len, frames, f_len = collate(samples)
        trained = new_model(config, 55)
        fresh = new_model(config, 55)
        adam = AdamState(lr=2e-3)
        params = trained.parameters()
        for _ in range(200):
            step_loss = batch_loss(trained, tokens, frames, t_len, f_len)
            backward(step_loss)
            adam_step(params, adam)
        with no_grad():
            trained_loss = float(batch_loss(trained, tokens, frames, t_len, f_len).data)
            fresh_loss = float(batch_loss(fresh, tokens, frames, t_len, f_len).data)
        assert trained_loss < fresh_loss
