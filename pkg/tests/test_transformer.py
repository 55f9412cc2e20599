import numpy as np
import pytest

from diarc.numerics import DimensionError, Embedding, Tensor
from diarc.transformer import (
    Decoder,
    Encoder,
    GenerationComplete,
    MultiHeadAttention,
    SequenceLengthError,
    TransformerConfig,
    parameter_count,
    sinusoidal_encoding,
)

rng = np.random.default_rng(5)


def small_config(**kw):
    base = dict(num_layers=2, hidden_dim=16, num_heads=2, feedforward_dim=32,
                max_sequence_len=12, vocab_size=11, dropout_rate=0.0)
    base.update(kw)
    return TransformerConfig(**base)


def identity_mha(dim: int) -> MultiHeadAttention:
    mha = MultiHeadAttention(small_config(hidden_dim=dim, num_heads=1), rng)
    eye = np.eye(dim, dtype=np.float32)
    for lin in (mha.wq, mha.wk, mha.wv, mha.wo):
        lin.weight.data = eye.copy()
        lin.bias.data = np.zeros(dim, dtype=np.float32)
    return mha


def test_config_validates_head_divisibility():
    with pytest.raises(ValueError):
        TransformerConfig(hidden_dim=10, num_heads=3)


def test_config_defaults_match_reference_architecture():
    cfg = TransformerConfig()
    assert (cfg.num_layers, cfg.hidden_dim, cfg.num_heads) == (6, 256, 8)
    assert cfg.feedforward_dim == 4 * cfg.hidden_dim


def test_attention_single_position_returns_value_row():
    mha = identity_mha(4)
    x = Tensor(rng.normal(size=(1, 1, 4)).astype(np.float32))
    out = mha(x, x, x, np.ones((1, 1, 1), dtype=bool))
    assert np.allclose(out.data, x.data, atol=1e-5)


def test_attention_identical_keys_mix_half_half():
    mha = identity_mha(4)
    key = rng.normal(size=4).astype(np.float32)
    values = rng.normal(size=(2, 4)).astype(np.float32)
    k = Tensor(np.stack([key, key])[None, :, :])
    v = Tensor(values[None, :, :])
    q = Tensor(rng.normal(size=(1, 1, 4)).astype(np.float32))
    out = mha(q, k, v, np.ones((1, 1, 2), dtype=bool))
    assert np.allclose(out.data[0, 0], values.mean(axis=0), atol=1e-5)


def test_attention_fully_masked_row_outputs_zero():
    mha = MultiHeadAttention(small_config(), rng)
    x = Tensor(rng.normal(size=(1, 3, 16)).astype(np.float32))
    mask = np.ones((1, 3, 3), dtype=bool)
    mask[0, 1, :] = False
    out = mha(x, x, x, mask)
    assert np.allclose(out.data[0, 1], 0.0)
    assert not np.allclose(out.data[0, 0], 0.0)


def test_attention_mask_shape_mismatch():
    mha = MultiHeadAttention(small_config(), rng)
    x = Tensor(rng.normal(size=(1, 3, 16)).astype(np.float32))
    with pytest.raises(DimensionError):
        mha(x, x, x, np.ones((1, 2, 3), dtype=bool))


def test_encoder_zero_layers_is_input_plus_positional():
    cfg = small_config(num_layers=0)
    enc = Encoder(cfg, rng)
    x = rng.normal(size=(2, 5, 16)).astype(np.float32)
    out = enc(Tensor(x), np.ones((2, 5), dtype=bool))
    assert np.allclose(out.data, x + sinusoidal_encoding(5, 16), atol=1e-6)


def test_encoder_rejects_overlength():
    enc = Encoder(small_config(max_sequence_len=4), rng)
    with pytest.raises(SequenceLengthError):
        enc(Tensor(np.zeros((1, 5, 16), dtype=np.float32)),
            np.ones((1, 5), dtype=bool))


def test_encoder_pad_invariance():
    cfg = small_config()
    enc = Encoder(cfg, rng)
    x = rng.normal(size=(1, 4, 16)).astype(np.float32)
    mask4 = np.ones((1, 4), dtype=bool)
    base = enc(Tensor(x), mask4, add_positional=False).data[:, :4]

    # appending pad positions (arbitrary content) must not move non-pad outputs
    garbage = rng.normal(size=(1, 2, 16)).astype(np.float32)
    x6 = np.concatenate([x, garbage], axis=1)
    mask6 = np.concatenate([mask4, np.zeros((1, 2), dtype=bool)], axis=1)
    padded = enc(Tensor(x6), mask6, add_positional=False).data[:, :4]
    assert np.allclose(base, padded, atol=1e-5)

    # swapping the two pad positions' contents must not either
    x6_swapped = x6.copy()
    x6_swapped[:, [4, 5]] = x6_swapped[:, [5, 4]]
    swapped = enc(Tensor(x6_swapped), mask6, add_positional=False).data[:, :4]
    assert np.allclose(base, swapped, atol=1e-5)


def test_encoder_output_bounded_at_init():
    enc = Encoder(small_config(num_layers=3), np.random.default_rng(0))
    for trial in range(3):
        x = np.random.default_rng(trial).normal(size=(2, 8, 16)).astype(np.float32)
        out = enc(Tensor(x), np.ones((2, 8), dtype=bool))
        norms = np.linalg.norm(out.data, axis=-1)
        assert np.isfinite(out.data).all()
        assert norms.max() < 1e3


def make_decoder(max_len=9):
    cfg = small_config(max_sequence_len=max_len)
    gen = np.random.default_rng(3)
    embed = Embedding(cfg.vocab_size, cfg.hidden_dim, gen)
    return Decoder(cfg, embed, gen), cfg


def test_decoder_causality():
    dec, cfg = make_decoder()
    enc_out = Tensor(rng.normal(size=(1, 3, 16)).astype(np.float32))
    enc_mask = np.ones((1, 3), dtype=bool)
    p1 = np.array([[1, 4, 5, 6]])
    p2 = np.array([[1, 4, 9, 2]])  # differs only after position 1
    l1 = dec.decode_all(p1, enc_out, enc_mask).data
    l2 = dec.decode_all(p2, enc_out, enc_mask).data
    assert np.allclose(l1[:, :2], l2[:, :2], atol=1e-6)
    assert not np.allclose(l1[:, 3], l2[:, 3], atol=1e-4)


def test_decoder_deterministic():
    dec, cfg = make_decoder()
    enc_out = Tensor(rng.normal(size=(1, 3, 16)).astype(np.float32))
    enc_mask = np.ones((1, 3), dtype=bool)
    prefix = np.array([[1, 4, 5]])
    a = dec.decode_step(prefix, enc_out, enc_mask)
    b = dec.decode_step(prefix, enc_out, enc_mask)
    assert np.array_equal(a, b)


def test_decoder_generation_complete_signal():
    dec, cfg = make_decoder(max_len=4)
    enc_out = Tensor(rng.normal(size=(1, 2, 16)).astype(np.float32))
    enc_mask = np.ones((1, 2), dtype=bool)
    with pytest.raises(GenerationComplete):
        dec.decode_step(np.array([[1, 2, 3, 4]]), enc_out, enc_mask)


def test_greedy_rollout_reproducible():
    dec, cfg = make_decoder()
    enc_out = Tensor(np.random.default_rng(11).normal(size=(1, 3, 16)).astype(np.float32))
    enc_mask = np.ones((1, 3), dtype=bool)

    def rollout():
        prefix = np.array([[1]])
        for _ in range(6):
            logits = dec.decode_step(prefix, enc_out, enc_mask)
            prefix = np.concatenate([prefix, logits.argmax(-1)[:, None]], axis=1)
        return prefix.tolist()

    assert rollout() == rollout()


def test_parameter_count_frozen():
    # catches silent architecture drift in the default configuration
    gen = np.random.default_rng(0)
    cfg = TransformerConfig(vocab_size=100, max_sequence_len=16)
    enc = Encoder(cfg, gen)
    dec = Decoder(cfg, Embedding(cfg.vocab_size, cfg.hidden_dim, gen), gen)
    assert parameter_count(enc) == 4_738_560
    assert parameter_count(dec) == 6_371_940
