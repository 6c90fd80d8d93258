import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from groundnet import tensor as T
from groundnet.puddleworld import NOISE_LEXICON
from groundnet.tensor import ConfigError, Tensor
from groundnet.text import (OOV, PAD, ParamDecoder, TextEncoder, Vocabulary, attention_pool, decode_params,
                            detokenize, param_size, split_params, tokenize, uniform_pool)


def test_tokenize_rules():
    assert tokenize("Reach the triangle.") == ["reach", "the", "triangle"]
    assert tokenize("  Go,  NOW!  ") == ["go", "now"]
    for bad in ("", "   ", None):
        with pytest.raises(ValueError):
            tokenize(bad)


@given(st.lists(st.sampled_from(["reach", "the", "cell", "two", "left", "of", "spade"]), min_size=1, max_size=12))
def test_tokenize_detokenize_round_trip(tokens):
    assert tokenize(detokenize(tokens)) == tokens


def test_vocabulary(tmp_path):
    v = Vocabulary.build(["reach the star", "go left"], NOISE_LEXICON)
    assert v.stoi["<pad>"] == PAD and v.stoi["<oov>"] == OOV
    assert v.encode("reach the zebra")[-1] == OOV
    assert all(w in v for w in NOISE_LEXICON)
    assert len(set(v.stoi.values())) == len(v)
    v.save(tmp_path / "v.txt")
    lines = (tmp_path / "v.txt").read_text().splitlines()
    assert v.stoi[lines[0]] == 2
    assert Vocabulary.load(tmp_path / "v.txt").itos == v.itos


def test_param_size_values():
    assert param_size(7, 10, 10) == 263
    assert param_size(13, 10, 10) == 383
    assert param_size(1, 1, 1) == 8


def test_decode_split_example():
    p = decode_params(np.arange(263.0), 7, 10, 10)
    assert p.W1.shape == (10, 15) and p.W1[0, 0] == 0 and p.W1[9, 14] == 149
    assert p.W2[0, 0] == 150 and p.W3[0, 9] == 259
    assert p.beta.tolist() == [260, 261, 262]
    with pytest.raises(ConfigError):
        decode_params(np.zeros(262), 7)


@given(st.integers(1, 8), st.integers(1, 6), st.integers(1, 6))
def test_split_flatten_bijection(k, a1, a2):
    h = np.random.default_rng(k * 100 + a1 * 10 + a2).normal(size=param_size(k, a1, a2))
    assert np.array_equal(split_params(h, k, a1, a2).flatten(), h)


def test_decoder_flatten_matches_affine(rng):
    dec = ParamDecoder(7, rng=rng)
    c = rng.normal(size=30)
    assert np.array_equal(dec.decode(c).flatten(), c @ dec.D.data + dec.bias.data)


def test_lstm_shapes_and_zero_weights(rng):
    enc = TextEncoder(20, rng=rng)
    states, mask = enc.encode([[3]])
    assert states.shape == (1, 1, 30)
    for p in enc.parameters():
        p.data[...] = 0.0
    states, _ = enc.encode([[3, 4, 5], [6]])
    assert np.all(states.data == 0.0)


def test_lstm_padding_carries_state(rng):
    enc = TextEncoder(20, rng=rng)
    alone, _ = enc.encode([[3, 4]])
    batched, mask = enc.encode([[3, 4], [5, 6, 7, 8]])
    assert np.allclose(batched.data[0, :2], alone.data[0])
    assert np.allclose(batched.data[0, 2], batched.data[0, 1]) and not mask[0, 2]


def test_lstm_truncation_warns(rng, caplog):
    enc = TextEncoder(20, rng=rng, max_len=5)
    with caplog.at_level(logging.WARNING):
        states, _ = enc.encode([list(range(2, 12))])
    assert states.shape[1] == 5 and "truncated" in caplog.text


def test_lstm_gradient_wrt_embeddings(rng):
    enc = TextEncoder(12, rng=rng)
    w = rng.normal(size=30)
    fn = lambda: T.tsum(T.mul(enc.final_state(*enc.encode([[2, 5, 7, 3]])), w))
    assert T.gradcheck(fn, [enc.emb, enc.Wh]) < 1e-4


def test_attention_examples(rng):
    states = Tensor(rng.normal(size=(1, 4, 30)))
    proj = Tensor(rng.normal(size=(14, 30)))
    ctx, alpha = attention_pool(states, Tensor(np.zeros((1, 2, 14))), proj, np.ones((1, 4), bool))
    assert np.allclose(alpha.data, 0.25)
    one = Tensor(rng.normal(size=(1, 1, 30)))
    ctx, alpha = attention_pool(one, Tensor(rng.normal(size=(1, 3, 14))), proj)
    assert np.allclose(alpha.data, 1.0) and np.allclose(ctx.data, one.data)


@given(st.integers(0, 1000), st.integers(1, 9))
def test_attention_probability_vector(seed, L):
    rng = np.random.default_rng(seed)
    states = Tensor(rng.normal(size=(2, L, 30)))
    mask = np.ones((2, L), bool)
    mask[1, max(1, L - 2):] = False
    _, alpha = attention_pool(states, Tensor(rng.normal(size=(2, 5, 14)) * 3), Tensor(rng.normal(size=(14, 30))), mask)
    a = alpha.data
    assert np.all(a >= 0) and np.allclose(a.sum(-1), 1.0, atol=1e-9)
    assert np.all(a[1][:, ~mask[1]] == 0)


def test_attention_gradient(rng):
    states = T.parameter(rng.normal(size=(2, 3, 30)))
    pair = T.parameter(rng.normal(size=(2, 4, 14)))
    proj = T.parameter(rng.normal(size=(14, 30)) * 0.2)
    w = rng.normal(size=(2, 4, 30))
    fn = lambda: T.tsum(T.mul(attention_pool(states, pair, proj)[0], w))
    assert T.gradcheck(fn, [states, pair, proj]) < 1e-6


def test_uniform_pool_is_pair_independent(rng):
    states = Tensor(rng.normal(size=(1, 3, 30)))
    mask = np.array([[True, True, False]])
    avg = uniform_pool(states, mask).data
    assert np.allclose(avg, states.data[0, :2].mean(axis=0))
