"""Vocabulary, LSTM instruction encoder, word attention and the decoder that
turns a text context into relation-network weights."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from groundnet import tensor as T
from groundnet.nn import Module, fan_in_uniform
from groundnet.tensor import ConfigError, Tensor

log = logging.getLogger(__name__)

PAD, OOV = 0, 1
PAD_TOKEN, OOV_TOKEN = "<pad>", "<oov>"
MAX_LEN = 40
_PUNCT = ".,;:!?\"'"


def tokenize(text):
    """Lowercased whitespace tokens with trailing punctuation removed."""
    if text is None or not str(text).strip():
        raise ValueError("cannot tokenize empty text")
    out = []
    for raw in str(text).lower().split():
        tok = raw.rstrip(_PUNCT)
        if tok:
            out.append(tok)
    if not out:
        raise ValueError(f"no tokens in {text!r}")
    return out


def detokenize(tokens):
    return " ".join(tokens)


class Vocabulary:
    def __init__(self, words=()):
        self.itos = [PAD_TOKEN, OOV_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, OOV_TOKEN: OOV}
        for w in words:
            self.add(w)

    def add(self, word):
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    @classmethod
    def build(cls, texts, extra=()):
        words = set(extra)
        for t in texts:
            words.update(tokenize(t))
        return cls(sorted(words))

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def encode(self, text):
        toks = tokenize(text) if isinstance(text, str) else list(text)
        return [self.stoi.get(t, OOV) for t in toks]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.itos[2:]:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])

    def to_list(self):
        return self.itos[2:]


def param_size(k, a1, a2):
    """Length of the decoded vector: W1 (a1 x 2k+1), W2 (a2 x a1), W3 (1 x a2), beta (3)."""
    for v in (k, a1, a2):
        if int(v) != v or v < 1:
            raise ValueError("sizes must be positive integers")
    return (2 * k + 1) * a1 + a1 * a2 + a2 + 3


@dataclass
class RNetParams:
    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    beta: np.ndarray

    def flatten(self):
        return np.concatenate([self.W1.ravel(), self.W2.ravel(), self.W3.ravel(), self.beta.ravel()])


def split_params(h, k, a1=10, a2=10):
    """Row-major split of an H-vector into :class:`RNetParams`."""
    h = np.asarray(h, dtype=np.float64)
    need = param_size(k, a1, a2)
    if h.shape[-1] != need:
        raise ConfigError(f"decoded vector has length {h.shape[-1]}, expected {need}")
    n1, n2 = (2 * k + 1) * a1, a1 * a2
    return RNetParams(h[:n1].reshape(a1, 2 * k + 1), h[n1:n1 + n2].reshape(a2, a1),
                      h[n1 + n2:n1 + n2 + a2].reshape(1, a2), h[n1 + n2 + a2:].copy())


def attention_pool(states, pair_embed, proj, mask=None):
    """Word attention scored against cell-pair embeddings.

    states (B, L, E), pair_embed (B, N, 2k), proj (2k, E), mask (B, L) bool.
    score[b, n, w] = (proj @ states[b, w]) . pair_embed[b, n]
    Returns context (B, N, E) and weights (B, N, L).
    """
    keys = T.matmul(states, T.transpose(proj, (1, 0)))            # (B, L, 2k)
    scores = T.matmul(pair_embed, T.transpose(keys, (0, 2, 1)))   # (B, N, L)
    m = None if mask is None else np.asarray(mask, dtype=bool)[:, None, :]
    alpha = T.softmax(scores, axis=-1, mask=m)
    return T.matmul(alpha, states), alpha


def uniform_pool(states, mask):
    """Plain average of the valid word states: (B, L, E) -> (B, E)."""
    w = np.asarray(mask, dtype=np.float64)
    w = w / w.sum(axis=1, keepdims=True)
    return T.tsum(T.mul(states, w[:, :, None]), axis=1)


def pad_batch(id_lists):
    """Right-padded (B, L) id array and boolean validity mask."""
    if not id_lists or any(len(x) == 0 for x in id_lists):
        raise ValueError("every sequence needs at least one token")
    L = max(len(x) for x in id_lists)
    ids = np.full((len(id_lists), L), PAD, dtype=np.int64)
    mask = np.zeros((len(id_lists), L), dtype=bool)
    for i, x in enumerate(id_lists):
        ids[i, :len(x)] = x
        mask[i, :len(x)] = True
    return ids, mask


class TextEncoder(Module):
    """Word embeddings followed by a single-layer LSTM."""

    def __init__(self, vocab_size, embed=15, hidden=30, max_len=MAX_LEN, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.embed_dim, self.hidden, self.max_len = embed, hidden, max_len
        self.emb = self.add_param("embedding", fan_in_uniform(rng, (vocab_size, embed), embed))
        s = hidden
        self.Wx = self.add_param("Wx", fan_in_uniform(rng, (embed, 4 * s), s))
        self.Wh = self.add_param("Wh", fan_in_uniform(rng, (s, 4 * s), s))
        self.b = self.add_param("b", fan_in_uniform(rng, (4 * s,), s))

    def prepare(self, id_lists):
        clipped = []
        for ids in id_lists:
            if len(ids) > self.max_len:
                log.warning("instruction of %d tokens truncated to %d", len(ids), self.max_len)
                ids = ids[:self.max_len]
            clipped.append(list(ids))
        return pad_batch(clipped)

    def encode(self, id_lists):
        """Hidden state per word: returns states (B, L, hidden) and mask (B, L).

        Padded steps carry the previous state forward unchanged.
        """
        ids, mask = self.prepare(id_lists)
        B, L = ids.shape
        s = self.hidden
        x = T.take(self.emb, ids, axis=0)                   # (B, L, E)
        xw = T.add(T.matmul(x, self.Wx), self.b)           # (B, L, 4s)
        h = Tensor(np.zeros((B, s)))
        c = Tensor(np.zeros((B, s)))
        outs = []
        for t in range(L):
            z = T.add(T.getitem(xw, (slice(None), t)), T.matmul(h, self.Wh))
            i = T.sigmoid(T.getitem(z, (slice(None), slice(0, s))))
            f = T.sigmoid(T.getitem(z, (slice(None), slice(s, 2 * s))))
            g = T.tanh(T.getitem(z, (slice(None), slice(2 * s, 3 * s))))
            o = T.sigmoid(T.getitem(z, (slice(None), slice(3 * s, 4 * s))))
            c_new = T.add(T.mul(f, c), T.mul(i, g))
            h_new = T.mul(o, T.tanh(c_new))
            m = mask[:, t:t + 1].astype(np.float64)
            if m.all():
                c, h = c_new, h_new
            else:
                c = T.add(T.mul(c_new, m), T.mul(c, 1.0 - m))
                h = T.add(T.mul(h_new, m), T.mul(h, 1.0 - m))
            outs.append(h)
        return T.stack(outs, axis=1), mask

    def final_state(self, states, mask):
        """Last valid hidden state per sequence (equal to the last step since
        padding carries state forward)."""
        return T.getitem(states, (slice(None), states.shape[1] - 1))


class ParamDecoder(Module):
    """Linear map from a text context to the flat relation-network vector."""

    def __init__(self, k, a1=10, a2=10, hidden=30, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.k, self.a1, self.a2 = k, a1, a2
        self.size = param_size(k, a1, a2)
        self.D = self.add_param("D", fan_in_uniform(rng, (hidden, self.size), hidden))
        # the bias acts as a shared base network so the relation MLP starts in a
        # regime with non-vanishing gradients
        n1, n2 = (2 * k + 1) * a1, a1 * a2
        bias = np.concatenate([
            fan_in_uniform(rng, n1, 2 * k + 1),
            fan_in_uniform(rng, n2, a1),
            fan_in_uniform(rng, a2, a2),
            np.zeros(3),
        ])
        self.bias = self.add_param("bias", bias)

    @property
    def mlp_size(self):
        return self.size - 3

    def __call__(self, context):
        """(..., hidden) -> (..., H)."""
        return T.add(T.matmul(context, self.D), self.bias)

    def decode(self, context):
        """Numeric helper: one context vector -> :class:`RNetParams`."""
        h = np.asarray(context, dtype=np.float64) @ self.D.data + self.bias.data
        return split_params(h, self.k, self.a1, self.a2)


def decode_params(h, k=7, a1=10, a2=10):
    return split_params(h, k, a1, a2)
