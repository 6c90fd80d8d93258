"""Text-conditioned relation network over grid cells.

The observation is encoded cell by cell. For every ordered pair of
8-neighbouring cells a small tanh MLP with weights decoded from the
instruction scores the pair; the relation map ``Z1`` keeps the best score per
cell. A second map ``Z2`` mixes fixed horizontal/vertical ramps with
text-predicted coefficients. A 3x3 convolution over ``[Z1; Z2]`` gives the
value map, and a linear layer over ``Z1`` gives caption logits.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from groundnet import tensor as T
from groundnet.nn import Module, fan_in_uniform
from groundnet.puddleworld import FIRST_UNSEEN_ENTITY, NUM_ENTITIES
from groundnet.tensor import ConfigError, ShapeError, Tensor
from groundnet.text import ParamDecoder, TextEncoder, attention_pool, param_size, uniform_pool

OFFSETS = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0))


def l_encoding(offset):
    """Scalar code of a neighbour offset: row-major index over the 8 offsets / 7."""
    offset = tuple(int(v) for v in offset)
    if offset not in OFFSETS:
        raise ValueError(f"{offset} is not one of the 8 neighbour offsets")
    return OFFSETS.index(offset) / 7.0


@lru_cache(maxsize=32)
def neighbour_pairs(m, n):
    """Ordered neighbour pairs of an m x n grid.

    Returns ``(src, dst, off, index)``: flat source cell, flat neighbour cell and
    offset index per pair, plus an (m*n, 8) table listing each cell's pair
    indices padded with -1.
    """
    if m < 1 or n < 1:
        raise ValueError("grid must be non-empty")
    src, dst, off = [], [], []
    index = np.full((m * n, 8), -1, dtype=np.int64)
    for r in range(m):
        for c in range(n):
            slot = 0
            for o, (dr, dc) in enumerate(OFFSETS):
                rr, cc = r + dr, c + dc
                if 0 <= rr < m and 0 <= cc < n:
                    index[r * n + c, slot] = len(src)
                    src.append(r * n + c)
                    dst.append(rr * n + cc)
                    off.append(o)
                    slot += 1
    if (index[:, 0] < 0).any():
        raise ValueError("every cell needs at least one neighbour (grid must be at least 1x2)")
    out = (np.array(src), np.array(dst), np.array(off), index)
    for a in out:
        a.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def gradient_maps(m, n):
    """(G1, G2, J): horizontal ramp j/(n-1), vertical ramp i/(m-1), all ones."""
    if m < 2 or n < 2:
        raise ValueError("gradient maps need m, n >= 2")
    g1 = np.tile(np.arange(n) / (n - 1), (m, 1))
    g2 = np.tile((np.arange(m) / (m - 1))[:, None], (1, n))
    maps = np.stack([g1, g2, np.ones((m, n))])
    maps.setflags(write=False)
    return maps


def gradient_composite(beta, m, n):
    """Z2 = b1*G1 + b2*G2 + b3*J for numeric ``beta`` of shape (3,) or (B, 3)."""
    beta = np.asarray(beta, dtype=np.float64)
    return np.tensordot(beta, gradient_maps(m, n), axes=([-1], [0]))


def gradient_composite_t(beta, m, n):
    """Differentiable version: (B, 3) tensor -> (B, m, n)."""
    maps = gradient_maps(m, n).reshape(3, m * n)
    return T.matmul(beta, maps).reshape(beta.shape[0], m, n)


def relation_score(phi_i, phi_j, l, params):
    """r = W3 tanh(W2 tanh(W1 [phi_i; phi_j; l])) for one pair."""
    x = np.concatenate([np.ravel(phi_i), np.ravel(phi_j), [float(l)]])
    if params.W1.shape[1] != x.size:
        raise ConfigError(f"W1 expects inputs of size {params.W1.shape[1]}, got {x.size}")
    return float((params.W3 @ np.tanh(params.W2 @ np.tanh(params.W1 @ x)))[0])


class GridEncoder(Module):
    """Embedding table; the reserved unseen-object rows are a frozen buffer."""

    def __init__(self, k=7, num_entities=NUM_ENTITIES, first_frozen=FIRST_UNSEEN_ENTITY, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.k, self.num_entities, self.first_frozen = k, num_entities, first_frozen
        self.table = self.add_param("table", fan_in_uniform(rng, (first_frozen, k), 1.0))
        self.frozen = self.add_buffer("frozen", fan_in_uniform(rng, (num_entities - first_frozen, k), 1.0))

    def full_table(self):
        if self.frozen.size == 0:
            return self.table
        return T.concat([self.table, self.frozen], axis=0)

    def check(self, ent):
        ent = np.asarray(ent)
        if ent.dtype.kind not in "iu":
            raise ValueError("entity grid must be integer")
        if ent.size and (ent.min() < 0 or ent.max() >= self.num_entities):
            raise ValueError(f"entity id outside [0, {self.num_entities})")
        return ent.astype(np.int64)

    def __call__(self, ent):
        """(B, m, n) ids -> (B, m*n, k)."""
        ent = self.check(ent)
        b, m, n = ent.shape
        return T.take(self.full_table(), ent.reshape(b, m * n), axis=0)


class PixelEncoder(Module):
    """Three stride-2 3x3 convolutions: (B, 64, 64, 3) -> (B, 8, 8, k)."""

    def __init__(self, k=7, channels=(16, 16), in_channels=3, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        sizes = (in_channels,) + tuple(channels) + (k,)
        self.kernels, self.biases = [], []
        for i in range(3):
            cin, cout = sizes[i], sizes[i + 1]
            self.kernels.append(self.add_param(f"conv{i}.kernel", fan_in_uniform(rng, (3, 3, cin, cout), 9 * cin)))
            self.biases.append(self.add_param(f"conv{i}.bias", np.full(cout, 0.01)))

    def __call__(self, images):
        x = T.as_tensor(images)
        if x.ndim != 4 or x.shape[-1] != self.kernels[0].shape[2]:
            raise ShapeError(f"expected (B, H, W, {self.kernels[0].shape[2]}) images, got {x.shape}")
        for i, (kern, bias) in enumerate(zip(self.kernels, self.biases)):
            x = T.conv2d(x, kern, bias, stride=2, padding=1)
            x = T.tanh(x) if i == 2 else T.relu(x)
        return x


class ValueHead(Module):
    def __init__(self, rng=None, bias=0.1):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.kernel = self.add_param("kernel", fan_in_uniform(rng, (3, 3, 2, 1), 18))
        self.bias = self.add_param("bias", np.full(1, bias))

    def __call__(self, z1, z2):
        if z1.shape != z2.shape:
            raise ShapeError(f"Z1 {z1.shape} and Z2 {z2.shape} differ")
        x = T.stack([z1, z2], axis=-1)
        b, m, n, _ = x.shape
        return T.relu(T.conv2d(x, self.kernel, self.bias)).reshape(b, m, n)


class ClassifierHead(Module):
    def __init__(self, shape, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.shape = tuple(shape)
        size = int(np.prod(self.shape))
        self.W = self.add_param("W", fan_in_uniform(rng, (size, 2), size))
        self.b = self.add_param("b", np.zeros(2))

    def __call__(self, z1):
        if tuple(z1.shape[1:]) != self.shape:
            raise ShapeError(f"classifier expects maps of shape {self.shape}, got {z1.shape[1:]}")
        return T.add(T.matmul(z1.reshape(z1.shape[0], -1), self.W), self.b)


def _unique_rows(keys):
    uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return uniq, inverse.reshape(-1)


class TRNet(Module):
    """Relation-network model with optional word attention per cell pair.

    ``attention=False`` gives the ablation where every pair shares the
    average-pooled text context.
    """

    def __init__(self, vocab_size, shape=(10, 10), k=7, a1=10, a2=10, attention=True,
                 task="regression", observation="grid", seed=0, value_bias=0.1):
        super().__init__()
        if task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {task!r}")
        if observation not in ("grid", "pixel"):
            raise ConfigError(f"unknown observation kind {observation!r}")
        rng = np.random.default_rng(seed)
        self.shape, self.k, self.a1, self.a2 = tuple(shape), k, a1, a2
        self.attention, self.task, self.observation = attention, task, observation
        self.text = self.add_module("text", TextEncoder(vocab_size, rng=rng))
        self.decoder = self.add_module("decoder", ParamDecoder(k, a1, a2, self.text.hidden, rng=rng))
        if attention:
            self.proj = self.add_param("attn_proj", fan_in_uniform(rng, (2 * k, self.text.hidden), self.text.hidden))
        if observation == "grid":
            self.encoder = self.add_module("encoder", GridEncoder(k, rng=rng))
        else:
            self.encoder = self.add_module("encoder", PixelEncoder(k, rng=rng))
        if task == "regression":
            self.head = self.add_module("value_head", ValueHead(rng, value_bias))
        else:
            self.head = self.add_module("cls_head", ClassifierHead(self.shape, rng))
        self.H = param_size(k, a1, a2)

    @property
    def kind(self):
        return "trnetattn" if self.attention else "trnet"

    def config(self):
        return {"shape": list(self.shape), "k": self.k, "a1": self.a1, "a2": self.a2,
                "attention": self.attention, "task": self.task, "observation": self.observation}

    # -- pieces ------------------------------------------------------------
    def _relation_grid(self, ent, states, mask, want_alpha):
        """Relation scores for entity grids, evaluated once per distinct
        (instance, entity pair, offset) and scattered back to every pair."""
        B, m, n = ent.shape
        src, dst, off, _ = neighbour_pairs(m, n)
        P = len(src)
        flat = ent.reshape(B, m * n)
        bb = np.repeat(np.arange(B), P)
        ei, ej = flat[:, src].reshape(-1), flat[:, dst].reshape(-1)
        oo = np.tile(off, B)
        table = self.encoder.full_table()

        # distinct (instance, e_i, e_j) -> decoded weights
        dkeys, dinv = _unique_rows(np.stack([bb, ei, ej], axis=1))
        emb_i = T.take(table, dkeys[:, 1], axis=0)
        emb_j = T.take(table, dkeys[:, 2], axis=0)
        alpha = None
        if self.attention:
            pair = T.concat([emb_i, emb_j], axis=-1)                     # (D, 2k)
            st = T.take(states, dkeys[:, 0], axis=0)                      # (D, L, E)
            ctx, alpha = attention_pool(st, pair.reshape(pair.shape[0], 1, -1), self.proj,
                                        mask[dkeys[:, 0]])
            ctx = ctx.reshape(ctx.shape[0], -1)
        else:
            ctx = T.take(uniform_pool(states, mask), dkeys[:, 0], axis=0)
        theta = T.getitem(self.decoder(ctx), (slice(None), slice(0, self.decoder.mlp_size)))

        # distinct (decode key, offset) -> relation score
        rkeys, rinv = _unique_rows(np.stack([dinv, oo], axis=1))
        th = T.take(theta, rkeys[:, 0], axis=0)
        x = T.concat([T.take(emb_i, rkeys[:, 0], axis=0), T.take(emb_j, rkeys[:, 0], axis=0),
                      Tensor((rkeys[:, 1] / 7.0)[:, None])], axis=-1)
        r_u = T.relation_mlp(th, x, self.a1, self.a2)
        r = T.take(r_u, rinv, axis=0).reshape(B, P)
        aux = {}
        if want_alpha and alpha is not None:
            aux["alpha"] = alpha.data.reshape(alpha.shape[0], -1)[dinv].reshape(B, P, -1)
        return r, aux

    def _relation_dense(self, phi, states, mask, want_alpha):
        """Relation scores when cells carry continuous features (pixels)."""
        B, m, n, k = phi.shape
        src, dst, off, _ = neighbour_pairs(m, n)
        P = len(src)
        flat = phi.reshape(B, m * n, k)
        pi = T.take(flat, src, axis=1)
        pj = T.take(flat, dst, axis=1)
        alpha = None
        if self.attention:
            ctx, alpha = attention_pool(states, T.concat([pi, pj], axis=-1), self.proj, mask)
            theta = self.decoder(ctx)                                   # (B, P, H)
        else:
            theta = self.decoder(uniform_pool(states, mask))[:, None, :]
            theta = T.mul(theta, np.ones((1, P, 1)))
        theta = T.getitem(theta, (slice(None), slice(None), slice(0, self.decoder.mlp_size)))
        l = Tensor(np.broadcast_to((off / 7.0)[None, :, None], (B, P, 1)).copy())
        x = T.concat([pi, pj, l], axis=-1)
        r = T.relation_mlp(theta.reshape(B * P, -1), x.reshape(B * P, -1), self.a1, self.a2)
        aux = {"alpha": alpha.data} if (want_alpha and alpha is not None) else {}
        return r.reshape(B, P), aux

    def beta(self, states, mask):
        return T.getitem(self.decoder(uniform_pool(states, mask)), (slice(None), slice(self.H - 3, self.H)))

    # -- forward -----------------------------------------------------------
    def forward(self, obs, id_lists, aux=False):
        states, mask = self.text.encode(id_lists)
        if self.observation == "grid":
            ent = self.encoder.check(obs)
            if ent.ndim != 3 or tuple(ent.shape[1:]) != self.shape:
                raise ShapeError(f"expected (B, {self.shape[0]}, {self.shape[1]}) entity grids, got {ent.shape}")
            m, n = self.shape
            r, extra = self._relation_grid(ent, states, mask, aux)
        else:
            phi = self.encoder(obs)
            m, n = phi.shape[1:3]
            r, extra = self._relation_dense(phi, states, mask, aux)
        if len(id_lists) != r.shape[0]:
            raise ShapeError("batch sizes of observations and instructions differ")
        _, _, _, index = neighbour_pairs(m, n)
        B = r.shape[0]
        z1 = T.segment_max(r, index).reshape(B, m, n)
        if self.task == "classification":
            out = self.head(z1)
            z2 = None
        else:
            z2 = gradient_composite_t(self.beta(states, mask), m, n)
            out = self.head(z1, z2)
        if not aux:
            return out
        extra.update({"Z1": z1, "Z2": z2, "r": r})
        return out, extra

    __call__ = forward
