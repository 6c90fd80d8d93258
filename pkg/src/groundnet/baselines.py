"""Comparison models: text-as-kernel CNN, UVFA-style concatenation and a
VGG-style captioned-image classifier."""
from __future__ import annotations

import numpy as np

from groundnet import tensor as T
from groundnet.nn import Module, fan_in_uniform
from groundnet.rnet import ClassifierHead, GridEncoder, PixelEncoder, ValueHead, gradient_composite_t
from groundnet.tensor import ConfigError, ShapeError
from groundnet.text import TextEncoder, uniform_pool


def tcnn_param_size(k, kernel_size=3):
    """Decoded text vector length: one kernel_size^2 x k filter plus 3 coefficients."""
    return kernel_size * kernel_size * k + 3


class TCNN(Module):
    """The instruction is decoded into a convolution filter applied to the
    cell embeddings; the filter response replaces the relation map."""

    kind = "tcnn"

    def __init__(self, vocab_size, shape=(10, 10), k=7, kernel_size=3, task="regression",
                 observation="grid", seed=0, value_bias=0.1):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError("kernel size must be odd for same padding")
        if task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {task!r}")
        rng = np.random.default_rng(seed)
        self.shape, self.k, self.kernel_size = tuple(shape), k, kernel_size
        self.task, self.observation = task, observation
        self.size = tcnn_param_size(k, kernel_size)
        self.text = self.add_module("text", TextEncoder(vocab_size, rng=rng))
        hid = self.text.hidden
        self.D = self.add_param("decoder.D", fan_in_uniform(rng, (hid, self.size), hid))
        bias = np.concatenate([fan_in_uniform(rng, self.size - 3, self.size - 3), np.zeros(3)])
        self.bias = self.add_param("decoder.bias", bias)
        if observation == "grid":
            self.encoder = self.add_module("encoder", GridEncoder(k, rng=rng))
        else:
            self.encoder = self.add_module("encoder", PixelEncoder(k, rng=rng))
        if task == "regression":
            self.head = self.add_module("value_head", ValueHead(rng, value_bias))
        else:
            self.head = self.add_module("cls_head", ClassifierHead(self.shape, rng))

    def config(self):
        return {"shape": list(self.shape), "k": self.k, "kernel_size": self.kernel_size,
                "task": self.task, "observation": self.observation}

    def text_vector(self, id_lists):
        states, mask = self.text.encode(id_lists)
        return T.add(T.matmul(self.text.final_state(states, mask), self.D), self.bias)

    def features(self, obs):
        if self.observation == "grid":
            ent = self.encoder.check(obs)
            if ent.ndim != 3:
                raise ShapeError(f"expected (B, m, n) entity grids, got {ent.shape}")
            b, m, n = ent.shape
            return self.encoder(ent).reshape(b, m, n, self.k)
        return self.encoder(obs)

    def forward(self, obs, id_lists, aux=False):
        h = self.text_vector(id_lists)
        phi = self.features(obs)
        b, m, n, k = phi.shape
        if k != self.k:
            raise ConfigError(f"embedding size {k} does not match the kernel split for k={self.k}")
        K = self.size - 3
        kern = T.getitem(h, (slice(None), slice(0, K))).reshape(b, K, 1)
        cols = T.im2col(phi, self.kernel_size, self.kernel_size).reshape(b, m * n, K)
        z1 = T.matmul(cols, kern).reshape(b, m, n)
        if self.task == "classification":
            out, z2 = self.head(z1), None
        else:
            beta = T.getitem(h, (slice(None), slice(K, K + 3)))
            z2 = gradient_composite_t(beta, m, n)
            out = self.head(z1, z2)
        if aux:
            return out, {"Z1": z1, "Z2": z2}
        return out

    __call__ = forward


class TUVFA(Module):
    """Text vector concatenated with the flattened observation, one dense
    layer to a half-resolution feature map, then a transposed convolution."""

    kind = "tuvfa"

    def __init__(self, vocab_size, shape=(10, 10), k=7, text_dim=7, channels=8, seed=0):
        super().__init__()
        m, n = shape
        if m % 2 or n % 2:
            raise ConfigError("map sides must be even for the stride-2 decoder")
        rng = np.random.default_rng(seed)
        self.shape, self.k, self.text_dim, self.channels = tuple(shape), k, text_dim, channels
        self.task, self.observation = "regression", "grid"
        self.text = self.add_module("text", TextEncoder(vocab_size, rng=rng))
        hid = self.text.hidden
        self.Wt = self.add_param("text_proj.W", fan_in_uniform(rng, (hid, text_dim), hid))
        self.bt = self.add_param("text_proj.b", np.zeros(text_dim))
        self.encoder = self.add_module("encoder", GridEncoder(k, rng=rng))
        fan = text_dim + m * n * k
        self.mid = (m // 2, n // 2)
        out = self.mid[0] * self.mid[1] * channels
        self.W = self.add_param("dense.W", fan_in_uniform(rng, (fan, out), fan))
        self.b = self.add_param("dense.b", np.full(out, 0.01))
        self.kernel = self.add_param("deconv.kernel", fan_in_uniform(rng, (4, 4, channels, 1), 4 * channels))
        self.dbias = self.add_param("deconv.bias", np.zeros(1))

    def config(self):
        return {"shape": list(self.shape), "k": self.k, "text_dim": self.text_dim, "channels": self.channels}

    def forward(self, obs, id_lists, aux=False):
        ent = self.encoder.check(obs)
        if ent.ndim != 3 or tuple(ent.shape[1:]) != self.shape:
            raise ShapeError(f"expected (B, {self.shape[0]}, {self.shape[1]}) entity grids, got {ent.shape}")
        b, m, n = ent.shape
        states, mask = self.text.encode(id_lists)
        t = T.tanh(T.add(T.matmul(self.text.final_state(states, mask), self.Wt), self.bt))
        phi = self.encoder(ent).reshape(b, m * n * self.k)
        z = T.relu(T.add(T.matmul(T.concat([t, phi], axis=-1), self.W), self.b))
        z = z.reshape(b, self.mid[0], self.mid[1], self.channels)
        out = T.conv_transpose2d(z, self.kernel, self.dbias, stride=2, padding=1).reshape(b, m, n)
        if aux:
            return out, {}
        return out

    __call__ = forward


class TVGG(Module):
    """Strided conv encoder, text vector appended, two 512-unit tanh layers."""

    kind = "tvgg"

    def __init__(self, vocab_size, image_size=64, channels=(8, 16, 16, 16), dense=(512, 512), seed=0):
        super().__init__()
        if image_size % 16:
            raise ConfigError("image size must be divisible by 16")
        rng = np.random.default_rng(seed)
        self.image_size, self.channels, self.dense = image_size, tuple(channels), tuple(dense)
        self.task, self.observation = "classification", "pixel"
        self.text = self.add_module("text", TextEncoder(vocab_size, rng=rng))
        self.kernels, self.cbias = [], []
        cin = 3
        for i, cout in enumerate(self.channels):
            self.kernels.append(self.add_param(f"conv{i}.kernel", fan_in_uniform(rng, (3, 3, cin, cout), 9 * cin)))
            self.cbias.append(self.add_param(f"conv{i}.bias", np.full(cout, 0.01)))
            cin = cout
        side = image_size // 2 ** len(self.channels)
        fan = side * side * cin + self.text.hidden
        self.layers = []
        for i, width in enumerate(self.dense):
            W = self.add_param(f"dense{i}.W", fan_in_uniform(rng, (fan, width), fan))
            bias = self.add_param(f"dense{i}.b", np.zeros(width))
            self.layers.append((W, bias))
            fan = width
        self.Wo = self.add_param("out.W", fan_in_uniform(rng, (fan, 2), fan))
        self.bo = self.add_param("out.b", np.zeros(2))

    def config(self):
        return {"image_size": self.image_size, "channels": list(self.channels), "dense": list(self.dense)}

    def forward(self, obs, id_lists, aux=False):
        x = T.as_tensor(obs)
        s = self.image_size
        if x.ndim != 4 or tuple(x.shape[1:]) != (s, s, 3):
            raise ShapeError(f"expected (B, {s}, {s}, 3) images, got {x.shape}")
        for kern, bias in zip(self.kernels, self.cbias):
            x = T.relu(T.conv2d(x, kern, bias, stride=2, padding=1))
        b = x.shape[0]
        states, mask = self.text.encode(id_lists)
        z = T.concat([x.reshape(b, -1), uniform_pool(states, mask)], axis=-1)
        for W, bias in self.layers:
            z = T.tanh(T.add(T.matmul(z, W), bias))
        out = T.add(T.matmul(z, self.Wo), self.bo)
        if aux:
            return out, {}
        return out

    __call__ = forward
