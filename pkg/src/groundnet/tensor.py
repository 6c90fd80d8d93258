"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op returns a new :class:`Tensor`; when any input requires a gradient the
output remembers its parents and a closure that pushes the output gradient
back to them. Nodes carry a global creation counter, so sorting reachable
nodes by it gives the insertion order of the graph; :meth:`Tensor.backward`
walks that order in reverse, visiting each node once.
"""
from __future__ import annotations

import itertools

import numpy as np

from groundnet import kernels

_seq = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A layer or model was configured inconsistently."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = _op
        self._parents = _parents
        self._backward = None
        self._seq = next(_seq)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # -- graph traversal --------------------------------------------------
    def graph(self):
        """Nodes reachable from this tensor that take part in differentiation,
        in insertion order."""
        seen = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen[id(node)] = node
            stack.extend(node._parents)
        return sorted(seen.values(), key=lambda t: t._seq)

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")
        order = self.graph()
        for node in order:
            if node._backward is not None:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward):
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), _op=op)
    if needs:
        out._backward = backward
    return out


def _acc(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def tanh(a):
    y = np.tanh(a.data)
    return _make(y, (a,), "tanh", lambda g: _acc(a, g * (1.0 - y * y)))


def sigmoid(a):
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), "sigmoid", lambda g: _acc(a, g * y * (1.0 - y)))


def relu(a):
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), "relu", lambda g: _acc(a, g * pos))


def exp(a):
    y = np.exp(a.data)
    return _make(y, (a,), "exp", lambda g: _acc(a, g * y))


def log(a):
    return _make(np.log(a.data), (a,), "log", lambda g: _acc(a, g / a.data))


# -- reductions and shape ------------------------------------------------
def tsum(a, axis=None):
    def bw(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.shape).copy())
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), "sum", bw)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: _acc(a, g.reshape(a.shape)))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), "transpose",
                 lambda g: _acc(a, g.transpose(inv)))


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(a, idx):
    basic = _is_basic(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            # basic indexing never repeats an element
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        _acc(a, full)

    return _make(a.data[idx], (a,), "getitem", bw)


def take(a, index, axis=0):
    """Gather along ``axis`` with an integer array (embedding lookup)."""
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + index.ndim)), list(range(index.ndim)))
        np.add.at(moved, index, gm)
        _acc(a, full)

    return _make(np.take(a.data, index, axis=axis), (a,), "take", bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            _acc(t, part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            _acc(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, "stack", bw)


# -- linear algebra ------------------------------------------------------
def matmul(a, b):
    """Matrix product for 2-D @ 2-D, batched 3-D @ 3-D and 3-D @ 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or a.ndim < b.ndim:
        raise ShapeError(f"matmul does not support shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == b.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _acc(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim == 3:
                _acc(b, a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                _acc(b, np.swapaxes(a.data, -1, -2) @ g)

    if a.ndim == 3 and b.ndim == 2:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[0], a.shape[1], -1)
    else:
        out = a.data @ b.data
    return _make(out, (a, b), "matmul", bw)


# -- normalisation -------------------------------------------------------
def softmax(a, axis=-1, mask=None):
    """Max-shifted softmax; ``mask`` (broadcastable, True = keep) zeroes entries."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _acc(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), "softmax", bw)


def log_softmax(a, axis=-1):
    x = a.data
    z = x - np.max(x, axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        _acc(a, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _make(y, (a,), "log_softmax", bw)


# -- max pooling over groups ---------------------------------------------
def segment_max(a, index):
    """Max of ``a`` (B, P) over each padded group in ``index`` (C, K).

    The gradient is routed to the first maximal element of each group.
    """
    vals, arg = kernels.segment_max(a.data, index)

    def bw(g):
        full = np.zeros_like(a.data)
        rows = np.arange(a.shape[0])[:, None]
        np.add.at(full, (rows, arg), g)
        _acc(a, full)

    out = _make(vals, (a,), "segment_max", bw)
    return out


def masked_max(values):
    """Maximum of a non-empty sequence of scalar tensors (first max wins)."""
    values = list(values)
    if not values:
        raise ValueError("masked_max of an empty sequence")
    flat = stack([reshape(as_tensor(v), ()) for v in values]).reshape(1, len(values))
    index = np.arange(len(values), dtype=np.int64)[None, :]
    return segment_max(flat, index).reshape(())


# -- convolution ---------------------------------------------------------
def _pads(kh, kw, padding):
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"'same' padding needs odd kernel sizes, got {kh}x{kw}")
        return kh // 2, kw // 2
    return int(padding), int(padding)


def im2col(x, kh, kw, stride=1, padding="same"):
    """Patches of ``x`` (B, H, W, C) as (B, Ho, Wo, kh*kw*C), zero-padded."""
    ph, pw = _pads(kh, kw, padding)
    b, h, w, c = x.shape
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b, ho, wo, kh * kw * c)

    def bw(g):
        g = g.reshape(b, ho, wo, kh, kw, c)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += g[:, :, :, i, j, :]
        _acc(x, dxp[:, ph:ph + h, pw:pw + w, :])

    return _make(cols, (x,), "im2col", bw)


def conv2d(x, kernel, bias=None, stride=1, padding="same"):
    """Cross-correlation of ``x`` (B, H, W, C) with ``kernel`` (kh, kw, C, F)."""
    kh, kw, c, f = kernel.shape
    if x.shape[-1] != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    cols = im2col(x, kh, kw, stride, padding)
    b, ho, wo, _ = cols.shape
    out = matmul(cols.reshape(b, ho * wo, kh * kw * c), kernel.reshape(kh * kw * c, f))
    out = out.reshape(b, ho, wo, f)
    if bias is not None:
        out = out + bias
    return out


def conv2d_same(x, kernel):
    """Unbatched 'same' convolution: (H, W, C) * (kh, kw, C, F) -> (H, W, F)."""
    h, w, _ = x.shape
    return conv2d(x.reshape(1, *x.shape), kernel).reshape(h, w, kernel.shape[-1])


def dilate(x, stride):
    """Insert ``stride - 1`` zeros between spatial entries of (B, H, W, C)."""
    b, h, w, c = x.shape
    out = np.zeros((b, (h - 1) * stride + 1, (w - 1) * stride + 1, c))
    out[:, ::stride, ::stride] = x.data
    return _make(out, (x,), "dilate", lambda g: _acc(x, g[:, ::stride, ::stride]))


def conv_transpose2d(x, kernel, bias=None, stride=2, padding=1):
    """Transposed convolution realised as a convolution over the dilated input."""
    kh, kw = kernel.shape[:2]
    return conv2d(dilate(x, stride), kernel, bias, stride=1, padding=kh - 1 - padding)


# -- fused dynamic-weight MLP -----------------------------------------------
def relation_mlp(theta, x, a1, a2):
    """r_n = W3_n tanh(W2_n tanh(W1_n x_n)) with per-row weights unpacked from
    ``theta`` (N, a1*D + a2*a1 + a2) in row-major [W1 | W2 | W3] order."""
    n, d = x.shape
    need = a1 * d + a2 * a1 + a2
    if theta.shape != (n, need):
        raise ConfigError(f"relation_mlp expects theta of shape {(n, need)}, got {theta.shape}")
    r, h1, h2 = kernels.relation_forward(theta.data, x.data, a1, a2)

    def bw(g):
        dtheta, dx = kernels.relation_backward(theta.data, x.data, h1, h2, g)
        _acc(theta, dtheta)
        _acc(x, dx)

    return _make(r, (theta, x), "relation_mlp", bw)


# -- losses --------------------------------------------------------------
def mse_loss(pred, target):
    diff = sub(pred, target)
    return mean(mul(diff, diff))


def cross_entropy(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    ls = log_softmax(logits, axis=-1)
    picked = getitem(ls, (np.arange(len(labels)), labels))
    return mul(mean(picked), -1.0)


# -- finite differences --------------------------------------------------
def numerical_grad(fn, tensor, eps=1e-5, coords=None):
    """Central differences of scalar ``fn()`` w.r.t. entries of ``tensor``."""
    flat = tensor.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + eps
        hi = fn().item()
        flat[i] = old - eps
        lo = fn().item()
        flat[i] = old
        out.append((hi - lo) / (2 * eps))
    return np.array(out)


def gradcheck(fn, tensors, eps=1e-5, max_coords=None, rng=None):
    """Largest relative error between autodiff and central differences.

    The error for each tensor is ``max|analytic - numeric| / max|numeric|`` over
    the checked coordinates; a random subset of ``max_coords`` coordinates is
    used for tensors larger than that.
    """
    for t in tensors:
        t.zero_grad()
    loss = fn()
    loss.backward()
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        n = t.data.size
        if max_coords is not None and n > max_coords:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        else:
            coords = np.arange(n)
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)[coords]
        numeric = numerical_grad(fn, t, eps, coords)
        scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-12)
        worst = max(worst, float(np.max(np.abs(analytic - numeric)) / scale))
    return worst
