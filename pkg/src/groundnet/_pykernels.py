"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one for one and are used whenever the compiled
extension is unavailable (or ``GROUNDNET_PURE_PYTHON=1``).
"""
import numpy as np


def _split(theta, in_dim, a1, a2):
    n = theta.shape[0]
    n1 = a1 * in_dim
    n2 = a2 * a1
    w1 = theta[:, :n1].reshape(n, a1, in_dim)
    w2 = theta[:, n1:n1 + n2].reshape(n, a2, a1)
    w3 = theta[:, n1 + n2:n1 + n2 + a2]
    return w1, w2, w3


def relation_forward(theta, x, a1, a2):
    """Per-row tanh MLP with row-specific weights.

    theta: (N, a1*D + a2*a1 + a2) flattened [W1 | W2 | W3], x: (N, D).
    Returns (r, h1, h2) with r of shape (N,).
    """
    w1, w2, w3 = _split(theta, x.shape[1], a1, a2)
    h1 = np.tanh(np.einsum("npq,nq->np", w1, x))
    h2 = np.tanh(np.einsum("npq,nq->np", w2, h1))
    r = np.einsum("nq,nq->n", w3, h2)
    return r, h1, h2


def relation_backward(theta, x, h1, h2, dr):
    n, in_dim = x.shape
    a1 = h1.shape[1]
    a2 = h2.shape[1]
    w1, w2, w3 = _split(theta, in_dim, a1, a2)
    dtheta = np.empty((n, a1 * in_dim + a2 * a1 + a2))
    dw3 = dr[:, None] * h2
    dz2 = dr[:, None] * w3 * (1.0 - h2 * h2)
    dw2 = dz2[:, :, None] * h1[:, None, :]
    dz1 = np.einsum("npq,np->nq", w2, dz2) * (1.0 - h1 * h1)
    dw1 = dz1[:, :, None] * x[:, None, :]
    dx = np.einsum("npq,np->nq", w1, dz1)
    n1 = a1 * in_dim
    n2 = a2 * a1
    dtheta[:, :n1] = dw1.reshape(n, n1)
    dtheta[:, n1:n1 + n2] = dw2.reshape(n, n2)
    dtheta[:, n1 + n2:] = dw3
    return dtheta, dx


def segment_max(x, index):
    """Row-wise max over padded index groups.

    x: (B, P); index: (C, K) int with -1 padding. Ties go to the first
    listed element. Returns (values (B, C), argidx (B, C) into P).
    """
    valid = index >= 0
    safe = np.where(valid, index, 0)
    gathered = np.where(valid[None], x[:, safe], -np.inf)
    pos = np.argmax(gathered, axis=2)
    arg = np.take_along_axis(np.broadcast_to(safe, gathered.shape), pos[..., None], axis=2)[..., 0]
    vals = np.take_along_axis(x, arg, axis=1)
    return vals, arg.astype(np.int64)


def value_iteration(reward, goal_r, goal_c, gamma, goal_reward, tol, max_iter):
    """Synchronous Bellman sweeps on a 4-connected grid with clamped walls."""
    v = np.zeros_like(reward)
    v[goal_r, goal_c] = goal_reward
    for it in range(max_iter):
        up = np.vstack([v[:1], v[:-1]])
        down = np.vstack([v[1:], v[-1:]])
        left = np.hstack([v[:, :1], v[:, :-1]])
        right = np.hstack([v[:, 1:], v[:, -1:]])
        best = np.maximum(np.maximum(up, down), np.maximum(left, right))
        new = reward + gamma * best
        new[goal_r, goal_c] = goal_reward
        delta = np.max(np.abs(new - v))
        v = new
        if delta < tol:
            return v, it + 1
    return v, max_iter
