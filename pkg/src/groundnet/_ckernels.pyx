# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, fabs

cnp.import_array()

DEF MAXH = 256


def relation_forward(const double[:, ::1] theta, const double[:, ::1] x, int a1, int a2):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t n1 = a1 * d
    cdef Py_ssize_t n2 = a2 * a1
    if a1 > MAXH or a2 > MAXH:
        raise ValueError("hidden sizes above %d are not supported" % MAXH)
    if theta.shape[1] < n1 + n2 + a2:
        raise ValueError("theta too short for the requested layout")
    r_arr = np.empty(n, dtype=np.float64)
    h1_arr = np.empty((n, a1), dtype=np.float64)
    h2_arr = np.empty((n, a2), dtype=np.float64)
    cdef double[::1] r = r_arr
    cdef double[:, ::1] h1 = h1_arr
    cdef double[:, ::1] h2 = h2_arr
    cdef Py_ssize_t i, p, q
    cdef double acc
    cdef const double* th
    cdef const double* xi
    cdef const double* w
    cdef double* g1
    cdef double* g2
    with nogil:
        for i in range(n):
            th = &theta[i, 0]
            xi = &x[i, 0]
            g1 = &h1[i, 0]
            g2 = &h2[i, 0]
            for p in range(a1):
                w = th + p * d
                acc = 0.0
                for q in range(d):
                    acc = acc + w[q] * xi[q]
                g1[p] = tanh(acc)
            for p in range(a2):
                w = th + n1 + p * a1
                acc = 0.0
                for q in range(a1):
                    acc = acc + w[q] * g1[q]
                g2[p] = tanh(acc)
            w = th + n1 + n2
            acc = 0.0
            for q in range(a2):
                acc = acc + w[q] * g2[q]
            r[i] = acc
    return r_arr, h1_arr, h2_arr


def relation_backward(const double[:, ::1] theta, const double[:, ::1] x,
                      const double[:, ::1] h1, const double[:, ::1] h2,
                      const double[::1] dr):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t a1 = h1.shape[1]
    cdef Py_ssize_t a2 = h2.shape[1]
    cdef Py_ssize_t n1 = a1 * d
    cdef Py_ssize_t n2 = a2 * a1
    dtheta_arr = np.empty((n, n1 + n2 + a2), dtype=np.float64)
    dx_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] dtheta = dtheta_arr
    cdef double[:, ::1] dx = dx_arr
    cdef double dz2[MAXH]
    cdef double dz1[MAXH]
    cdef Py_ssize_t i, p, q
    cdef double g, acc
    with nogil:
        for i in range(n):
            g = dr[i]
            for q in range(a2):
                dtheta[i, n1 + n2 + q] = g * h2[i, q]
                dz2[q] = g * theta[i, n1 + n2 + q] * (1.0 - h2[i, q] * h2[i, q])
            for p in range(a2):
                for q in range(a1):
                    dtheta[i, n1 + p * a1 + q] = dz2[p] * h1[i, q]
            for q in range(a1):
                acc = 0.0
                for p in range(a2):
                    acc = acc + theta[i, n1 + p * a1 + q] * dz2[p]
                dz1[q] = acc * (1.0 - h1[i, q] * h1[i, q])
            for p in range(a1):
                for q in range(d):
                    dtheta[i, p * d + q] = dz1[p] * x[i, q]
            for q in range(d):
                acc = 0.0
                for p in range(a1):
                    acc = acc + theta[i, p * d + q] * dz1[p]
                dx[i, q] = acc
    return dtheta_arr, dx_arr


def segment_max(const double[:, ::1] x, const long[:, ::1] index):
    cdef Py_ssize_t b = x.shape[0]
    cdef Py_ssize_t c = index.shape[0]
    cdef Py_ssize_t k = index.shape[1]
    vals_arr = np.empty((b, c), dtype=np.float64)
    arg_arr = np.empty((b, c), dtype=np.int64)
    cdef double[:, ::1] vals = vals_arr
    cdef long[:, ::1] arg = arg_arr
    cdef Py_ssize_t i, j, t
    cdef long idx, best_idx
    cdef double best
    with nogil:
        for i in range(b):
            for j in range(c):
                best_idx = index[j, 0]
                best = x[i, best_idx]
                for t in range(1, k):
                    idx = index[j, t]
                    if idx < 0:
                        break
                    if x[i, idx] > best:
                        best = x[i, idx]
                        best_idx = idx
                vals[i, j] = best
                arg[i, j] = best_idx
    return vals_arr, arg_arr


def value_iteration(const double[:, ::1] reward, int goal_r, int goal_c, double gamma,
                    double goal_reward, double tol, int max_iter):
    cdef Py_ssize_t m = reward.shape[0]
    cdef Py_ssize_t n = reward.shape[1]
    v_arr = np.zeros((m, n), dtype=np.float64)
    w_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] v = v_arr
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] tmp
    cdef Py_ssize_t i, j
    cdef int it
    cdef double up, down, left, right, best, delta, diff
    v[goal_r, goal_c] = goal_reward
    for it in range(max_iter):
        delta = 0.0
        with nogil:
            for i in range(m):
                for j in range(n):
                    up = v[i - 1, j] if i > 0 else v[i, j]
                    down = v[i + 1, j] if i < m - 1 else v[i, j]
                    left = v[i, j - 1] if j > 0 else v[i, j]
                    right = v[i, j + 1] if j < n - 1 else v[i, j]
                    best = up if up > down else down
                    if left > right:
                        if left > best:
                            best = left
                    elif right > best:
                        best = right
                    if i == goal_r and j == goal_c:
                        w[i, j] = goal_reward
                    else:
                        w[i, j] = reward[i, j] + gamma * best
                    diff = fabs(w[i, j] - v[i, j])
                    if diff > delta:
                        delta = diff
        tmp = v
        v = w
        w = tmp
        if delta < tol:
            return np.asarray(v).copy(), it + 1
    return np.asarray(v).copy(), max_iter
