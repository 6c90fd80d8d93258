import numpy as np
import pytest

from groundnet import _pykernels, kernels
from groundnet.rnet import neighbour_pairs

IMPLS = kernels.implementations()


def test_backend_selection():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in IMPLS


@pytest.mark.parametrize("name", sorted(IMPLS))
def test_relation_kernels_match_reference(name, rng):
    impl = IMPLS[name]
    a1, a2, d, n = 10, 10, 15, 50
    theta = rng.normal(size=(n, a1 * d + a2 * a1 + a2))
    x = rng.normal(size=(n, d))
    r, h1, h2 = kernels.relation_forward(theta, x, a1, a2, impl=impl)
    for i in range(n):
        W1 = theta[i, :a1 * d].reshape(a1, d)
        W2 = theta[i, a1 * d:a1 * d + a2 * a1].reshape(a2, a1)
        W3 = theta[i, a1 * d + a2 * a1:]
        assert np.isclose(r[i], W3 @ np.tanh(W2 @ np.tanh(W1 @ x[i])), atol=1e-12)
    dr = rng.normal(size=n)
    dt, dx = kernels.relation_backward(theta, x, h1, h2, dr, impl=impl)
    dt_ref, dx_ref = kernels.relation_backward(theta, x, h1, h2, dr, impl=_pykernels)
    assert np.allclose(dt, dt_ref, atol=1e-12) and np.allclose(dx, dx_ref, atol=1e-12)


@pytest.mark.parametrize("name", sorted(IMPLS))
def test_segment_max_backends(name, rng):
    _, _, _, index = neighbour_pairs(4, 5)
    x = np.round(rng.normal(size=(3, int(index.max()) + 1)), 1)  # rounding forces ties
    vals, arg = kernels.segment_max(x, index, impl=IMPLS[name])
    for b in range(3):
        for c, row in enumerate(index):
            members = [p for p in row if p >= 0]
            best = max(x[b, p] for p in members)
            assert vals[b, c] == best
            assert arg[b, c] == next(p for p in members if x[b, p] == best)


@pytest.mark.parametrize("name", sorted(IMPLS))
def test_value_iteration_backends_identical(name, rng):
    reward = np.where(rng.random((7, 6)) < 0.3, -1.0, 0.0)
    v = kernels.value_iteration(reward, (2, 3), 0.95, 3.0, impl=IMPLS[name])
    ref = kernels.value_iteration(reward, (2, 3), 0.95, 3.0, impl=_pykernels)
    assert np.array_equal(v, ref)
    assert v[2, 3] == 3.0


def test_value_iteration_open_corridor():
    # 1 x 4 corridor, goal at the right end: V = gamma^d * 3 on grass
    v = kernels.value_iteration(np.zeros((1, 4)), (0, 3), 0.9, 3.0)
    assert np.allclose(v[0], [3 * 0.9 ** 3, 3 * 0.9 ** 2, 3 * 0.9, 3.0])
