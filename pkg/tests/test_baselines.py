import numpy as np
import pytest

from groundnet import tensor as T
from groundnet.baselines import TCNN, TUVFA, TVGG, tcnn_param_size
from groundnet.models import build_model
from groundnet.tensor import ConfigError, ShapeError


def test_tcnn_param_size():
    assert tcnn_param_size(7) == 66
    assert tcnn_param_size(13) == 120
    assert tcnn_param_size(7, 5) == 178


def test_tcnn_zero_text_gives_constant_value_map(rng):
    model = TCNN(12, shape=(5, 5), seed=1)
    model.D.data[...] = 0.0
    model.bias.data[...] = 0.0
    out, aux = model(rng.integers(0, 12, (2, 5, 5)), [[2, 3], [4]], aux=True)
    assert np.all(aux["Z1"].data == 0) and np.all(aux["Z2"].data == 0)
    assert np.allclose(out.data, max(model.head.bias.data[0], 0.0))


def test_tcnn_relation_map_is_filter_response(rng):
    model = TCNN(12, shape=(4, 5), k=3, seed=2)
    grid = rng.integers(0, 12, (1, 4, 5))
    out, aux = model(grid, [[2, 5]], aux=True)
    h = model.text_vector([[2, 5]]).data[0]
    kern = h[:27].reshape(3, 3, 3)
    phi = np.pad(model.encoder.full_table().data[grid[0]], ((1, 1), (1, 1), (0, 0)))
    expect = np.array([[np.sum(phi[i:i + 3, j:j + 3] * kern) for j in range(5)] for i in range(4)])
    assert np.allclose(aux["Z1"].data[0], expect, atol=1e-12)


def test_tcnn_rejects_even_kernels():
    with pytest.raises(ConfigError):
        TCNN(10, kernel_size=4)


@pytest.mark.parametrize("task", ["regression", "classification"])
def test_tcnn_gradcheck(rng, task):
    model = TCNN(10, shape=(4, 4), k=3, task=task, seed=3)
    grid = rng.integers(0, 12, (2, 4, 4))
    fn = lambda: T.tsum(T.tanh(model(grid, [[2, 3], [4, 5, 6]])))
    assert T.gradcheck(fn, model.parameters(), max_coords=30) < 1e-4


def test_tuvfa_shapes_and_gradcheck(rng):
    model = TUVFA(10, shape=(4, 4), k=3, text_dim=3, channels=2, seed=0)
    grid = rng.integers(0, 12, (2, 4, 4))
    assert model(grid, [[2], [3, 4]]).shape == (2, 4, 4)
    fn = lambda: T.tsum(T.tanh(model(grid, [[2], [3, 4]])))
    assert T.gradcheck(fn, model.parameters(), max_coords=30) < 1e-4
    with pytest.raises(ConfigError):
        TUVFA(10, shape=(5, 4))
    with pytest.raises(ShapeError):
        model(np.zeros((1, 6, 6), int), [[2]])


def test_tvgg_small_images(rng):
    model = TVGG(10, image_size=16, channels=(2, 3, 3, 3), dense=(6, 5), seed=0)
    images = rng.random((2, 16, 16, 3))
    assert model(images, [[2], [3]]).shape == (2, 2)
    fn = lambda: T.tsum(T.mul(model(images, [[2, 4], [3]]), np.array([[1.0, -2.0], [0.3, 0.7]])))
    assert T.gradcheck(fn, model.parameters(), max_coords=30) < 1e-4
    with pytest.raises(ShapeError):
        model(rng.random((1, 32, 32, 3)), [[2]])


def test_registry_rejects_unsupported_combinations():
    with pytest.raises(ConfigError):
        build_model("tuvfa", 10, task="classification")
    with pytest.raises(ConfigError):
        build_model("tvgg", 10, task="regression")
    with pytest.raises(ConfigError):
        build_model("lstm", 10)
    for kind in ("trnetattn", "trnet", "tcnn", "tuvfa"):
        assert build_model(kind, 10).kind == kind
