import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundnet import tensor as T
from groundnet.puddleworld import FIRST_UNSEEN_ENTITY
from groundnet.rnet import (OFFSETS, ClassifierHead, TRNet, ValueHead, gradient_composite, gradient_maps,
                            l_encoding, neighbour_pairs, relation_score)
from groundnet.tensor import ShapeError, Tensor
from groundnet.text import decode_params, split_params


def small(attention=True, task="regression", shape=(4, 4), seed=0, **kw):
    return TRNet(12, shape=shape, k=3, a1=4, a2=3, attention=attention, task=task, seed=seed, **kw)


def random_grid(rng, shape, batch=1, high=FIRST_UNSEEN_ENTITY):
    return rng.integers(0, high, size=(batch,) + tuple(shape))


def test_l_encoding():
    assert l_encoding((-1, -1)) == 0.0
    assert l_encoding((1, 1)) == 1.0
    assert l_encoding((0, 1)) == pytest.approx(4 / 7)
    assert sorted(l_encoding(o) for o in OFFSETS) == [i / 7 for i in range(8)]
    with pytest.raises(ValueError):
        l_encoding((0, 0))


def test_neighbour_counts():
    src, dst, off, index = neighbour_pairs(10, 10)
    counts = (index >= 0).sum(axis=1).reshape(10, 10)
    assert counts[0, 0] == counts[9, 9] == 3
    assert counts[0, 5] == 5 and counts[5, 5] == 8
    assert len(src) == 684
    # each pair is listed under its source cell
    for cell in range(100):
        for p in index[cell][index[cell] >= 0]:
            assert src[p] == cell
            dr, dc = OFFSETS[off[p]]
            assert dst[p] == (cell // 10 + dr) * 10 + cell % 10 + dc


def test_gradient_maps():
    g1, g2, j = gradient_maps(3, 3)
    assert g1.tolist() == [[0, 0.5, 1]] * 3
    assert g2[:, 0].tolist() == [0, 0.5, 1] and np.all(g2[1] == 0.5)
    assert np.all(j == 1)
    z2 = gradient_composite([2.0, -1.0, 0.5], 3, 3)
    assert z2[0, 2] == 2.5 and z2[2, 0] == -0.5


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_relation_score_bound(seed):
    rng = np.random.default_rng(seed)
    for _ in range(50):
        p = decode_params(rng.normal(size=263) * 3, 7)
        r = relation_score(rng.normal(size=7), rng.normal(size=7), rng.integers(8) / 7, p)
        assert abs(r) <= np.abs(p.W3).sum() + 1e-12


def reference_z1(model, grid, ids):
    """Per-pair loop: numpy attention, affine decode, scalar relation score."""
    m, n = grid.shape
    table = model.encoder.full_table().data
    states, mask = model.text.encode([ids])
    h = states.data[0][mask[0]]
    dec = model.decoder
    src, dst, off, index = neighbour_pairs(m, n)
    r = np.empty(len(src))
    for p in range(len(src)):
        pi, pj = table[grid.flat[src[p]]], table[grid.flat[dst[p]]]
        if model.attention:
            s = h @ model.proj.data.T @ np.concatenate([pi, pj])
            a = np.exp(s - s.max())
            ctx = (a / a.sum()) @ h
        else:
            ctx = h.mean(axis=0)
        params = split_params(ctx @ dec.D.data + dec.bias.data, model.k, model.a1, model.a2)
        r[p] = relation_score(pi, pj, off[p] / 7, params)
    z1 = np.array([r[index[c][index[c] >= 0]].max() for c in range(m * n)]).reshape(m, n)
    return z1, r


@pytest.mark.parametrize("attention", [True, False])
def test_z1_matches_pairwise_reference(rng, attention):
    model = small(attention, shape=(5, 4))
    grid = random_grid(rng, (5, 4), high=22)[0]
    ids = [2, 5, 7, 3]
    _, aux = model(grid[None], [ids], aux=True)
    z1, r = reference_z1(model, grid, ids)
    assert np.allclose(aux["r"].data[0], r, atol=1e-12)
    assert np.allclose(aux["Z1"].data[0], z1, atol=1e-12)


def test_deduplicated_and_dense_paths_agree(rng):
    model = small(shape=(6, 6))
    grids = random_grid(rng, (6, 6), batch=3, high=4)   # few ids -> many duplicates
    ids = [[2, 3], [4, 5, 6], [2]]
    r_grid, _ = model._relation_grid(grids, *model.text.encode(ids), False)
    phi = model.encoder(grids).reshape(3, 6, 6, model.k)
    r_dense, _ = model._relation_dense(phi, *model.text.encode(ids), False)
    assert np.allclose(r_grid.data, r_dense.data, atol=1e-12)


def test_z1_is_local(rng):
    model = small(shape=(6, 6))
    grid = random_grid(rng, (6, 6))[0]
    base = model(grid[None], [[3, 4]], aux=True)[1]["Z1"].data[0]
    changed = grid.copy()
    changed[5, 5] = (grid[5, 5] + 1) % FIRST_UNSEEN_ENTITY
    after = model(changed[None], [[3, 4]], aux=True)[1]["Z1"].data[0]
    rows, cols = np.nonzero(base != after)
    assert np.all(np.maximum(np.abs(rows - 5), np.abs(cols - 5)) <= 1)
    assert after[0, 0] == base[0, 0]


def test_z1_dominates_pair_scores(rng):
    model = small()
    _, aux = model(random_grid(rng, (4, 4), batch=2), [[2], [3, 4]], aux=True)
    src = neighbour_pairs(4, 4)[0]
    z1 = aux["Z1"].data.reshape(2, -1)
    r = aux["r"].data
    assert np.all(z1[:, src] >= r)
    for b in range(2):
        assert set(z1[b]) <= set(r[b])


def test_unseen_rows_receive_no_gradient(rng):
    model = small()
    grid = random_grid(rng, (4, 4))[0]
    grid[0, :] = 13
    before = model.encoder.frozen.data.copy()
    T.tsum(model(grid[None], [[2, 3]])).backward()
    g = model.encoder.table.grad
    assert np.all(g[np.setdiff1d(np.arange(FIRST_UNSEEN_ENTITY), grid)] == 0)
    assert "encoder.frozen" not in dict(model.named_parameters())
    assert np.array_equal(model.encoder.frozen.data, before)
    with pytest.raises(ValueError):
        model(np.full((1, 4, 4), 22), [[2]])


def test_heads(rng):
    v = ValueHead(rng)
    out = v(Tensor(rng.normal(size=(2, 4, 5))), Tensor(rng.normal(size=(2, 4, 5))))
    assert out.shape == (2, 4, 5) and np.all(out.data >= 0)
    with pytest.raises(ShapeError):
        v(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 4, 5))))
    c = ClassifierHead((4, 5), rng)
    assert c(Tensor(rng.normal(size=(3, 4, 5)))).shape == (3, 2)


def test_classification_ignores_gradient_maps(rng):
    model = small(task="classification")
    out, aux = model(random_grid(rng, (4, 4), batch=2), [[2], [3]], aux=True)
    assert out.shape == (2, 2) and aux["Z2"] is None


def test_parameter_counts():
    full = TRNet(40, attention=True)
    plain = TRNet(40, attention=False)
    assert full.num_parameters() - plain.num_parameters() == 14 * 30
    assert full.decoder.D.shape == (30, 263)


@pytest.mark.parametrize("attention", [True, False])
def test_gradcheck_grid_model(rng, attention):
    model = small(attention)
    grid = random_grid(rng, (4, 4), batch=2)
    w = rng.normal(size=(2, 4, 4))
    fn = lambda: T.tsum(T.mul(model(grid, [[2, 5, 3], [7]]), w))
    assert T.gradcheck(fn, model.parameters(), max_coords=40) < 1e-4


def test_gradcheck_pixel_classifier(rng):
    model = TRNet(10, shape=(2, 2), k=3, a1=3, a2=2, task="classification", observation="pixel", seed=1)
    images = rng.random((2, 16, 16, 3))
    fn = lambda: T.tsum(T.mul(model(images, [[2, 3], [4]]), np.array([[1.0, -1.0], [0.5, 2.0]])))
    assert T.gradcheck(fn, model.parameters(), max_coords=25) < 1e-3


def test_pixel_model_grid_size(rng):
    model = TRNet(10, shape=(8, 8), task="classification", observation="pixel")
    out, aux = model(rng.random((1, 64, 64, 3)), [[2]], aux=True)
    assert aux["Z1"].shape == (1, 8, 8) and out.shape == (1, 2)
