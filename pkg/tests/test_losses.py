import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from oracles import central_diff, naive_bce, naive_inter, naive_intra, rel_error, scalar_focal_l2
from pclwater.errors import ParameterError, ShapeError
from pclwater.grouping import IntraLayerGroup, intra_group_sample
from pclwater.losses import (LossParams, LossResult, bce_loss, focal_weight, inter_loss,
                             intra_loss, total_loss)
from pclwater.raster import EPS, FracRect, TileCoord

P = LossParams()
probs = st.floats(1e-6, 1 - 1e-6)


def conf_maps(k, n):
    return hnp.arrays(np.float64, (k, n, n), elements=probs)


def binary(k, n):
    return hnp.arrays(np.float64, (k, n, n), elements=st.sampled_from([0.0, 1.0]))


def single_pixel_group():
    # Four 1x1 tiles sharing their only pixel; normalisation area is 1.
    one = FracRect(0, 0, 1, 1)
    tiles = tuple(TileCoord(0, 0, 1) for _ in range(4))
    pairs = tuple((i, j, one, one) for i in range(4) for j in range(i + 1, 4))
    return IntraLayerGroup(tiles, pairs, 0)


# ------------------------------------------------------------- scalar cases

def test_inter_scalar_cases():
    v = inter_loss([[0.8]], [[[0.6]], [[0.5]]], [[1.0]], P).value
    assert abs(v - 0.00416) < 1e-12
    v = inter_loss([[0.8]], [[[0.6]], [[0.8]]], [[0.0]], P).value
    assert abs(v - 0.00512) < 1e-12


def test_intra_scalar_case():
    maps = [np.array([[v]]) for v in (0.9, 0.7, 0.9, 0.9)]
    masks = [np.zeros((1, 1))] * 4
    v = intra_loss(maps, masks, single_pixel_group(), P).value
    assert abs(v - 0.01432) < 1e-12
    # Pair (1,2) alone: 0.2 * 0.81 * 0.04.
    assert abs(scalar_focal_l2(0.9, 0.7, 0.0, 2, 0.2) - 0.00648) < 1e-15


def test_bce_closed_forms(rng):
    y = rng.integers(0, 2, (8, 8))
    assert abs(bce_loss(np.full((8, 8), 0.5), y).value - math.log(2)) < 1e-15
    assert bce_loss(y.astype(float), y).value <= 1.7e-6
    assert bce_loss(np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]])).value < 1e-6


# ----------------------------------------------------------- oracle parity

@given(conf_maps(3, 5), binary(1, 5), st.floats(0, 4), st.floats(0, 1))
def test_inter_matches_naive(m, y, r, lam):
    params = LossParams(r=r, lam=lam)
    got = inter_loss(m[0], [m[1], m[2]], y[0], params).value
    assert abs(got - naive_inter(m[0], [m[1], m[2]], y[0], r, lam)) < 1e-10


@given(st.integers(2, 6), st.data(), st.floats(0, 3), st.floats(0, 1))
def test_intra_matches_naive(tile, data, r, lam):
    s = data.draw(st.integers(1, tile - 1))
    g = intra_group_sample(tile + s, tile, (0, 0), s)
    m = data.draw(conf_maps(4, tile))
    y = data.draw(binary(4, tile))
    got = intra_loss(list(m), list(y), g, LossParams(r=r, lam=lam)).value
    offsets = [(t.row0, t.col0) for t in g.tiles]
    assert abs(got - naive_intra(m, y, offsets, tile, r, lam)) < 1e-10


@given(conf_maps(1, 6), binary(1, 6))
def test_bce_matches_naive(p, y):
    assert abs(bce_loss(p[0], y[0]).value - naive_bce(p[0], y[0])) < 1e-10


def test_overlap_normalisation_divides_each_pair(rng):
    g = intra_group_sample(12, 8, (0, 0), 4)
    m = list(rng.uniform(0.05, 0.95, (4, 8, 8)))
    y = list(rng.integers(0, 2, (4, 8, 8)).astype(float))
    expected = 0.0
    for i, j, ri, rj in g.pairs:
        one = IntraLayerGroup(g.tiles, ((i, j, ri, rj),), g.stride)
        expected += intra_loss(m, y, one, P).value * 64 / ri.area
    assert abs(intra_loss(m, y, g, P, normalize="overlap").value - expected) < 1e-12
    with pytest.raises(ParameterError):
        intra_loss(m, y, g, P, normalize="pair")


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("seed", range(5))
def test_gradients_against_central_differences(seed):
    r = np.random.default_rng(seed)
    m = r.uniform(0.05, 0.95, (4, 8, 8))
    y = r.integers(0, 2, (4, 8, 8)).astype(float)

    res = inter_loss(m[0], [m[1], m[2]], y[0], P)
    for k, name in enumerate(("p_1st", "p_2nd", "p_3rd")):
        def f(x, k=k):
            mm = m.copy()
            mm[k] = x
            return inter_loss(mm[0], [mm[1], mm[2]], y[0], P).value
        assert rel_error(res.grads[name], central_diff(f, m[k])) <= 1e-4

    g = intra_group_sample(12, 8, (0, 0))
    res = intra_loss(list(m), list(y), g, P)
    for k in range(4):
        def f(x, k=k):
            mm = m.copy()
            mm[k] = x
            return intra_loss(list(mm), list(y), g, P).value
        assert rel_error(res.grads[f"p_{k + 1}"], central_diff(f, m[k])) <= 1e-4

    res = bce_loss(m[0], y[0])
    assert rel_error(res.grads["p"], central_diff(lambda x: bce_loss(x, y[0]).value, m[0])) <= 1e-4


@given(st.floats(0.01, 0.99), st.sampled_from([0.0, 1.0]), st.floats(0, 4), st.floats(0, 1))
def test_focal_weight_derivative(p, y, r, lam):
    w, dw = focal_weight(np.array(p), y, r, lam)
    h = 1e-6
    num = (focal_weight(np.array(p + h), y, r, lam)[0] - focal_weight(np.array(p - h), y, r, lam)[0]) / (2 * h)
    assert abs(dw - num) <= 1e-5 * max(1.0, abs(num))
    assert w >= 0


# --------------------------------------------------------------- properties

@given(conf_maps(1, 6), binary(1, 6))
def test_identical_maps_give_exact_zero(m, y):
    res = inter_loss(m[0], [m[0], m[0]], y[0], P)
    assert res.value == 0.0
    assert not res.grads["p_2nd"].any() and not res.grads["p_3rd"].any()


@given(st.integers(2, 6), st.data())
def test_intra_zero_on_a_shared_frame(tile, data):
    s = data.draw(st.integers(1, tile - 1))
    g = intra_group_sample(tile + s, tile, (0, 0), s)
    frame = data.draw(hnp.arrays(np.float64, (tile + s, tile + s), elements=probs))
    ymap = data.draw(hnp.arrays(np.float64, (tile + s, tile + s), elements=st.sampled_from([0.0, 1.0])))
    maps = [frame[t.slices] for t in g.tiles]
    masks = [ymap[t.slices] for t in g.tiles]
    res = intra_loss(maps, masks, g, P)
    assert res.value == 0.0 and all(not v.any() for v in res.grads.values())


@given(conf_maps(4, 4), binary(4, 4), st.floats(0, 4), st.floats(0, 1))
def test_losses_non_negative(m, y, r, lam):
    params = LossParams(r=r, lam=lam)
    g = intra_group_sample(6, 4, (0, 0))
    assert bce_loss(m[0], y[0]).value >= 0
    assert inter_loss(m[0], [m[1], m[2]], y[0], params).value >= 0
    assert intra_loss(list(m), list(y), g, params).value >= 0


def _parts(seed):
    r = np.random.default_rng(seed)
    m = r.uniform(0.05, 0.95, (4, 8, 8))
    y = r.integers(0, 2, (4, 8, 8)).astype(float)
    g = intra_group_sample(12, 8, (0, 0))
    seg = bce_loss(m[0], y[0], name="p_1st")
    inter = inter_loss(m[0], [m[1], m[2]], y[0], P)
    intra = intra_loss(list(m), list(y), g, P, names=["p_1st", "p_2", "p_3", "p_4"])
    return seg, inter, intra


@given(st.integers(0, 1000))
def test_zero_alpha_is_bitwise_seg(seed):
    seg, inter, intra = _parts(seed)
    tot = total_loss(seg, inter, intra, LossParams(alpha_inter=0, alpha_intra=0))
    assert tot.value == seg.value
    assert tot.grads.keys() == seg.grads.keys()
    assert np.array_equal(tot.grads["p_1st"], seg.grads["p_1st"])


@given(st.integers(0, 1000), st.floats(0.1, 10))
def test_alpha_scales_linearly(seed, c):
    seg, inter, intra = _parts(seed)
    base = total_loss(seg, inter, intra, LossParams(alpha_inter=1, alpha_intra=0))
    scaled = total_loss(seg, inter, intra, LossParams(alpha_inter=c, alpha_intra=0))
    assert abs((scaled.value - seg.value) - c * (base.value - seg.value)) < 1e-12
    assert np.allclose(scaled.grads["p_2nd"], c * base.grads["p_2nd"], rtol=1e-14, atol=0)


def test_default_total_is_plain_sum():
    seg, inter, intra = _parts(3)
    tot = total_loss(seg, inter, intra)
    assert tot.value == seg.value + inter.value + intra.value
    # p_1st appears in all three terms and its gradients add.
    expected = seg.grads["p_1st"] + inter.grads["p_1st"] + intra.grads["p_1st"]
    assert np.allclose(tot.grads["p_1st"], expected, rtol=1e-15, atol=1e-18)


def test_validation_errors():
    with pytest.raises(ParameterError):
        LossParams(r=-1)
    with pytest.raises(ParameterError):
        LossParams(lam=1.5)
    with pytest.raises(ParameterError):
        LossParams(alpha_inter=-0.1)
    with pytest.raises(ShapeError):
        inter_loss(np.zeros((2, 2)), [np.zeros((3, 3))], np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        bce_loss(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        intra_loss([np.zeros((4, 4))] * 3, [np.zeros((4, 4))] * 3, intra_group_sample(6, 4, (0, 0)))
    with pytest.raises(ShapeError):
        total_loss(LossResult(0.0, {"a": np.zeros(2)}), LossResult(0.0, {"a": np.zeros(3)}),
                   LossResult(0.0))
    assert EPS == 1e-7
