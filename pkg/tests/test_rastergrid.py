import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_block_mean
from smdownscale.errors import DataError, DimensionError
from smdownscale.rastergrid import (
    GridGeometry,
    Raster,
    Variable,
    add_gaussian_noise,
    aggregate_block_mean,
    block_majority,
    centroid_grids,
    format_tdr,
    parse_tdr,
    pixel_centroid,
    read_tdr,
    write_tdr,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_constant_raster_aggregates_to_constant():
    r = Raster(Variable.SM, 200, 5, np.full((10, 10), 0.2))
    out = aggregate_block_mean(r, 5)
    assert out.values.shape == (2, 2)
    np.testing.assert_allclose(out.values, 0.2, rtol=0, atol=1e-15)
    assert (out.variable, out.resolution_m, out.day) == (Variable.SM, 1000, 5)


def test_two_by_two_mean():
    r = Raster(Variable.SM, 1000, 1, [[0.1, 0.2], [0.3, 0.4]])
    assert aggregate_block_mean(r, 2).values[0, 0] == pytest.approx(0.25, abs=1e-15)


def test_block_mean_matches_double_loop(rng):
    a = rng.uniform(0, 0.6, (50, 50))
    out = aggregate_block_mean(Raster(Variable.SM, 200, 1, a), 10).values
    np.testing.assert_allclose(out, naive_block_mean(a, 10), rtol=0, atol=1e-12)


def test_aggregate_errors():
    r = Raster(Variable.LST, 200, 1, np.zeros((10, 10)))
    with pytest.raises(DimensionError):
        aggregate_block_mean(r, 3)
    with pytest.raises(ValueError):
        aggregate_block_mean(r, 1)


def test_lc_majority_ties_go_to_lowest_code():
    lc = np.array([[1, 2], [2, 1]], dtype=float)
    assert block_majority(lc, 2)[0, 0] == 1
    lc = np.array([[0, 0, 1, 1], [2, 2, 1, 1], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
    r = aggregate_block_mean(Raster(Variable.LC, 200, 1, lc), 2)
    np.testing.assert_array_equal(r.values, [[0, 1], [0, 0]])


def test_raster_invariants():
    with pytest.raises(DataError):
        Raster(Variable.SM, 1000, 1, [[0.7]])
    with pytest.raises(DataError):
        Raster(Variable.LAI, 1000, 1, [[-0.1]])
    with pytest.raises(DataError):
        Raster(Variable.LC, 1000, 1, [[3]])
    with pytest.raises(DataError):
        Raster(Variable.LST, 1000, 1, [[np.nan]])
    with pytest.raises(DimensionError):
        Raster(Variable.LST, 1000, 1, [1.0, 2.0])
    r = Raster(Variable.LST, 1000, 1, [[300.0]])
    with pytest.raises(ValueError):
        r.values[0, 0] = 1.0


def test_noise_sd_zero_is_identity():
    r = Raster(Variable.PPT, 1000, 3, np.arange(6.0).reshape(2, 3))
    assert add_gaussian_noise(r, 0.0, 1) == r


def test_noise_statistics():
    r = Raster(Variable.LST, 1000, 1, np.zeros((1000, 1000)))
    v = add_gaussian_noise(r, 0.02, 99).values
    assert abs(v.mean()) < 3 * 0.02 / 1000
    assert abs(v.std() / 0.02 - 1) < 0.01


def test_noise_is_deterministic_and_clamped():
    r = Raster(Variable.SM, 10000, 1, np.full((30, 30), 0.01))
    a = add_gaussian_noise(r, 0.05, 4)
    b = add_gaussian_noise(r, 0.05, 4)
    assert np.array_equal(a.values, b.values)
    assert a.values.min() >= 0.0 and a.values.max() <= 0.6
    p = add_gaussian_noise(Raster(Variable.PPT, 1000, 1, np.zeros((30, 30))), 1.0, 4)
    assert p.values.min() >= 0.0
    assert add_gaussian_noise(r, 0.05, 5) != a


def test_noise_errors():
    with pytest.raises(ValueError):
        add_gaussian_noise(Raster(Variable.LC, 1000, 1, [[0.0]]), 0.1, 0)
    with pytest.raises(ValueError):
        add_gaussian_noise(Raster(Variable.LST, 1000, 1, [[0.0]]), -1.0, 0)


@pytest.mark.parametrize(
    "res,cell,expected",
    [(1000, (0, 0), (0.5, 0.5)), (10000, (4, 4), (45.0, 45.0)), (200, (124, 124), (24.9, 24.9))],
)
def test_pixel_centroid(res, cell, expected):
    x, y = pixel_centroid(GridGeometry(50, res), *cell)
    assert x == pytest.approx(expected[0], abs=1e-12)
    assert y == pytest.approx(expected[1], abs=1e-12)


def test_pixel_centroid_bounds_and_grids():
    g = GridGeometry(50, 1000)
    with pytest.raises(IndexError):
        pixel_centroid(g, 50, 0)
    xs, ys = centroid_grids(g)
    assert (xs[3, 7], ys[3, 7]) == pixel_centroid(g, 3, 7)


def test_geometry_sizes():
    assert [GridGeometry(50, r).size for r in (200, 1000, 10000)] == [250, 50, 5]
    with pytest.raises(DimensionError):
        GridGeometry(50, 300)


def test_tdr_round_trip(tmp_path, rng):
    r = Raster(Variable.SM, 1000, 42, rng.uniform(0, 0.6, (4, 3)))
    text = format_tdr(r)
    assert text.splitlines()[0] == "#tdr,v1,SM,1000,42,4,3"
    assert parse_tdr(text) == r
    write_tdr(tmp_path / "r.csv", r)
    assert read_tdr(tmp_path / "r.csv") == r


def test_tdr_bad_input():
    with pytest.raises(DataError):
        parse_tdr("")
    with pytest.raises(DataError):
        parse_tdr("#tdr,v2,SM,1000,1,1,1\n0.1\n")
    with pytest.raises(DimensionError):
        parse_tdr("#tdr,v1,SM,1000,1,2,1\n0.1\n")
    with pytest.raises(DimensionError):
        parse_tdr("#tdr,v1,SM,1000,1,1,2\n0.1\n")


# -- properties


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (12, 12), elements=st.floats(0, 100)),
    st.floats(-10, 10),
    st.floats(-10, 10),
    st.sampled_from([2, 3, 4, 6]),
)
def test_aggregation_commutes_with_affine_maps(a, s, c, f):
    r = Raster(Variable.LST, 100, 1, a)
    lhs = aggregate_block_mean(r.with_values(s * a + c), f).values
    rhs = s * aggregate_block_mean(r, f).values + c
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1.0, np.abs(lhs).max()))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (12, 12), elements=finite), st.sampled_from([(2, 3), (3, 2), (2, 2), (2, 6), (3, 4)]))
def test_aggregation_composes(a, fs):
    f1, f2 = fs
    r = Raster(Variable.LST, 100, 1, a)
    two = aggregate_block_mean(aggregate_block_mean(r, f1), f2)
    one = aggregate_block_mean(r, f1 * f2)
    assert two.resolution_m == one.resolution_m
    np.testing.assert_allclose(two.values, one.values, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max()))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (12, 12), elements=finite), st.sampled_from([2, 3, 4, 6, 12]))
def test_aggregation_preserves_mean(a, f):
    out = aggregate_block_mean(Raster(Variable.LST, 100, 1, a), f).values
    assert abs(out.mean() - a.mean()) <= 1e-12 * max(1.0, np.abs(a).max())


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.sampled_from([2, 5]))
def test_constant_rasters_are_fixed_points(c, f):
    r = Raster(Variable.LST, 100, 1, np.full((20, 20), c))
    out = aggregate_block_mean(r, f)
    np.testing.assert_allclose(out.values, c, rtol=0, atol=1e-12)
    np.testing.assert_allclose(aggregate_block_mean(out, 2).values, c, rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**40), st.floats(1e-6, 10))
def test_noise_changes_some_value(seed, sd):
    r = Raster(Variable.LST, 1000, 1, np.full((10, 10), 300.0))
    assert not np.array_equal(add_gaussian_noise(r, sd, seed).values, r.values)
