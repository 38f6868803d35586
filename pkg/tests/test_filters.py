import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from egp_topopt import filters
from egp_topopt.model import FilterConfig, GridSpec


def direct_gaussian(field2d, radius, sigma):
    """Loop-based truncated Gaussian with boundary renormalisation."""
    nx, ny = field2d.shape
    out = np.zeros_like(field2d)
    reach = int(np.floor(radius))
    for i in range(nx):
        for j in range(ny):
            acc = wsum = 0.0
            for di in range(-reach, reach + 1):
                for dj in range(-reach, reach + 1):
                    d2 = di * di + dj * dj
                    if d2 > radius**2 + 1e-12:
                        continue
                    a, b = i + di, j + dj
                    if 0 <= a < nx and 0 <= b < ny:
                        w = np.exp(-d2 / (2 * sigma**2))
                        acc += w * field2d[a, b]
                        wsum += w
            out[i, j] = acc / wsum
    return out


def disk(radius):
    r = int(np.floor(radius))
    return [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1) if a * a + b * b <= radius**2]


def direct_close(field2d, radius):
    nx, ny = field2d.shape
    offs = disk(radius)

    def sweep(arr, pick):
        out = np.empty_like(arr)
        for i in range(nx):
            for j in range(ny):
                out[i, j] = pick(arr[i + a, j + b] for a, b in offs
                                 if 0 <= i + a < nx and 0 <= j + b < ny)
        return out

    return sweep(sweep(field2d, max), min)


GRID9 = GridSpec(9, 9)


@pytest.mark.parametrize("radius", [1.1, 2.0, 2.4])
def test_gaussian_impulse_matches_direct_convolution(radius):
    kernel = filters.make_kernel(GRID9, "gaussian", radius)
    impulse = np.zeros(81)
    impulse[40] = 1.0
    out = filters.gaussian_filter(impulse, kernel).reshape(9, 9)
    oracle = direct_gaussian(impulse.reshape(9, 9), radius, radius / 2)
    np.testing.assert_allclose(out, oracle, atol=1e-14)
    assert np.all(out >= 0)
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(out, out.T, atol=1e-15)
    np.testing.assert_allclose(out, out[::-1, ::-1], atol=1e-15)


def test_gaussian_random_field_matches_direct_convolution():
    grid = GridSpec(7, 5)
    field = np.random.default_rng(0).normal(size=35)
    kernel = filters.make_kernel(grid, "gaussian", 2.0)
    oracle = direct_gaussian(field.reshape(7, 5), 2.0, 1.0).ravel()
    np.testing.assert_allclose(filters.gaussian_filter(field, kernel), oracle, atol=1e-13)


def test_gaussian_weights_row_normalised():
    kernel = filters.make_kernel(GridSpec(6, 4, 3), "gaussian", 1.5)
    np.testing.assert_allclose(np.asarray(kernel.matrix.sum(axis=1)).ravel(), 1.0, atol=1e-14)
    assert kernel.matrix.data.min() >= 0


@pytest.mark.parametrize("kind", ["gaussian", "hat", "none"])
def test_uniform_field_unchanged(kind):
    for grid in (GRID9, GridSpec(5, 4, 3)):
        kernel = filters.make_kernel(grid, kind, 1.7)
        out = filters.gaussian_filter(np.full(grid.n_elements, 0.37), kernel)
        np.testing.assert_allclose(out, 0.37, atol=1e-12)


def test_zero_radius_is_identity():
    kernel = filters.make_kernel(GRID9, "gaussian", 0.0)
    field = np.random.default_rng(1).random(81)
    np.testing.assert_array_equal(filters.gaussian_filter(field, kernel), field)


def test_negative_radius_rejected():
    with pytest.raises(ValueError):
        filters.make_kernel(GRID9, "gaussian", -1.0)
    with pytest.raises(ValueError):
        filters.make_kernel(GRID9, "close", -1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 35, elements=st.floats(-1e3, 1e3)),
       arrays(float, 35, elements=st.floats(-1e3, 1e3)),
       st.floats(-10, 10), st.floats(-10, 10))
def test_gaussian_is_linear(u, v, a, b):
    kernel = filters.make_kernel(GridSpec(7, 5), "gaussian", 1.6)
    lhs = filters.gaussian_filter(a * u + b * v, kernel)
    rhs = a * filters.gaussian_filter(u, kernel) + b * filters.gaussian_filter(v, kernel)
    scale = 1 + np.abs(a * u).max() + np.abs(b * v).max()
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * scale)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 35, elements=st.floats(-5, 5)))
def test_gaussian_output_within_input_range(u):
    out = filters.gaussian_filter(u, filters.make_kernel(GridSpec(7, 5), "gaussian", 2.2))
    assert out.min() >= u.min() - 1e-12
    assert out.max() <= u.max() + 1e-12


def test_sensitivity_filter_trivial_cases():
    kernel = filters.make_kernel(GRID9, "gaussian", 1.1)
    x = np.full(81, 0.5)
    np.testing.assert_allclose(filters.filter_sensitivity(np.full(81, -2.0), x, kernel), -2.0)
    assert np.all(filters.filter_sensitivity(np.zeros(81), x, kernel) == 0)
    impulse = np.zeros(81)
    impulse[40] = -1.0
    oracle = direct_gaussian(impulse.reshape(9, 9), 1.1, 0.55).ravel()
    np.testing.assert_allclose(filters.filter_sensitivity(impulse, x, kernel), oracle, atol=1e-14)


def test_sensitivity_filter_applies_density_chain_rule_first():
    grid = GridSpec(7, 5)
    rng = np.random.default_rng(2)
    g = rng.normal(size=35)
    dens = filters.make_kernel(grid, "gaussian", 1.5)
    sens = filters.make_kernel(grid, "gaussian", 1.1)
    H, S = dens.matrix.toarray(), sens.matrix.toarray()
    out = filters.filter_sensitivity(g, np.full(35, 0.5), sens, dens)
    np.testing.assert_allclose(out, S @ (H.T @ g), atol=1e-13)


def test_hat_sensitivity_filter_matches_88_line_heuristic():
    grid = GridSpec(6, 4)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, 24)
    g = -rng.random(24)
    rmin = 2.4
    oracle = np.zeros(24)
    for e in range(24):
        ix, iy = divmod(e, 4)
        num = den = 0.0
        for f in range(24):
            jx, jy = divmod(f, 4)
            w = max(0.0, rmin - np.hypot(ix - jx, iy - jy))
            num += w * x[f] * g[f]
            den += w
        oracle[e] = num / den / max(1e-3, x[e])
    kernel = filters.make_kernel(grid, "hat", rmin)
    np.testing.assert_allclose(filters.filter_sensitivity(g, x, kernel), oracle, atol=1e-14)


def test_sensitivity_shape_mismatch():
    kernel = filters.make_kernel(GRID9, "gaussian", 1.1)
    with pytest.raises(ValueError):
        filters.filter_sensitivity(np.zeros(80), np.zeros(81), kernel)


def test_close_fills_single_hole():
    field = np.ones((9, 9))
    field[4, 4] = 0.0
    kernel = filters.make_kernel(GRID9, "close", 1.0)
    out = filters.morph_close(field.ravel(), kernel)
    np.testing.assert_array_equal(out, 1.0)


@pytest.mark.parametrize("radius", [1.0, 2.0])
def test_close_matches_direct_max_min(radius):
    field = np.random.default_rng(4).random((9, 7))
    kernel = filters.make_kernel(GridSpec(9, 7), "close", radius)
    out = filters.morph_close(field.ravel(), kernel)
    np.testing.assert_array_equal(out, direct_close(field, radius).ravel())


def test_close_3d_matches_direct_max_min():
    grid = GridSpec(4, 3, 3)
    field = np.random.default_rng(5).random(grid.n_elements)
    kernel = filters.make_kernel(grid, "close", 1.0)
    arr = field.reshape(grid.shape)
    offs = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)
            if a * a + b * b + c * c <= 1]

    def sweep(values, pick):
        out = np.empty_like(values)
        for idx in np.ndindex(values.shape):
            out[idx] = pick(values[tuple(np.add(idx, o))] for o in offs
                            if all(0 <= i + d < s for i, d, s in zip(idx, o, values.shape)))
        return out

    np.testing.assert_array_equal(filters.morph_close(field, kernel),
                                  sweep(sweep(arr, max), min).ravel())


@settings(max_examples=40, deadline=None)
@given(arrays(float, 63, elements=st.floats(0, 1)), st.sampled_from([1.0, 1.5, 2.0]))
def test_close_idempotent_bounded_and_ordered(field, radius):
    kernel = filters.make_kernel(GridSpec(9, 7), "close", radius)
    once = filters.morph_close(field, kernel)
    np.testing.assert_array_equal(filters.morph_close(once, kernel), once)
    assert once.min() >= 0 and once.max() <= 1
    assert np.all(filters.dilate(field, kernel) >= once)
    assert np.all(once >= filters.erode(field, kernel))
    assert np.all(once >= field)


def test_close_uniform_unchanged():
    kernel = filters.make_kernel(GRID9, "close", 1.84)
    np.testing.assert_allclose(filters.morph_close(np.full(81, 0.3), kernel), 0.3, atol=1e-15)


def test_composite_close_radius_split():
    kernel = filters.make_kernel(GRID9, "close", 1.84)
    assert kernel.footprint.shape == (3, 3)
    assert kernel.residual.kind == "gaussian"
    assert kernel.residual.radius == pytest.approx(0.84)
    plain = filters.make_kernel(GRID9, "close", 1.84, close_composite=False)
    assert plain.residual is None


def test_close_sensitivity_fills_narrow_valleys_of_the_improvement_field():
    # -g is the improvement field; a one-element dip inside a high plateau is filled
    g = np.full(81, -1.0)
    g[40] = -0.1
    kernel = filters.make_kernel(GRID9, "close", 1.0)
    out = filters.filter_sensitivity(g, np.full(81, 0.5), kernel)
    np.testing.assert_allclose(out, -1.0, atol=1e-15)
    np.testing.assert_array_equal(filters.filter_sensitivity(np.full(81, 2.0), g, kernel), 2.0)


def test_density_filter_from_config():
    cfg = FilterConfig(density_radius=1.1, sensitivity_radius=0.55)
    dk = filters.density_kernel(GRID9, cfg)
    sk = filters.sensitivity_kernel(GRID9, cfg)
    assert dk.kind == sk.kind == "gaussian"
    # radius 0.55 reaches no neighbour on a unit grid
    assert sk.is_identity
    x = np.random.default_rng(6).random(81)
    out = filters.filter_density(x, dk)
    assert out.min() >= 0 and out.max() <= 1
