import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgnniv import tensor as T
from pgnniv.datagen import analytic_solution
from pgnniv.operators import AVERAGE_STENCIL, Grid1D, StencilOp, concat_boundary_flows, element_average, forward_diff


def test_grid_geometry():
    g = Grid1D(5)
    assert g.L == 0.25
    np.testing.assert_allclose(g.nodes, [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(g.midpoints, [0.125, 0.375, 0.625, 0.875])


@pytest.mark.parametrize("n", [0, 2, 2.5])
def test_grid_rejects_degenerate_sizes(n):
    with pytest.raises(ValueError):
        Grid1D(n)


def test_forward_diff_of_linear_field_is_slope():
    g = Grid1D(11)
    u = T.constant((3.0 * g.nodes - 1.0)[None, :])
    np.testing.assert_allclose(forward_diff(u, g).data, np.full((1, 10), 3.0), rtol=1e-12)


def test_forward_diff_matches_numpy_diff(rng):
    g = Grid1D(7)
    u = rng.normal(size=(4, 7))
    np.testing.assert_allclose(forward_diff(T.constant(u), g).data, np.diff(u, axis=1) / g.L, rtol=1e-12)


def test_element_average(rng):
    u = rng.normal(size=(3, 6))
    np.testing.assert_allclose(element_average(T.constant(u)).data, 0.5 * (u[:, 1:] + u[:, :-1]), rtol=1e-15)


def test_stencils_are_frozen_constants():
    assert AVERAGE_STENCIL.trainable is False
    m = AVERAGE_STENCIL.matrix(5)
    with pytest.raises(ValueError):
        m[0, 0] = 3.0
    u = T.parameter(np.ones((1, 5)))
    out = element_average(u)
    # the only leaf in the graph is the field itself
    leaves = [t for t in T.topological_order(T.tsum(out)) if t.is_leaf]
    assert leaves == [u]


def test_stencil_matrix_equals_convolution(rng):
    op = StencilOp(kernel=(1.0, -2.0, 1.0), scale=4.0)
    u = rng.normal(size=(2, 8))
    conv = T.conv1d(T.constant(u[:, None, :]), T.constant(4.0 * np.array([1.0, -2.0, 1.0]).reshape(1, 1, 3)))
    np.testing.assert_allclose(op(T.constant(u)).data, conv.data[:, 0, :], rtol=1e-13)


def test_stencil_wider_than_field():
    with pytest.raises(T.ShapeError):
        forward_diff(T.constant(np.ones((1, 1))), 0.1)


def test_concat_boundary_flows_layout():
    q = T.constant([[1.0, 2.0, 3.0]])
    out = concat_boundary_flows(q, T.constant([9.0]), T.constant([8.0]))
    np.testing.assert_array_equal(out.data, [[9.0, 1.0, 2.0, 3.0, 8.0]])
    with pytest.raises(T.ShapeError):
        concat_boundary_flows(q, T.constant([1.0, 2.0]), T.constant([8.0]))


field = arrays(np.float64, (3, 9), elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(field, field, st.floats(-5, 5), st.floats(-5, 5))
def test_operators_are_linear(u, v, a, b):
    g = Grid1D(9)
    for op in (lambda f: forward_diff(f, g), element_average):
        lhs = op(T.constant(a * u + b * v)).data
        rhs = a * op(T.constant(u)).data + b * op(T.constant(v)).data
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.integers(3, 40))
def test_forward_diff_annihilates_constants(c, n):
    out = forward_diff(T.constant(np.full((2, n), c)), Grid1D(n)).data
    np.testing.assert_array_equal(out, 0.0)


def _flux_residual_max(n):
    # exact nodal solution, exact constant interior flux, boundary flows from the data
    g = Grid1D(n)
    g1, g2 = 0.3, 0.9
    u, _, _ = analytic_solution("heterogeneous", g1, g2, g.nodes)
    k_mid = g.midpoints + 1.0
    q_elem = -k_mid * np.diff(u) / g.L
    q_exact = -(g2 - g1) / np.log(2.0)
    q_ext = concat_boundary_flows(T.constant(q_elem[None]), T.constant([q_exact]), T.constant([q_exact]))
    return np.abs(forward_diff(q_ext, g).data).max()


def test_flux_residual_on_exact_data_is_first_order():
    ns = [5, 10, 20, 40]
    r = [_flux_residual_max(n) for n in ns]
    L = [1.0 / (n - 1) for n in ns]
    slope = np.polyfit(np.log(L), np.log(r), 1)[0]
    assert 0.8 < slope < 1.2, (r, slope)
