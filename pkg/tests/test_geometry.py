import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coneflow.errors import NotSpacelikeError
from coneflow.geometry import (
    frame_from_derivatives,
    frame_from_field,
    hyperboloid_derivatives,
    hyperboloid_field,
    induced_metric,
    inverse_metric,
    mean_curvature,
    mink,
    second_fundamental,
    unit_normal,
)

from conftest import round_mesh


def hyperboloid_frame(xi, c=2.0):
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    D, D2 = hyperboloid_derivatives(xi)
    return frame_from_derivatives(xi, hyperboloid_field(xi, c), 0.0, D, D2)


@st.composite
def spacelike_states(draw):
    """Random (xi, rho, Drho, D2rho) with margin bounded away from zero."""
    x = draw(st.floats(-0.9, 0.9))
    y = draw(st.floats(-0.9, 0.9))
    px = draw(st.floats(-0.6, 0.6))
    py = draw(st.floats(-0.6, 0.6))
    xi = np.array([[x, y]])
    p = np.array([[px, py]])
    margin = (1 + xi @ p.T) ** 2 - p @ p.T
    from hypothesis import assume

    assume(margin.item() > 0.05 and 1 + (xi @ p.T).item() > 0)
    rho = draw(st.floats(-1.0, 1.0))
    h = [draw(st.floats(-2.0, 2.0)) for _ in range(3)]
    D2 = np.array([[[h[0], h[1]], [h[1], h[2]]]])
    return xi, np.array([rho]), p, D2


def test_flat_metric():
    g = induced_metric(np.array([3.0]), np.zeros((1, 2)), np.array([[0.2, -0.1]]))
    np.testing.assert_allclose(g[0], 9 * np.eye(2))
    gi = inverse_metric(np.array([np.log(3.0)]), np.zeros((1, 2)), np.array([[0.2, -0.1]]))
    np.testing.assert_allclose(gi[0], np.eye(2) / 9)


def test_hyperboloid_metric_positive():
    fr = hyperboloid_frame([0.5, 0.0])
    assert np.linalg.det(fr.g[0]) > 0 and fr.g[0, 0, 0] > 0


@pytest.mark.parametrize("xi", [[0.6, 0.0], [0.3, -0.4]])
def test_hyperboloid_inverse(xi):
    fr = hyperboloid_frame(xi)
    np.testing.assert_allclose(fr.ginv[0] @ fr.g[0], np.eye(2), atol=1e-12)


def test_steep_data_not_spacelike():
    with pytest.raises(NotSpacelikeError):
        induced_metric(np.array([1.0]), np.array([[2.0, 0.0]]), np.array([[0.0, 0.0]]))
    with pytest.raises(NotSpacelikeError):
        inverse_metric(np.array([0.0]), np.array([[2.0, 0.0]]), np.array([[0.0, 0.0]]))


def test_unit_normal_flat():
    nu, v, S = unit_normal(np.array([2.0]), np.zeros((1, 2)), np.array([[0.3, 0.1]]))
    np.testing.assert_allclose(nu[0], [0, 0, 1])
    assert v[0] == 1 and S[0] == 2


@pytest.mark.parametrize("x,v", [(0.6, 1.25), (0.5, 1 / np.sqrt(0.75))])
def test_hyperboloid_normal(x, v):
    fr = hyperboloid_frame([x, 0.0])
    assert fr.v[0] == pytest.approx(v, rel=1e-12)
    assert fr.S[0] == pytest.approx(2.0, rel=1e-12)
    # nu = x / c for the hyperboloid
    np.testing.assert_allclose(fr.nu[0], fr.x[0] / 2.0, atol=1e-12)
    u = np.exp(hyperboloid_field(np.array([[x, 0.0]])))
    Du = u[:, None] * hyperboloid_derivatives(np.array([[x, 0.0]]))[0]
    nu2, v2, S2 = unit_normal(u, Du, np.array([[x, 0.0]]))
    np.testing.assert_allclose(nu2, fr.nu, atol=1e-12)


@pytest.mark.parametrize("c,H", [(2.0, 1.0), (4.0, 0.5)])
def test_hyperboloid_curvature(c, H):
    xi = np.array([[0.1, 0.2], [0.5, -0.3], [0.0, 0.0]])
    fr = hyperboloid_frame(xi, c)
    np.testing.assert_allclose(fr.H, H, rtol=1e-12)
    np.testing.assert_allclose(mean_curvature(fr), H, rtol=1e-12)
    h, A2 = second_fundamental(fr)
    np.testing.assert_allclose(A2, 2 / c**2, rtol=1e-12)
    np.testing.assert_allclose(h, fr.g / c, rtol=1e-10, atol=1e-12)


def test_constant_graph_flat():
    _, m = round_mesh(0.5, 17, 32)
    fr = frame_from_field(m, np.full(m.n_nodes, 0.7))
    np.testing.assert_allclose(fr.H, 0, atol=1e-8)
    np.testing.assert_allclose(mean_curvature(fr), 0, atol=1e-8)
    h, A2 = second_fundamental(fr)
    np.testing.assert_allclose(h, 0, atol=1e-8)
    np.testing.assert_allclose(A2, 0, atol=1e-8)


@settings(max_examples=200, deadline=None)
@given(spacelike_states())
def test_frame_identities(state):
    xi, rho, p, D2 = state
    fr = frame_from_derivatives(xi, rho, 0.0, p, D2)
    np.testing.assert_allclose(fr.g[0] @ fr.ginv[0], np.eye(2), atol=1e-10)
    assert mink(fr.nu, fr.nu)[0] == pytest.approx(-1, abs=1e-10)
    assert fr.nu[0, 2] > 0 and fr.v[0] >= 1 - 1e-12 and fr.S[0] > 0
    np.testing.assert_allclose(mink(fr.tangents[0], fr.nu[0]), 0, atol=1e-10)
    assert fr.S[0] == pytest.approx(-mink(fr.x, fr.nu)[0], rel=1e-10)
    h, _ = second_fundamental(fr)
    np.testing.assert_allclose(h, fr.h, rtol=1e-9, atol=1e-9)
    scale = max(1.0, np.abs(fr.H[0]))
    assert np.einsum("ij,ij", fr.ginv[0], h[0]) == pytest.approx(fr.H[0], abs=1e-9 * scale)
    assert mean_curvature(fr)[0] == pytest.approx(fr.H[0], abs=1e-9 * scale)


@settings(max_examples=50, deadline=None)
@given(spacelike_states())
def test_scaling_equivariance(state):
    xi, rho, p, D2 = state
    a = frame_from_derivatives(xi, rho, 0.0, p, D2)
    b = frame_from_derivatives(xi, rho + np.log(2.0), 0.0, p, D2)
    np.testing.assert_allclose(b.v, a.v, rtol=1e-12)
    np.testing.assert_allclose(b.S, 2 * a.S, rtol=1e-12)
    np.testing.assert_allclose(b.H, a.H / 2, rtol=1e-12, atol=1e-14)


def test_rescaled_time_shift():
    # rho_tilde at time tau describes the surface with rho = rho_tilde + tau / 2
    xi = np.array([[0.2, 0.1]])
    D, D2 = hyperboloid_derivatives(xi)
    a = frame_from_derivatives(xi, hyperboloid_field(xi), 0.0, D, D2)
    b = frame_from_derivatives(xi, hyperboloid_field(xi) - 0.5, 1.0, D, D2)
    np.testing.assert_allclose(a.u, b.u, rtol=1e-14)
