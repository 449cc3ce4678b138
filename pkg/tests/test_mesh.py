import numpy as np
import pytest

from coneflow.domain import build_from_radial_profile, ellipse_profile
from coneflow.geometry import hyperboloid_derivatives, hyperboloid_field
from coneflow.mesh import build_mesh, grad_cartesian, hess_cartesian

from conftest import round_mesh


def test_node_position():
    _, m = round_mesh(0.5, 33, 64)
    i = m.node(16, 0)
    np.testing.assert_allclose(m.xi[i], [0.25, 0.0], atol=1e-15)
    assert m.boundary_index.size == 64


def test_ellipse_jacobians_positive():
    d = build_from_radial_profile(*ellipse_profile(0.5, 0.7, 128), 64)
    m = build_mesh(d, 17, 64)
    assert np.all(m.jac_det[1:] > 0)


def test_too_coarse():
    d, _ = round_mesh(0.5, 17, 32)
    with pytest.raises(ValueError):
        build_mesh(d, 4, 32)


@pytest.mark.parametrize("shape", [("round", 0.5), ("ellipse", (0.5, 0.7))])
def test_polynomial_exactness(shape):
    if shape[0] == "round":
        _, m = round_mesh(shape[1], 17, 32)
    else:
        m = build_mesh(build_from_radial_profile(*ellipse_profile(*shape[1], 64), 32), 17, 32)
    x, y = m.xi.T
    np.testing.assert_allclose(grad_cartesian(m, np.full(m.n_nodes, 3.0)), 0, atol=1e-10)
    np.testing.assert_allclose(hess_cartesian(m, np.full(m.n_nodes, 3.0)), 0, atol=1e-8)
    g = grad_cartesian(m, 0.3 * x - 1.7 * y)
    np.testing.assert_allclose(g[:, 0], 0.3, atol=1e-10)
    np.testing.assert_allclose(g[:, 1], -1.7, atol=1e-10)
    A = np.array([[1.3, -0.4], [-0.4, 0.7]])
    H = hess_cartesian(m, 0.5 * np.einsum("ni,ij,nj->n", m.xi, A, m.xi))
    np.testing.assert_allclose(H, np.broadcast_to(A, H.shape), atol=1e-8)
    assert np.all(H[:, 0, 1] == H[:, 1, 0])


def test_hyperboloid_convergence_order():
    eg, eh = [], []
    # the (33, 64) level is still pre-asymptotic for the boundary Hessian
    for nr, ns in ((65, 128), (129, 256), (257, 512)):
        _, m = round_mesh(0.5, nr, ns)
        f = hyperboloid_field(m.xi)
        D, D2 = hyperboloid_derivatives(m.xi)
        eg.append(np.max(np.abs(grad_cartesian(m, f) - D)))
        eh.append(np.max(np.abs(hess_cartesian(m, f) - D2)))
    og = np.log2(np.array(eg[:-1]) / eg[1:])
    oh = np.log2(np.array(eh[:-1]) / eh[1:])
    assert np.all(og >= 1.9), (eg, og)
    assert np.all(oh >= 1.9), (eh, oh)


def test_grid_roundtrip():
    _, m = round_mesh(0.5, 17, 32)
    f = np.arange(m.n_nodes, dtype=float)
    np.testing.assert_array_equal(m.from_grid(m.to_grid(f)), f)
