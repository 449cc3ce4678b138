"""Pointwise geometry of a spacelike radial graph in R^3_1.

The surface is x(xi) = u(xi) (xi + e3) over the planar domain, with the
Minkowski product <a, b> = a1 b1 + a2 b2 - a3 b3 and e3 the future timelike
direction. All kernels are vectorized over a leading node axis; gradients have
shape (n, 2) and Hessians (n, 2, 2).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotSpacelikeError
from .mesh import grad_cartesian, hess_cartesian

E3 = np.array([0.0, 0.0, 1.0])


def mink(a, b):
    """Minkowski product along the last axis."""
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] - a[..., 2] * b[..., 2]


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def spacelike_margin(xi, Drho):
    """(1 + xi.Drho)^2 - |Drho|^2; positive exactly on spacelike data."""
    return (1.0 + _dot(xi, Drho)) ** 2 - _dot(Drho, Drho)


def _require_spacelike(margin, what="state"):
    bad = np.flatnonzero(~(margin > 0))
    if bad.size:
        raise NotSpacelikeError(
            f"{what} is not spacelike at {bad.size} node(s), "
            f"min margin {np.nanmin(margin):.6g}",
            bad,
        )


def induced_metric(u, Du, xi):
    """g_ij = u^2 delta + u (xi_i D_j u + xi_j D_i u) + D_i u D_j u (|xi|^2 - 1)."""
    u = np.asarray(u, dtype=float)
    Du = np.asarray(Du, dtype=float)
    xi = np.asarray(xi, dtype=float)
    g = (
        (u * u)[..., None, None] * np.eye(2)
        + u[..., None, None] * (_outer(xi, Du) + _outer(Du, xi))
        + _outer(Du, Du) * (_dot(xi, xi) - 1.0)[..., None, None]
    )
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
    ok = (g[..., 0, 0] > 0) & (det > 0)
    if not np.all(ok):
        bad = np.flatnonzero(~np.atleast_1d(ok))
        raise NotSpacelikeError(f"induced metric not positive definite at {bad.size} node(s)", bad)
    return g


def inverse_metric(rho, Drho, xi):
    """Closed-form inverse metric written in terms of rho = log u."""
    rho = np.asarray(rho, dtype=float)
    Drho = np.asarray(Drho, dtype=float)
    xi = np.asarray(xi, dtype=float)
    a = _scaled_inverse(Drho, xi)
    return np.exp(-2.0 * rho)[..., None, None] * a


def _scaled_inverse(Drho, xi, margin=None):
    # a = e^{2 rho} g^{-1}, a function of (xi, Drho) only
    if margin is None:
        margin = spacelike_margin(xi, Drho)
    _require_spacelike(np.atleast_1d(margin))
    w = 1.0 + _dot(xi, Drho)
    num = (
        _outer(Drho, Drho)
        + _dot(Drho, Drho)[..., None, None] * _outer(xi, xi)
        - w[..., None, None] * (_outer(xi, Drho) + _outer(Drho, xi))
    )
    return np.eye(2) + num / np.asarray(margin)[..., None, None]


def unit_normal(u, Du, xi):
    """Future unit normal, spacelikeness v = -<nu, e3> and support S = -<x, nu>."""
    u = np.asarray(u, dtype=float)
    Du = np.asarray(Du, dtype=float)
    xi = np.asarray(xi, dtype=float)
    top = u + _dot(xi, Du)
    W2 = top * top - _dot(Du, Du)
    _require_spacelike(np.atleast_1d(W2) * np.sign(np.atleast_1d(top)))
    W = np.sqrt(W2)
    nu = np.concatenate([Du, top[..., None]], axis=-1) / W[..., None]
    return nu, top / W, u * u / W


@dataclass(frozen=True, eq=False)
class GeomFrame:
    """Per-node geometry of one state; arrays share the node axis."""

    xi: np.ndarray
    tau: float
    u: np.ndarray
    rho: np.ndarray
    rho_tilde: np.ndarray
    Drho: np.ndarray
    D2rho: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    a: np.ndarray
    nu: np.ndarray
    v: np.ndarray
    S: np.ndarray
    H: np.ndarray
    h: np.ndarray
    normA2: np.ndarray
    spacelike_margin: np.ndarray

    @property
    def x(self):
        """Position vectors u (xi + e3)."""
        return self.u[:, None] * np.concatenate([self.xi, np.ones((self.xi.shape[0], 1))], axis=1)

    @property
    def tangents(self):
        """x_i = u e_i + D_i u (xi + e3), shape (n, 2, 3) with i on axis 1."""
        n = self.xi.shape[0]
        Du = self.u[:, None] * self.Drho
        base = np.zeros((n, 2, 3))
        base[:, 0, 0] = self.u
        base[:, 1, 1] = self.u
        xe = np.concatenate([self.xi, np.ones((n, 1))], axis=1)
        return base + Du[:, :, None] * xe[:, None, :]

    @property
    def speed_ratio(self):
        """H / S, the normal speed of rho in physical time."""
        return self.H / self.S


def frame_from_derivatives(xi, rho_tilde, tau, Drho, D2rho):
    """Assemble a GeomFrame from rho_tilde and its Cartesian derivatives.

    Derivatives of rho and rho_tilde coincide since they differ by tau / 2.
    """
    xi = np.asarray(xi, dtype=float)
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    Drho = np.asarray(Drho, dtype=float)
    D2rho = np.asarray(D2rho, dtype=float)
    if not (np.all(np.isfinite(rho_tilde)) and np.all(np.isfinite(Drho)) and np.all(np.isfinite(D2rho))):
        bad = np.flatnonzero(~np.isfinite(rho_tilde) | ~np.all(np.isfinite(Drho), axis=-1))
        raise NotSpacelikeError("non-finite state values", bad)
    rho = rho_tilde + 0.5 * tau
    u = np.exp(rho)
    margin = spacelike_margin(xi, Drho)
    a = _scaled_inverse(Drho, xi, margin)
    e2 = np.exp(-2.0 * rho)
    ginv = e2[:, None, None] * a
    Du = u[:, None] * Drho
    g = induced_metric(u, Du, xi)
    sq = np.sqrt(margin)
    w = 1.0 + _dot(xi, Drho)
    nu = np.concatenate([Drho, w[:, None]], axis=1) / sq[:, None]
    v = w / sq
    S = u / sq
    B = D2rho - _outer(Drho, Drho)
    h = (u / sq)[:, None, None] * B
    H = np.einsum("nij,nij->n", ginv, h)
    M = ginv @ h
    normA2 = np.einsum("nij,nji->n", M, M)
    return GeomFrame(
        xi=xi,
        tau=float(tau),
        u=u,
        rho=rho,
        rho_tilde=rho_tilde,
        Drho=Drho,
        D2rho=D2rho,
        g=g,
        ginv=ginv,
        a=a,
        nu=nu,
        v=v,
        S=S,
        H=H,
        h=h,
        normA2=normA2,
        spacelike_margin=margin,
    )


def frame_from_field(mesh, rho_tilde, tau=0.0):
    """GeomFrame of a node field on a mesh, using the discrete derivatives."""
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    return frame_from_derivatives(
        mesh.xi, rho_tilde, tau, grad_cartesian(mesh, rho_tilde), hess_cartesian(mesh, rho_tilde)
    )


def mean_curvature(frame):
    """H from the displayed graph formula, (u g^ij D_ij u - 2 g^ij D_i u D_j u) / W."""
    u = frame.u
    Du = u[:, None] * frame.Drho
    D2u = u[:, None, None] * (frame.D2rho + _outer(frame.Drho, frame.Drho))
    W = u * np.sqrt(frame.spacelike_margin)
    t1 = np.einsum("nij,nij->n", frame.ginv, D2u)
    t2 = np.einsum("nij,ni,nj->n", frame.ginv, Du, Du)
    return (u * t1 - 2.0 * t2) / W


def second_fundamental(frame):
    """h_ij = -<D_ij x, nu> from the second derivatives of the embedding, and |A|^2."""
    n = frame.u.size
    u = frame.u
    Du = u[:, None] * frame.Drho
    D2u = u[:, None, None] * (frame.D2rho + _outer(frame.Drho, frame.Drho))
    xe = np.concatenate([frame.xi, np.ones((n, 1))], axis=1)
    D2x = D2u[..., None] * xe[:, None, None, :]
    for i in range(2):
        for j in range(2):
            D2x[:, i, j, j] += Du[:, i]
            D2x[:, i, j, i] += Du[:, j]
    h = -mink(D2x, frame.nu[:, None, None, :])
    M = frame.ginv @ h
    return h, np.einsum("nij,nji->n", M, M)


def hyperboloid_field(xi, c=2.0):
    """log of u = c / sqrt(1 - |xi|^2), the hyperboloid <x, x> = -c^2."""
    xi = np.asarray(xi, dtype=float)
    return np.log(c) - 0.5 * np.log1p(-_dot(xi, xi))


def hyperboloid_derivatives(xi):
    """Closed-form gradient and Hessian of the hyperboloid log-profile."""
    xi = np.asarray(xi, dtype=float)
    q = 1.0 - _dot(xi, xi)
    D = xi / q[..., None]
    D2 = np.eye(2) / q[..., None, None] + 2.0 * _outer(xi, xi) / (q * q)[..., None, None]
    return D, D2
