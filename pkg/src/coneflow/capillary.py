"""Capillary boundary operator on the cone boundary and its enforcement.

Along the boundary the graph meets the cone wall Sigma at a constant angle,
-<nu, mu> = alpha, which in cone coordinates reads b(xi, D rho) = 0 with

    b(xi, p) = (p.N - (N.xi)(1 + xi.p)) / (K * W) + alpha,
    K = sqrt|(N.xi)^2 - 1|,  W = sqrt((1 + xi.p)^2 - |p|^2).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    BoundarySolveError,
    DegenerateBoundaryError,
    NotSpacelikeError,
    ObliquenessError,
)
from .geometry import frame_from_field, mink
from .mesh import grad_cartesian

BC_TOL = 1e-10
OBLIQUE_MIN = 1e-8
MAX_NEWTON = 50
MAX_BISECT = 200


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def cone_normal(N, z, margin=1e-3):
    """Future normal of the cone wall, (N + (N.z) e3) / sqrt|1 - (N.z)^2|."""
    N = np.asarray(N, dtype=float)
    z = np.asarray(z, dtype=float)
    Nz = _dot(N, z)
    q = np.abs(1.0 - Nz * Nz)
    if np.any(q < margin):
        raise DegenerateBoundaryError(f"|1 - (N.z)^2| = {q.min():.3g} below margin {margin:.3g}")
    mu = np.concatenate([N, Nz[..., None]], axis=-1)
    return mu / np.sqrt(q)[..., None]


def _parts(xi, N, p):
    xi, N, p = (np.asarray(a, dtype=float) for a in (xi, N, p))
    Nxi = _dot(N, xi)
    K = np.sqrt(np.abs(Nxi * Nxi - 1.0))
    w = 1.0 + _dot(xi, p)
    W2 = w * w - _dot(p, p)
    if np.any(~(W2 > 0)):
        raise NotSpacelikeError(
            "boundary gradient is not spacelike", np.flatnonzero(~(np.atleast_1d(W2) > 0))
        )
    return xi, N, p, Nxi, K, w, np.sqrt(W2)


def b_residual(xi, N, p, alpha, sigma=None):
    """Capillary residual b(xi, p); zero exactly when -<nu, mu> = alpha."""
    xi, N, p, Nxi, K, w, W = _parts(xi, N, p)
    return (_dot(p, N) - Nxi * w) / (K * W) + alpha


def b_gradient(xi, N, p, alpha):
    """Partial derivatives of b with respect to p, shape (..., 2)."""
    xi, N, p, Nxi, K, w, W = _parts(xi, N, p)
    bb = (_dot(p, N) - Nxi * w) / (K * W)
    num = N - Nxi[..., None] * xi - (bb * K / W)[..., None] * (w[..., None] * xi - p)
    return num / (K * W)[..., None]


def obliqueness(xi, N, p, alpha, sigma):
    """Closed form of N^i db/dp^i: K ((b - alpha)^2 + sigma) / W."""
    xi, N, p, Nxi, K, w, W = _parts(xi, N, p)
    bb = (_dot(p, N) - Nxi * w) / (K * W)
    return K * (bb * bb + sigma) / W


def hat_q(z, zdot, N, kappa, sigma):
    """Positive factor q of the normal curvature of Sigma along nu^Sigma."""
    z, zdot, N = (np.asarray(a, dtype=float) for a in (z, zdot, N))
    zn = np.sqrt(np.abs(_dot(z, z) - 1.0))
    c = _dot(zdot, z) / zn
    return zn * kappa / ((1.0 + sigma * c * c) * np.sqrt(np.abs(1.0 - _dot(N, z) ** 2)))


def hat_h_nn(S, u, z, zdot, N, kappa, alpha, sigma):
    """Normalized curvature of the cone wall along nu^Sigma / |nu^Sigma|.

    The product (sigma/|x|)(S^2 |x|^-2 - |nu^Sigma|^2) q is the value on the
    unnormalized nu^Sigma; it is divided by |nu^Sigma|^2 = |alpha^2 + sigma|.
    """
    xn = u * np.sqrt(np.abs(_dot(np.asarray(z), np.asarray(z)) - 1.0))
    if np.any(~(xn > 0)):
        raise DegenerateBoundaryError("boundary position is null (|z| = 1)")
    nn = abs(alpha * alpha + sigma)
    q = hat_q(z, zdot, N, kappa, sigma)
    return sigma / xn * (S * S / (xn * xn) - nn) * q / nn


def hat_h_direct(W1, W2, u, z, zdot, N, kappa):
    """Second fundamental form of Sigma on two tangent 3-vectors, evaluated directly.

    Sigma is ruled by the rays through the boundary curve, so only the
    component of W transverse to the ray, a(W) = zdot.(W_12 - W_3 z), sees
    the curvature of the generating curve.
    """
    z = np.asarray(z, dtype=float)
    a1 = _dot(zdot, W1[..., :2] - W1[..., 2:3] * z)
    a2 = _dot(zdot, W2[..., :2] - W2[..., 2:3] * z)
    return a1 * a2 * kappa / (u * np.sqrt(np.abs(1.0 - _dot(N, z) ** 2)))


@dataclass(frozen=True, eq=False)
class BoundaryFrame:
    """Boundary-node geometry of one state, ordered like ``mesh.boundary_index``."""

    mu: np.ndarray
    mu_top: np.ndarray
    nu_sigma: np.ndarray
    mu_top_norm2: np.ndarray
    nu_sigma_norm2: np.ndarray
    gamma: np.ndarray
    e3_proj: np.ndarray
    x_proj: np.ndarray
    x: np.ndarray
    xnorm2: np.ndarray
    hat_h_nn: np.ndarray
    q: np.ndarray
    Y: np.ndarray
    h_mumu: np.ndarray
    b: np.ndarray
    alpha: float
    sigma: int


def boundary_frame(mesh, frame, alpha, sigma):
    """Boundary quantities from a full GeomFrame."""
    k = mesh.boundary_index
    z, zdot, N, kappa = mesh.bz, mesh.bzdot, mesh.bN, mesh.bkappa
    u, nu, S = frame.u[k], frame.nu[k], frame.S[k]
    mu = cone_normal(N, z, margin=0.0)
    mu_top = mu - alpha * nu
    nu_sig = nu + sigma * alpha * mu
    x = frame.x[k]
    xnorm2 = np.abs(mink(x, x))
    Du = u[:, None] * frame.Drho[k]
    ze = np.concatenate([z, np.ones((z.shape[0], 1))], axis=1)
    gam = u[:, None] * np.concatenate([zdot, np.zeros((z.shape[0], 1))], axis=1) + _dot(Du, zdot)[
        :, None
    ] * ze
    gam = gam / np.sqrt(mink(gam, gam))[:, None]
    e3 = np.array([0.0, 0.0, 1.0])
    e3_proj = mink(np.broadcast_to(e3, gam.shape), gam)[:, None] * gam
    x_proj = mink(x, gam)[:, None] * gam
    # mu^T = Y^i x_i with Y = g^{-1} <mu, x_j>
    xt = frame.tangents[k]
    Y = np.einsum("nij,nj->ni", frame.ginv[k], mink(mu[:, None, :], xt))
    m2 = alpha * alpha + sigma
    h_mumu = np.einsum("ni,nij,nj->n", Y, frame.h[k], Y) / m2
    hnn = hat_h_nn(S, u, z, zdot, N, kappa, alpha, sigma)
    return BoundaryFrame(
        mu=mu,
        mu_top=mu_top,
        nu_sigma=nu_sig,
        mu_top_norm2=mink(mu_top, mu_top),
        nu_sigma_norm2=np.abs(mink(nu_sig, nu_sig)),
        gamma=gam,
        e3_proj=e3_proj,
        x_proj=x_proj,
        x=x,
        xnorm2=xnorm2,
        hat_h_nn=hnn,
        q=hat_q(z, zdot, N, kappa, sigma),
        Y=Y,
        h_mumu=h_mumu,
        b=b_residual(z, N, frame.Drho[k], alpha),
        alpha=float(alpha),
        sigma=int(sigma),
    )


def hat_h_z_nu(Z, bf, S, alpha, sigma, rel_eps=1e-8):
    """hat h(Z, nu^Sigma) for Z tangent to the boundary curve.

    Uses that the ray direction x is null for hat h: splitting x along the
    boundary tangent and nu^Sigma gives hat h(Z, nu^Sigma) as a multiple of
    hat h(nu_hat, nu_hat). Where that multiple is singular, returns NaN.
    """
    xz = mink(Z, bf.x)
    x2 = bf.xnorm2
    if sigma < 0:
        a2 = alpha * alpha - 1.0
        den = a2 * x2 - S * S
        num = a2 * S * xz
    else:
        a2 = alpha * alpha + 1.0
        den = S * S - x2 * a2
        num = -xz * a2 * S
    scale = np.maximum(np.abs(S * S), np.abs(a2 * x2))
    out = np.full(np.shape(S), np.nan)
    ok = np.abs(den) > rel_eps * scale
    out[ok] = num[ok] / den[ok] * bf.hat_h_nn[ok]
    return out


def _ring_system(mesh):
    k = mesh.boundary_index
    Dx = mesh.ops["dx"][k]
    Dy = mesh.ops["dy"][k]
    return k, Dx, Dy, Dx[:, k], Dy[:, k]


def _check_oblique(alpha, sigma):
    if alpha * alpha + sigma <= OBLIQUE_MIN:
        raise ObliquenessError(
            f"alpha^2 + sigma = {alpha * alpha + sigma:.3g}: boundary condition is not oblique "
            "(a Riemannian cone wall needs alpha > 1)"
        )


def boundary_residual(mesh, f, alpha):
    p = grad_cartesian(mesh, f)[mesh.boundary_index]
    return b_residual(mesh.bz, mesh.bN, p, alpha)


def _admissible_interval(xi, p0, w):
    """Interval of t with p = p0 + t w spacelike and future, per node."""
    A = _dot(xi, w) ** 2 - _dot(w, w)
    c0 = 1.0 + _dot(xi, p0)
    B = 2.0 * (c0 * _dot(xi, w) - _dot(p0, w))
    C = c0 * c0 - _dot(p0, p0)
    n = xi.shape[0]
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    disc = B * B - 4 * A * C
    sq = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = (-B - sq) / (2 * A)
        r2 = (-B + sq) / (2 * A)
    rl, rh = np.minimum(r1, r2), np.maximum(r1, r2)
    slope = _dot(xi, w)  # d(1 + xi.p)/dt
    for i in range(n):
        if abs(A[i]) < 1e-14 * max(1.0, _dot(w[i], w[i])):
            # linear margin
            if abs(B[i]) > 0:
                root = -C[i] / B[i]
                if B[i] > 0:
                    lo[i] = root
                else:
                    hi[i] = root
        elif A[i] < 0:
            lo[i], hi[i] = rl[i], rh[i]
        else:
            # margin positive outside the roots; keep the future branch
            mid_side_hi = c0[i] + slope[i] * (rh[i] + 1.0) > 0
            if disc[i] <= 0:
                continue
            if mid_side_hi:
                lo[i] = rh[i]
            else:
                hi[i] = rl[i]
    return lo, hi


def _scalar_solve(xi, N, p0, w, alpha, t0, tol):
    """Per-node root of b(xi, p0 + t w) = 0 in the admissible interval."""
    n = xi.shape[0]
    lo, hi = _admissible_interval(xi, p0, w)

    def bval(t):
        p = p0 + t[:, None] * w
        return b_residual(xi, N, p, alpha)

    # finite bracket: step inward from infinite ends until b changes sign
    span = np.maximum(1.0, np.abs(t0))
    a_ = np.where(np.isfinite(lo), lo, t0 - span)
    c_ = np.where(np.isfinite(hi), hi, t0 + span)
    eps = 1e-12 * np.maximum(1.0, np.abs(c_ - a_))
    a_in = np.where(np.isfinite(lo), lo + eps, a_)
    c_in = np.where(np.isfinite(hi), hi - eps, c_)
    for _ in range(200):
        fa, fc = bval(a_in), bval(c_in)
        grow_lo = ~np.isfinite(lo) & (fa > 0)
        grow_hi = ~np.isfinite(hi) & (fc < 0)
        if not (grow_lo.any() or grow_hi.any()):
            break
        width = c_in - a_in
        a_in = np.where(grow_lo, a_in - width, a_in)
        c_in = np.where(grow_hi, c_in + width, c_in)
    fa, fc = bval(a_in), bval(c_in)
    if np.any(~((fa <= 0) & (fc >= 0))):
        bad = np.flatnonzero(~((fa <= 0) & (fc >= 0)))
        raise BoundarySolveError(f"no capillary root in the spacelike bracket at {bad.size} node(s)")
    a, c = a_in.copy(), c_in.copy()
    t = np.clip(t0, a, c)
    for _ in range(MAX_NEWTON):
        fb = bval(t)
        if np.max(np.abs(fb)) < tol:
            return t
        neg = fb < 0
        a = np.where(neg, t, a)
        c = np.where(neg, c, t)
        p = p0 + t[:, None] * w
        d = _dot(b_gradient(xi, N, p, alpha), w)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - fb / d
        bad = ~np.isfinite(tn) | (tn <= a) | (tn >= c)
        t = np.where(bad, 0.5 * (a + c), tn)
    for _ in range(MAX_BISECT):
        fb = bval(t)
        if np.max(np.abs(fb)) < tol:
            return t
        neg = fb < 0
        a = np.where(neg, t, a)
        c = np.where(neg, c, t)
        t = 0.5 * (a + c)
    return t


def enforce_boundary(mesh, field, alpha, sigma, bc_tol=BC_TOL):
    """Return a copy of ``field`` whose boundary values satisfy b = 0.

    Interior values are untouched. The ring is solved by damped Newton on the
    coupled discrete system; if that stalls, per-node bracketed solves are
    swept over the ring until the discrete residual is below ``bc_tol``.
    """
    _check_oblique(alpha, sigma)
    f = np.array(field, dtype=float)
    k, Dx, Dy, Dxk, Dyk = _ring_system(mesh)
    z, N = mesh.bz, mesh.bN

    def resid(ff):
        p = np.stack([Dx @ ff, Dy @ ff], axis=1)
        return b_residual(z, N, p, alpha), p

    try:
        b, p = resid(f)
    except NotSpacelikeError:
        b, p = None, None
    if b is not None:
        obl = obliqueness(z, N, p, alpha, sigma)
        if np.min(obl) < OBLIQUE_MIN:
            raise ObliquenessError(f"obliqueness {np.min(obl):.3g} below {OBLIQUE_MIN}")
        for _ in range(MAX_NEWTON):
            bmax = np.max(np.abs(b))
            if bmax < bc_tol:
                return f
            G = b_gradient(z, N, p, alpha)
            J = sp.diags(G[:, 0]) @ Dxk + sp.diags(G[:, 1]) @ Dyk
            try:
                d = spla.spsolve(J.tocsc(), -b)
            except RuntimeError:
                break
            if not np.all(np.isfinite(d)):
                break
            lam, ok = 1.0, False
            while lam > 1e-4:
                trial = f.copy()
                trial[k] += lam * d
                try:
                    bt, pt = resid(trial)
                except NotSpacelikeError:
                    lam *= 0.5
                    continue
                if np.max(np.abs(bt)) < (1.0 - 1e-4 * lam) * bmax:
                    ok = True
                    break
                lam *= 0.5
            if not ok:
                break
            f, b, p = trial, bt, pt
        else:
            if np.max(np.abs(b)) < bc_tol:
                return f

    # fallback: nonlinear Jacobi sweeps with per-node bracketed solves
    wkk = np.stack([Dxk.diagonal(), Dyk.diagonal()], axis=1)
    for _ in range(MAX_NEWTON * 4):
        p_full = np.stack([Dx @ f, Dy @ f], axis=1)
        p0 = p_full - wkk * f[k][:, None]
        tk = _scalar_solve(z, N, p0, wkk, alpha, f[k], 0.1 * bc_tol)
        f[k] = tk
        try:
            b, _ = resid(f)
        except NotSpacelikeError:
            continue
        if np.max(np.abs(b)) < bc_tol:
            return f
    raise BoundarySolveError(f"capillary projection did not reach |b| < {bc_tol:g}")
