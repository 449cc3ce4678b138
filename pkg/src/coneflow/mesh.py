"""Star-shaped mapped grid over the generating domain.

Nodes sit at xi(r, s) = r * z(s) for r in [0, 1] and boundary arc length s.
The r = 0 row collapses to one shared center node, so a node field is a flat
vector of length ``1 + (nr - 1) * ns``: index 0 is the center and ring ``i``
(1 <= i <= nr - 1), angle ``j`` lives at ``1 + (i - 1) * ns + j``.

Cartesian derivatives are sparse linear operators. Away from the center they
are the chain rule applied to second-order differences in (r, s), using
differences of the node coordinates for the map derivatives, followed by a
minimum-norm adjustment of each stencil so that every operator is exact on
quadratic polynomials. The boundary ring uses one-sided radial differences,
second order for the first derivative and third order for the second. The
center node uses a quadratic least-squares fit over
the two innermost rings.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import MeshError

QUALITY_MIN = 1e-3


def _quad_basis(dx, dy):
    one = np.ones_like(dx)
    return np.stack([one, dx, dy, dx * dx, dx * dy, dy * dy], axis=-1)


# target functionals on the basis [1, X, Y, X^2, XY, Y^2] (unit scale)
_TARGETS = {
    "dx": np.array([0, 1, 0, 0, 0, 0.0]),
    "dy": np.array([0, 0, 1, 0, 0, 0.0]),
    "dxx": np.array([0, 0, 0, 2, 0, 0.0]),
    "dxy": np.array([0, 0, 0, 0, 1, 0.0]),
    "dyy": np.array([0, 0, 0, 0, 0, 2.0]),
}
_ORDER = {"dx": 1, "dy": 1, "dxx": 2, "dxy": 2, "dyy": 2}


@dataclass(frozen=True, eq=False)
class StarMesh:
    nr: int
    ns: int
    r: np.ndarray
    s: np.ndarray
    xi: np.ndarray
    jac_det: np.ndarray
    boundary_index: np.ndarray
    interior_index: np.ndarray
    bN: np.ndarray
    bkappa: np.ndarray
    bz: np.ndarray
    bzdot: np.ndarray
    h: float
    h_min: float
    ops: dict = field(repr=False)

    @property
    def n_nodes(self):
        return self.xi.shape[0]

    def node(self, i, j):
        return 0 if i == 0 else 1 + (i - 1) * self.ns + (j % self.ns)

    def to_grid(self, f):
        """Flat node field -> (nr, ns) array, center replicated on row 0."""
        f = np.asarray(f)
        out = np.empty((self.nr, self.ns) + f.shape[1:], dtype=f.dtype)
        out[0] = f[0]
        out[1:] = f[1:].reshape((self.nr - 1, self.ns) + f.shape[1:])
        return out

    def from_grid(self, g):
        g = np.asarray(g, dtype=float)
        if g.shape[:2] != (self.nr, self.ns):
            raise MeshError(f"grid shape {g.shape} does not match mesh ({self.nr}, {self.ns})")
        return np.concatenate([g[0, :1], g[1:].reshape(-1)])

    def radius_of_node(self):
        return np.concatenate([[0.0], np.repeat(self.r[1:], self.ns)])


def build_mesh(domain, nr, ns):
    """Tensor grid in (r, s) over the domain; needs ``nr >= 8`` and ``ns >= 16``."""
    if nr < 8 or ns < 16:
        raise ValueError(f"mesh too coarse: nr={nr} (>= 8), ns={ns} (>= 16)")
    curve = domain.curve
    if curve.samples_count != ns:
        # resample the boundary at the mesh's angular resolution
        from .domain import build_from_radial_profile, build_round_cone

        if domain.is_round:
            curve = build_round_cone(domain.radius, ns).curve
        else:
            zz = curve.z
            th = np.mod(np.arctan2(zz[:, 1], zz[:, 0]), 2 * np.pi)
            order = np.argsort(th)
            curve = build_from_radial_profile(
                th[order], np.linalg.norm(zz, axis=1)[order], ns
            ).curve
    z = curve.z
    ds = curve.length / ns
    dr = 1.0 / (nr - 1)
    r = np.arange(nr) * dr
    s = curve.s

    zp, zm = np.roll(z, -1, axis=0), np.roll(z, 1, axis=0)
    Dz = (zp - zm) / (2 * ds)
    DDz = (zp - 2 * z + zm) / ds ** 2

    n = 1 + (nr - 1) * ns
    xi = np.zeros((n, 2))
    xi[1:] = (r[1:, None, None] * z[None, :, :]).reshape(-1, 2)

    det = np.zeros(n)
    det[1:] = (r[1:, None] * (z[:, 0] * Dz[:, 1] - z[:, 1] * Dz[:, 0])[None, :]).reshape(-1)
    scale = np.zeros(n)
    scale[1:] = (
        r[1:, None] * (np.linalg.norm(z, axis=1) * np.linalg.norm(Dz, axis=1))[None, :]
    ).reshape(-1)
    quality = det[1:] / scale[1:]
    if np.any(quality < QUALITY_MIN):
        raise MeshError(f"mesh quality {quality.min():.3g} below {QUALITY_MIN}")

    def idx(i, j):
        i = np.asarray(i)
        j = np.mod(np.asarray(j), ns)
        return np.where(i == 0, 0, 1 + (i - 1) * ns + j)

    rows, cols, vals = {k: [] for k in _TARGETS}, {k: [] for k in _TARGETS}, {
        k: [] for k in _TARGETS
    }

    def add_group(ring_ids, ring_off, wr, wrr, wr4):
        """Assemble stencils for all nodes on the given rings.

        ``ring_off`` lists ring offsets of the stencil rows; ``wr``/``wrr`` are
        the matching radial weights (already divided by dr powers). ``wr4`` is
        a higher-order radial first derivative used for the mixed (r, s) term and
        for the gradient inside the Hessian; both get divided by r, so their
        truncation error would otherwise grow like 1/r near the center.
        """
        I, J = np.meshgrid(ring_ids, np.arange(ns), indexing="ij")
        I, J = I.reshape(-1), J.reshape(-1)
        m = I.size
        nro = len(ring_off)
        aoff = np.array([-1, 0, 1])
        ws = np.array([-0.5, 0.0, 0.5]) / ds
        wss = np.array([1.0, -2.0, 1.0]) / ds ** 2
        # local stencil (nro x 3) flattened, ring-major
        SI = I[:, None, None] + np.asarray(ring_off)[None, :, None]
        SJ = J[:, None, None] + aoff[None, None, :]
        SI = np.broadcast_to(SI, (m, nro, 3)).reshape(m, -1)
        SJ = np.broadcast_to(SJ, (m, nro, 3)).reshape(m, -1)
        gidx = idx(SI, SJ)
        ri = r[I]
        zj, Dzj, DDzj = z[J], Dz[J], DDz[J]

        K = nro * 3
        w_r = np.zeros((m, nro, 3))
        w_r[:, :, 1] = wr
        w_rr = np.zeros((m, nro, 3))
        w_rr[:, :, 1] = wrr
        center_row = list(ring_off).index(0)
        w_s = np.zeros((m, nro, 3))
        w_s[:, center_row, :] = ws
        w_ss = np.zeros((m, nro, 3))
        w_ss[:, center_row, :] = wss
        w_rs = np.asarray(wr4)[None, :, None] * ws[None, None, :] * np.ones((m, 1, 1))
        w_r, w_rr, w_s, w_ss, w_rs = (a.reshape(m, K) for a in (w_r, w_rr, w_s, w_ss, w_rs))

        xi_r = zj
        xi_s = ri[:, None] * Dzj
        xi_ss = ri[:, None] * DDzj
        xi_rs = Dzj
        Jm = np.stack([xi_r, xi_s], axis=2)  # columns are xi_r, xi_s
        Ji = np.linalg.inv(Jm)
        # gradient: Df_k = sum_a Ji[a, k] f_a
        wx = Ji[:, 0, 0, None] * w_r + Ji[:, 1, 0, None] * w_s
        wy = Ji[:, 0, 1, None] * w_r + Ji[:, 1, 1, None] * w_s
        w_r4 = np.zeros((m, nro, 3))
        w_r4[:, :, 1] = wr4
        w_r4 = w_r4.reshape(m, K)
        hx = Ji[:, 0, 0, None] * w_r4 + Ji[:, 1, 0, None] * w_s
        hy = Ji[:, 0, 1, None] * w_r4 + Ji[:, 1, 1, None] * w_s
        G_rr = w_rr
        G_rs = w_rs - (xi_rs[:, 0, None] * hx + xi_rs[:, 1, None] * hy)
        G_ss = w_ss - (xi_ss[:, 0, None] * hx + xi_ss[:, 1, None] * hy)

        def hess(k, l):
            return (
                Ji[:, 0, k, None] * Ji[:, 0, l, None] * G_rr
                + (Ji[:, 0, k, None] * Ji[:, 1, l, None] + Ji[:, 1, k, None] * Ji[:, 0, l, None])
                * G_rs
                + Ji[:, 1, k, None] * Ji[:, 1, l, None] * G_ss
            )

        W = {"dx": wx, "dy": wy, "dxx": hess(0, 0), "dxy": hess(0, 1), "dyy": hess(1, 1)}

        # exactness on quadratics via minimum-norm stencil adjustment
        hl = np.linalg.norm(xi_r, axis=1) * dr
        d = (xi[gidx] - xi[idx(I, J)][:, None, :]) / hl[:, None, None]
        V = _quad_basis(d[..., 0], d[..., 1])  # (m, K, 6)
        VtV = np.einsum("mki,mkj->mij", V, V)
        for key, w in W.items():
            t = _TARGETS[key][None, :] / hl[:, None] ** _ORDER[key]
            resid = t - np.einsum("mki,mk->mi", V, w)
            c = np.linalg.solve(VtV, resid[..., None])[..., 0]
            w = w + np.einsum("mki,mi->mk", V, c)
            rows[key].append(np.repeat(idx(I, J), K))
            cols[key].append(gidx.reshape(-1))
            vals[key].append(w.reshape(-1))

    c1 = np.array([-0.5, 0.0, 0.5]) / dr
    c2 = np.array([1.0, -2.0, 1.0]) / dr ** 2
    z1 = np.zeros(1)
    add_group(
        np.array([1]),
        [-1, 0, 1, 2, 3],
        np.concatenate([c1, z1, z1]),
        np.concatenate([c2, z1, z1]),
        np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12 * dr),
    )
    add_group(
        np.arange(2, nr - 2),
        [-2, -1, 0, 1, 2],
        np.concatenate([z1, c1, z1]),
        np.concatenate([z1, c2, z1]),
        np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12 * dr),
    )
    add_group(
        np.array([nr - 2]),
        [-3, -2, -1, 0, 1],
        np.concatenate([z1, z1, c1]),
        np.concatenate([z1, z1, c2]),
        np.array([-1.0, 6.0, -18.0, 10.0, 3.0]) / (12 * dr),
    )
    # third-order one-sided second difference on the boundary ring
    wb = np.array([0.0, 0.0, 1.0, -4.0, 3.0]) / (2 * dr)
    add_group(
        np.array([nr - 1]),
        [-4, -3, -2, -1, 0],
        wb,
        np.array([11.0, -56.0, 114.0, -104.0, 35.0]) / (12 * dr ** 2),
        wb,
    )

    # center node: quadratic least squares over the two innermost rings
    pts = np.concatenate([[0], idx(np.full(ns, 1), np.arange(ns)), idx(np.full(ns, 2), np.arange(ns))])
    hl0 = dr * float(np.mean(np.linalg.norm(z, axis=1)))
    d = xi[pts] / hl0
    V = _quad_basis(d[:, 0], d[:, 1])
    P = np.linalg.pinv(V)  # (6, npts)
    for key in _TARGETS:
        w = (_TARGETS[key] @ P) / hl0 ** _ORDER[key]
        rows[key].append(np.zeros(pts.size, dtype=int))
        cols[key].append(pts)
        vals[key].append(w)

    ops = {}
    for key in _TARGETS:
        ops[key] = sp.csr_matrix(
            (np.concatenate(vals[key]), (np.concatenate(rows[key]), np.concatenate(cols[key]))),
            shape=(n, n),
        )

    bidx = idx(np.full(ns, nr - 1), np.arange(ns))
    interior = np.setdiff1d(np.arange(n), bidx)
    radial_h = dr * float(np.max(np.linalg.norm(z, axis=1)))
    ang_h = float(np.max(np.linalg.norm(zp - z, axis=1)))
    ring1 = xi[idx(np.full(ns, 1), np.arange(ns))]
    h_min = min(
        dr * float(np.min(np.linalg.norm(z, axis=1))),
        float(np.min(np.linalg.norm(np.roll(ring1, -1, axis=0) - ring1, axis=1))),
    )
    return StarMesh(
        nr=nr,
        ns=ns,
        r=r,
        s=s,
        xi=xi,
        jac_det=det,
        boundary_index=bidx,
        interior_index=interior,
        bN=curve.N,
        bkappa=curve.kappa,
        bz=z,
        bzdot=curve.zdot,
        h=max(radial_h, ang_h),
        h_min=h_min,
        ops=ops,
    )


def grad_cartesian(mesh, f):
    """Per-node Cartesian gradient, shape (n, 2)."""
    f = np.asarray(f, dtype=float)
    if f.shape != (mesh.n_nodes,):
        raise ValueError(f"field has shape {f.shape}, expected ({mesh.n_nodes},)")
    return np.stack([mesh.ops["dx"] @ f, mesh.ops["dy"] @ f], axis=1)


def hess_cartesian(mesh, f):
    """Per-node symmetric Cartesian Hessian, shape (n, 2, 2)."""
    f = np.asarray(f, dtype=float)
    if f.shape != (mesh.n_nodes,):
        raise ValueError(f"field has shape {f.shape}, expected ({mesh.n_nodes},)")
    fxx, fxy, fyy = (mesh.ops[k] @ f for k in ("dxx", "dxy", "dyy"))
    return np.stack([np.stack([fxx, fxy], -1), np.stack([fxy, fyy], -1)], -2)
