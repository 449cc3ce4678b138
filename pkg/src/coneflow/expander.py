"""Self-similarly expanding solutions, H_tilde = S_tilde / 2 with b = 0.

Two independent routes: parabolic relaxation of the rescaled flow on the 2D
mesh, and for round cones a shooting solve of the rotationally symmetric
reduction. Writing rho(s) with s = |xi|, P = rho', Delta = (1 + s P)^2 - P^2,
the scaled inverse metric has eigenvalue 1/Delta along xi and 1 across it, so
the stationary equation becomes

    rho'' = P^2 + Delta (e^{2 rho} / 2 - P / s),   rho'(0) = 0,

with rho''(0) = e^{2 rho(0)} / 4, and the boundary condition at s = R is

    (P (1 - R^2) - R) / (sqrt|R^2 - 1| sqrt((1 + R P)^2 - P^2)) + alpha = 0.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import bisect

from .capillary import b_residual
from .errors import ConvergenceTimeout, DataError
from .flow import FlowConfig, GraphField, interior_speed_sup, run
from .geometry import frame_from_field

EXPANDER_TOL = 1e-6
TAU_MAX = 30.0


@dataclass(frozen=True, eq=False)
class ExpanderProfile:
    rho_tilde_inf: np.ndarray
    residual_sup: float
    bc_residual_sup: float
    alpha: float
    sigma: int
    tau: float
    steps: int
    reason: str


def stationary_residual(mesh, rho_tilde):
    """sup over interior nodes of |H_tilde - S_tilde / 2| for a rescaled state at tau = 0."""
    fr = frame_from_field(mesh, rho_tilde, 0.0)
    mask = np.ones(mesh.n_nodes, dtype=bool)
    mask[mesh.boundary_index] = False
    return float(np.max(np.abs(fr.H - 0.5 * fr.S)[mask]))


def relax_to_expander(mesh, domain, config, initial, tau_max=TAU_MAX, expander_tol=EXPANDER_TOL):
    """Run the rescaled flow from ``initial`` until it is stationary."""
    cfg = FlowConfig(
        alpha=config.alpha,
        mode="rescaled",
        tau_end=min(tau_max, config.tau_end) if config.tau_end else tau_max,
        cfl=config.cfl,
        scheme=config.scheme,
        dt=config.dt,
        bc_tol=config.bc_tol,
        stat_tol=config.stat_tol,
        snapshot_every=0,
    )
    if interior_speed_sup(mesh, initial) < cfg.stat_tol:
        res = run(mesh, domain, cfg, initial)
    else:
        res = run(mesh, domain, cfg, GraphField(initial.rho_tilde, 0.0, 0))
    if res.reason == "step-failure":
        raise res.failure
    f = res.state.rho_tilde
    resid = stationary_residual(mesh, f)
    k = mesh.boundary_index
    fr = frame_from_field(mesh, f, 0.0)
    bres = float(np.max(np.abs(b_residual(mesh.bz, mesh.bN, fr.Drho[k], config.alpha))))
    prof = ExpanderProfile(f, resid, bres, config.alpha, domain.sigma, res.state.tau, res.steps, res.reason)
    if res.reason != "stationary" or resid >= expander_tol:
        raise ConvergenceTimeout(
            f"no stationary state by tau = {res.state.tau:.3g} "
            f"(sup |rho_tilde_tau| = {res.residual:.3g}, sup |H - S/2| = {resid:.3g})",
            resid,
        )
    return prof


# ------------------------------------------------------------- radial oracle


@dataclass(frozen=True, eq=False)
class RadialProfile:
    R: float
    alpha: float
    sigma: int
    rho0: float
    s0: float
    sol: object
    bc_residual: float

    @property
    def f0(self):
        return float(np.exp(self.rho0))

    def rho(self, s):
        s = np.asarray(s, dtype=float)
        k = 0.25 * np.exp(2 * self.rho0)
        out = np.empty_like(s)
        small = s < self.s0
        out[small] = self.rho0 + 0.5 * k * s[small] ** 2
        if np.any(~small):
            out[~small] = self.sol(s[~small])[0]
        return out

    def f(self, r):
        """u = f on the mesh radial coordinate r in [0, 1]."""
        return np.exp(self.rho(np.asarray(r) * self.R))

    def on_mesh(self, mesh):
        return self.rho(np.linalg.norm(mesh.xi, axis=1))


class ShootingFailure(DataError):
    pass


def _ode(s, y):
    rho, P = y
    D = (1 + s * P) ** 2 - P * P
    return [P, P * P + D * (0.5 * np.exp(2 * rho) - P / s)]


def _shoot(rho0, R, rtol):
    k = 0.25 * np.exp(2 * rho0)
    s0 = 1e-4 * R
    # series start; the next term is O(s^4)
    y0 = [rho0 + 0.5 * k * s0 * s0, k * s0]

    def lost(s, y):
        return (1 + s * y[1]) ** 2 - y[1] ** 2 - 1e-12

    lost.terminal = True

    def steep(s, y):
        return 1e4 - abs(y[1])

    steep.terminal = True
    sol = solve_ivp(
        _ode, (s0, R), y0, method="DOP853", rtol=rtol, atol=rtol * 1e-2,
        dense_output=True, events=(lost, steep),
    )
    return sol, s0


def _bc(R, P, alpha):
    K = np.sqrt(abs(R * R - 1.0))
    W2 = (1 + R * P) ** 2 - P * P
    return (P * (1 - R * R) - R) / (K * np.sqrt(W2)) + alpha


def radial_expander_ode(R, alpha, sigma=None, tol=1e-10):
    """Rotationally symmetric expander on the round cone of radius R by shooting on rho(0)."""
    if abs(R * R - 1.0) < 1e-12:
        raise DataError("R = 1 gives a null cone wall")
    if sigma is None:
        sigma = 1 if R < 1 else -1
    rtol = max(1e-13, min(1e-8, tol * 1e-2))

    def g(rho0):
        sol, _ = _shoot(rho0, R, rtol)
        if sol.status == 1 or sol.t[-1] < R * (1 - 1e-14):
            return 1.0  # steepened before reaching the wall: overshoot
        return _bc(R, sol.y[1, -1], alpha)

    # b -> alpha - R / K as rho0 -> -infinity (flat), and overshoots as rho0 grows
    flat = alpha - R / np.sqrt(abs(R * R - 1.0))
    if flat >= 0:
        raise ShootingFailure(
            f"no rotationally symmetric expander: alpha = {alpha} is not below R / sqrt|R^2 - 1| = "
            f"{R / np.sqrt(abs(R * R - 1.0)):.6g}, and mean convexity forces rho' > 0"
        )
    lo, hi = -1.0, 1.0
    for _ in range(60):
        if g(lo) < 0:
            break
        lo -= 2.0
    else:
        raise ShootingFailure("could not bracket the shooting parameter from below")
    for _ in range(60):
        if g(hi) > 0:
            break
        hi += 1.0
    else:
        raise ShootingFailure("could not bracket the shooting parameter from above")
    rho0 = bisect(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    sol, s0 = _shoot(rho0, R, rtol)
    if sol.status == 1:
        raise ShootingFailure("shooting solution lost spacelikeness")
    bres = abs(_bc(R, sol.y[1, -1], alpha))
    if bres > tol:
        raise ShootingFailure(f"boundary residual {bres:.3g} above tolerance {tol:.3g}")
    return RadialProfile(float(R), float(alpha), int(sigma), float(rho0), s0, sol.sol, float(bres))


def angular_asymmetry(mesh, values):
    """Largest spread of node values over any ring."""
    g = mesh.to_grid(np.asarray(values, dtype=float))
    return float(np.max(g.max(axis=1) - g.min(axis=1)))


def compare_oracle(a, b, mesh=None):
    """sup |a - b| over mesh nodes and the ring asymmetry of ``a``.

    Each argument is a node field (needs ``mesh``) or a RadialProfile; two
    profiles are compared on a uniform radial grid.
    """
    if mesh is None:
        if not (isinstance(a, RadialProfile) and isinstance(b, RadialProfile)):
            raise ValueError("a mesh is needed to compare node fields")
        r = np.linspace(0, 1, 2001)
        return float(np.max(np.abs(a.rho(r * a.R) - b.rho(r * b.R)))), 0.0
    va = a.on_mesh(mesh) if isinstance(a, RadialProfile) else np.asarray(a, dtype=float)
    vb = b.on_mesh(mesh) if isinstance(b, RadialProfile) else np.asarray(b, dtype=float)
    return float(np.max(np.abs(va - vb))), angular_asymmetry(mesh, va)
