"""Time integration of the flow in cone coordinates.

The state is rho_tilde = rho - tau / 2 on the mesh nodes together with the
rescaled time tau = log(1 + t). Interior nodes follow

    rescaled:  rho_tilde_tau = e^{-2 rho_tilde} a^{ij} (D_ij rho_tilde - D_i rho_tilde D_j rho_tilde) - 1/2
    physical:  rho_t = e^{-2 rho} a^{ij} (D_ij rho - D_i rho D_j rho) = H / S

with a = e^{2 rho} g^{-1}. Boundary nodes are set by solving b(xi, D rho) = 0
after every stage.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .capillary import (
    BC_TOL,
    b_gradient,
    b_residual,
    enforce_boundary,
    obliqueness,
)
from .errors import (
    BoundarySolveError,
    ConfigError,
    InitialDataRejected,
    NotSpacelikeError,
    ObliquenessError,
    StepFailure,
)
from .geometry import frame_from_field, hyperboloid_field, mean_curvature

MODES = ("rescaled", "physical")
SCHEMES = ("imex", "explicit-rk2")


@dataclass(frozen=True)
class FlowConfig:
    alpha: float
    mode: str = "rescaled"
    tau_end: float = 20.0
    cfl: float = 0.4
    scheme: str = "imex"
    dt: float = 0.05
    bc_tol: float = BC_TOL
    stat_tol: float = 1e-7
    snapshot_every: int = 0
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"flow.mode must be one of {MODES}, got {self.mode!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"flow.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.tau_end > 0:
            raise ConfigError("flow.tau_end must be positive")
        if not 0 < self.cfl:
            raise ConfigError("flow.cfl must be positive")
        if not self.dt > 0:
            raise ConfigError("flow.dt must be positive")


@dataclass(frozen=True, eq=False)
class GraphField:
    rho_tilde: np.ndarray
    tau: float = 0.0
    step_count: int = 0

    @property
    def t(self):
        return float(np.expm1(self.tau))

    @property
    def rho(self):
        return self.rho_tilde + 0.5 * self.tau


def _interior(mesh):
    mask = np.ones(mesh.n_nodes, dtype=bool)
    mask[mesh.boundary_index] = False
    return mask


def _speed(frame, mode):
    """e^{-2w} a:(D^2 w - Dw Dw) with w = rho_tilde (rescaled) or rho (physical)."""
    B = frame.D2rho - frame.Drho[:, :, None] * frame.Drho[:, None, :]
    aB = np.einsum("nij,nij->n", frame.a, B)
    w = frame.rho_tilde if mode == "rescaled" else frame.rho
    return np.exp(-2.0 * w) * aB


def rhs_rescaled(mesh, rho_tilde, alpha=None, tau=0.0):
    """rho_tilde_tau at every node; only interior entries drive the flow.

    ``alpha`` is accepted for interface symmetry; boundary values are set by
    the capillary projection, not by this right-hand side.
    """
    frame = frame_from_field(mesh, rho_tilde, tau)
    return _speed(frame, "rescaled") - 0.5


def rhs_physical(mesh, rho):
    """rho_t = H / S at every node, written in the rho form."""
    frame = frame_from_field(mesh, rho, 0.0)
    if np.any(~(frame.S > 0)):
        raise NotSpacelikeError("support function not positive (graph lost)", np.flatnonzero(~(frame.S > 0)))
    return _speed(frame, "physical")


def geometric_rescaled_speed(frame):
    """(1 + t) H / S - 1/2 from the u-based mean curvature formula."""
    H = mean_curvature(frame)
    return np.expm1(frame.tau) * H / frame.S + H / frame.S - 0.5


def _failure(msg, mesh, f, tau, step, exc=None):
    report = {"tau": tau, "step": step, "rho_tilde": np.array(f, copy=True)}
    if isinstance(exc, NotSpacelikeError):
        report["nodes"] = np.asarray(exc.nodes)
        report["xi"] = mesh.xi[np.asarray(exc.nodes, dtype=int)] if np.size(exc.nodes) else None
    elif f is not None:
        bad = np.flatnonzero(~np.isfinite(f))
        report["nodes"] = bad
    return StepFailure(msg, report)


def explicit_dt(mesh, frame, mode, cfl):
    """cfl * h_min^2 / (2 max eigenvalue of e^{-2w} a)."""
    w = frame.rho_tilde if mode == "rescaled" else frame.rho
    ev = np.linalg.eigvalsh(frame.a)[:, -1] * np.exp(-2.0 * w)
    return cfl * mesh.h_min ** 2 / (2.0 * float(np.max(ev)))


class FlowStepper:
    """Advances a GraphField by one step of the configured scheme."""

    def __init__(self, mesh, config, sigma):
        self.mesh = mesh
        self.config = config
        self.sigma = int(sigma)
        self.mask = _interior(mesh)
        self.ops = mesh.ops
        self.bidx = mesh.boundary_index
        k = self.bidx
        self._Dxb = mesh.ops["dx"][k]
        self._Dyb = mesh.ops["dy"][k]
        self.offset = 0.5 if config.mode == "rescaled" else 0.0

    # working variable w: rho_tilde (rescaled) or rho (physical)
    def _w(self, state):
        return state.rho_tilde if self.config.mode == "rescaled" else state.rho

    def _state(self, w, time, step):
        if self.config.mode == "rescaled":
            return GraphField(w, time, step)
        tau = float(np.log1p(time))
        return GraphField(w - 0.5 * tau, tau, step)

    def _time(self, state):
        return state.tau if self.config.mode == "rescaled" else state.t

    def _frame_w(self, w):
        # geometry of w itself: with tau = 0 the frame's rho and rho_tilde both equal w
        return frame_from_field(self.mesh, w, 0.0)

    def _rhs(self, w):
        fr = self._frame_w(w)
        return _speed(fr, "rescaled") - self.offset, fr

    def _project(self, w):
        return enforce_boundary(self.mesh, w, self.config.alpha, self.sigma, self.config.bc_tol)

    def step_size(self, state):
        if self.config.scheme == "imex":
            return self.config.dt
        fr = self._frame_w(self._w(state))
        return explicit_dt(self.mesh, fr, "rescaled", self.config.cfl)

    def step(self, state, dt=None):
        w = self._w(state)
        time = self._time(state)
        if dt is None:
            dt = self.step_size(state)
        try:
            if self.config.scheme == "imex":
                wn = self._imex(w, dt)
            else:
                wn = self._heun(w, dt)
            if not np.all(np.isfinite(wn)):
                raise NotSpacelikeError("non-finite values", np.flatnonzero(~np.isfinite(wn)))
            fr = self._frame_w(wn)
            if np.any(~(fr.S > 0)):
                raise NotSpacelikeError("support function not positive", np.flatnonzero(~(fr.S > 0)))
        except (NotSpacelikeError, BoundarySolveError, FloatingPointError) as exc:
            if isinstance(exc, ObliquenessError):
                raise
            raise _failure(
                f"step {state.step_count + 1} failed at tau = {state.tau:.6g}: {exc}",
                self.mesh,
                w,
                state.tau,
                state.step_count,
                exc,
            ) from exc
        return self._state(wn, time + dt, state.step_count + 1)

    def _heun(self, w, dt):
        m = self.mask
        with np.errstate(all="ignore"):
            r0, _ = self._rhs(w)
            w1 = w.copy()
            w1[m] += dt * r0[m]
            w1 = self._project(w1)
            r1, _ = self._rhs(w1)
            w2 = w.copy()
            w2[m] += 0.5 * dt * (r0[m] + r1[m])
        return self._project(w2)

    def _imex(self, w, dt):
        """Linearly implicit Euler with coefficients lagged at the old state."""
        fr = self._frame_w(w)
        R = _speed(fr, "rescaled") - self.offset
        C = np.exp(-2.0 * (fr.rho_tilde))[:, None, None] * fr.a
        m = self.mask.astype(float)
        CD = np.einsum("nij,nj->ni", C, fr.Drho)
        ops = self.ops
        L = (
            sp.diags(m * C[:, 0, 0]) @ ops["dxx"]
            + sp.diags(m * 2.0 * C[:, 0, 1]) @ ops["dxy"]
            + sp.diags(m * C[:, 1, 1]) @ ops["dyy"]
            - sp.diags(m * 2.0 * CD[:, 0]) @ ops["dx"]
            - sp.diags(m * 2.0 * CD[:, 1]) @ ops["dy"]
            - sp.diags(m * 2.0 * (R + self.offset))
        )
        k = self.bidx
        p = fr.Drho[k]
        G = b_gradient(self.mesh.bz, self.mesh.bN, p, self.config.alpha)
        bres = b_residual(self.mesh.bz, self.mesh.bN, p, self.config.alpha)
        n = self.mesh.n_nodes
        Pb = sp.csr_matrix((np.ones(k.size), (k, np.arange(k.size))), shape=(n, k.size))
        Bm = Pb @ (sp.diags(G[:, 0]) @ self._Dxb + sp.diags(G[:, 1]) @ self._Dyb)
        A = (sp.diags(m) - dt * L + Bm).tocsc()
        rhs = m * dt * R
        rhs[k] = -bres
        delta = spla.splu(A).solve(rhs)
        return self._project(w + delta)


def step(mesh, state, config, sigma, stepper=None):
    """One step of the configured scheme; raises StepFailure on loss of admissibility."""
    stepper = stepper or FlowStepper(mesh, config, sigma)
    return stepper.step(state)


# ---------------------------------------------------------------- initial data


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.checks.values())

    def failures(self):
        return [k for k, v in self.checks.items() if not v]

    def summary(self):
        lines = []
        for k, v in self.checks.items():
            d = self.details.get(k, "")
            lines.append(f"{k}: {'ok' if v else 'FAILS'}{(' (' + d + ')') if d else ''}")
        return "\n".join(lines)


def validate_state(mesh, domain, rho_tilde, alpha, bc_tol=BC_TOL, tau=0.0):
    """Order-0 admissibility of data: spacelike, H > 0, S > 0, b = 0, oblique."""
    rep = ValidationReport()
    sigma = domain.sigma
    rep.checks["finite"] = bool(np.all(np.isfinite(rho_tilde)))
    if sigma < 0:
        rep.checks["alpha>1 (Riemannian wall)"] = bool(alpha > 1.0)
        rep.details["alpha>1 (Riemannian wall)"] = f"alpha = {alpha:.6g}"
    if not rep.checks["finite"]:
        return rep
    try:
        fr = frame_from_field(mesh, rho_tilde, tau)
        rep.checks["spacelike"] = True
        rep.details["spacelike"] = f"min margin {fr.spacelike_margin.min():.6g}"
    except NotSpacelikeError as exc:
        rep.checks["spacelike"] = False
        rep.details["spacelike"] = str(exc)
        return rep
    rep.checks["H>0"] = bool(np.min(fr.H) > 0)
    rep.details["H>0"] = f"min H = {fr.H.min():.6g}"
    rep.checks["S>0"] = bool(np.min(fr.S) > 0)
    rep.details["S>0"] = f"min S = {fr.S.min():.6g}"
    k = mesh.boundary_index
    b = b_residual(mesh.bz, mesh.bN, fr.Drho[k], alpha)
    rep.checks["b=0"] = bool(np.max(np.abs(b)) < bc_tol)
    rep.details["b=0"] = f"max |b| = {np.max(np.abs(b)):.3g}"
    obl = obliqueness(mesh.bz, mesh.bN, fr.Drho[k], alpha, sigma)
    rep.checks["oblique"] = bool(np.min(obl) > 1e-8)
    rep.details["oblique"] = f"min obliqueness {obl.min():.6g}"
    return rep


def bump(mesh, asym=0.0):
    """(1 - r^2)^2 (1 + asym * xi_1 / max|z|): value and slope vanish at r = 1."""
    r = mesh.radius_of_node()
    zmax = float(np.max(np.linalg.norm(mesh.bz, axis=1)))
    return (1.0 - r * r) ** 2 * (1.0 + asym * mesh.xi[:, 0] / zmax)


def expander_base(mesh, domain, alpha, tol=1e-10):
    """rho_tilde of a known expander on this domain, or None.

    alpha = 0 with the domain inside the unit disc gives the c = 2 hyperboloid;
    round cones use the radial shooting profile.
    """
    zmax = float(np.max(np.linalg.norm(mesh.bz, axis=1)))
    if alpha == 0 and zmax < 1:
        return hyperboloid_field(mesh.xi, 2.0)
    if domain.is_round:
        from .expander import radial_expander_ode

        prof = radial_expander_ode(domain.radius, alpha, domain.sigma, tol=tol)
        return prof.on_mesh(mesh)
    return None


def radial_profile_data(mesh, domain, alpha, n_beta=81):
    """rho = log A + beta r^2 / 2 + gamma r^4 / 4 in r = |xi| / R.

    b = 0 at r = 1 fixes beta + gamma through the boundary slope; beta is
    picked on a grid to maximize min H / S, and A so that mean H / S = 1/2.
    """
    if not domain.is_round:
        raise ConfigError("init.family = radial-profile needs a round cone")
    from scipy.optimize import brentq

    R = domain.radius
    K = np.sqrt(abs(R * R - 1.0))

    def bc(P):
        W2 = (1 + R * P) ** 2 - P * P
        return (P * (1 - R * R) - R) / (K * np.sqrt(W2)) + alpha

    lo, hi = _slope_interval(R)
    grid = np.linspace(lo, hi, 4001)[1:-1]
    vals = np.array([bc(P) for P in grid])
    sign = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if sign.size == 0:
        raise InitialDataRejected(
            f"no radial boundary slope satisfies b = 0 for alpha = {alpha}, R = {R}",
            ValidationReport({"b=0": False}),
        )
    i = sign[0]
    P = brentq(bc, grid[i], grid[i + 1], xtol=1e-15)
    total = R * P  # beta + gamma
    r = mesh.radius_of_node()
    best = None
    for beta in np.linspace(-4.0, 4.0 + abs(total), n_beta):
        gamma = total - beta
        rho = beta * r * r / 2 + gamma * r ** 4 / 4
        try:
            fr = frame_from_field(mesh, rho, 0.0)
        except NotSpacelikeError:
            continue
        hs = fr.H / fr.S
        score = hs.min()
        if best is None or score > best[0]:
            best = (score, rho, hs)
    if best is None:
        raise InitialDataRejected("radial-profile family is nowhere spacelike", ValidationReport({"spacelike": False}))
    _, rho, hs = best
    # H/S scales like u^-2: choose A so that mean H/S = 1/2 when positive
    m = float(np.mean(hs))
    shift = 0.5 * np.log(2.0 * m) if m > 0 else 0.0
    return rho + shift


def _slope_interval(R):
    """Boundary radial slopes P with (1 + R P)^2 - P^2 > 0 and 1 + R P > 0."""
    if R < 1:
        return -1.0 / (1.0 + R), 1.0 / (1.0 - R)
    return -1.0 / (1.0 + R), 50.0


def make_initial_data(mesh, domain, alpha, family, epsilon=0.0, asym=0.0, path=None, bc_tol=BC_TOL):
    """Build, project and validate initial data.

    Returns ``(GraphField, ValidationReport)``; raises InitialDataRejected with
    the report when any check fails.
    """
    sigma = domain.sigma
    if sigma < 0 and not alpha > 1.0:
        if alpha * alpha + sigma <= 1e-8:
            raise ObliquenessError(
                f"alpha = {alpha}: boundary condition is not oblique on a Riemannian cone wall"
            )
        rep = ValidationReport({"alpha>1 (Riemannian wall)": False}, {"alpha>1 (Riemannian wall)": f"alpha = {alpha}"})
        raise InitialDataRejected("initial data rejected: alpha>1 (Riemannian wall) fails", rep)
    if family == "perturbed-expander":
        base = expander_base(mesh, domain, alpha)
        if base is None:
            raise ConfigError("no expander available for this domain and alpha (use a round cone or alpha = 0)")
        rho = base + epsilon * bump(mesh, asym)
    elif family == "radial-profile":
        rho = radial_profile_data(mesh, domain, alpha)
    elif family == "flat":
        rho = np.zeros(mesh.n_nodes)
    elif family == "file":
        from .io import read_snapshot

        snap = read_snapshot(path, mesh)
        rho = snap.rho_tilde
    else:
        raise ConfigError(f"unknown init.family {family!r}")
    try:
        rho = enforce_boundary(mesh, rho, alpha, sigma, bc_tol)
    except BoundarySolveError as exc:
        rep = ValidationReport({"b=0": False}, {"b=0": str(exc)})
        raise InitialDataRejected(f"initial data rejected: b=0 fails ({exc})", rep) from exc
    except NotSpacelikeError as exc:
        rep = ValidationReport({"spacelike": False}, {"spacelike": str(exc)})
        raise InitialDataRejected("initial data rejected: spacelike fails", rep) from exc
    rep = validate_state(mesh, domain, rho, alpha, bc_tol)
    if not rep.ok:
        raise InitialDataRejected(
            "initial data rejected: " + ", ".join(f"{k} fails" for k in rep.failures()), rep
        )
    return GraphField(rho, 0.0, 0), rep


# ---------------------------------------------------------------- driver


@dataclass
class RunResult:
    state: GraphField
    reason: str
    steps: int
    residual: float
    series: object = None
    snapshots: list = field(default_factory=list)
    failure: StepFailure = None


def interior_speed_sup(mesh, state):
    """sup over interior nodes of |rho_tilde_tau|."""
    r = rhs_rescaled(mesh, state.rho_tilde, tau=state.tau)
    return float(np.max(np.abs(r[_interior(mesh)])))


def run(mesh, domain, config, initial, series=None, on_snapshot=None, on_record=None):
    """Integrate to tau_end or stationarity.

    ``series`` (a MonitorSeries) receives a record for the initial state and
    after every accepted step. ``on_snapshot(state)`` is called at the
    configured cadence, including the initial and final states.
    """
    stepper = FlowStepper(mesh, config, domain.sigma)
    state = initial
    snaps = []

    def snap(s):
        snaps.append(s)
        if on_snapshot is not None:
            on_snapshot(s)

    def record(s):
        if series is not None:
            rec = series.record(s)
            if on_record is not None:
                on_record(s, rec)

    record(state)
    every = config.snapshot_every
    if every:
        snap(state)
    if config.mode == "physical":
        t_end = float(np.expm1(config.tau_end))
    reason = "tau_end"
    res = np.inf
    failure = None
    while state.step_count < config.max_steps:
        if config.mode == "rescaled":
            res = interior_speed_sup(mesh, state)
            if res < config.stat_tol:
                reason = "stationary"
                break
            remaining = config.tau_end - state.tau
        else:
            remaining = t_end - state.t
        if remaining <= 1e-12 * max(1.0, config.tau_end):
            break
        dt = min(stepper.step_size(state), remaining)
        try:
            state = stepper.step(state, dt)
        except StepFailure as exc:
            reason, failure = "step-failure", exc
            break
        record(state)
        if every and state.step_count % every == 0:
            snap(state)
    else:
        reason = "max_steps"
    if config.mode == "rescaled" and reason != "step-failure":
        res = interior_speed_sup(mesh, state)
    if every and (not snaps or snaps[-1] is not state):
        snap(state)
    return RunResult(state, reason, state.step_count, res, series, snaps, failure)


def with_overrides(config, **kw):
    return replace(config, **kw)
