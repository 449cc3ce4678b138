"""Per-slice evaluation of the a priori estimates along a run.

Every record is a pure function of one state (rho_tilde, tau) and of the
band constants frozen from the initial state, so recomputing a record from a
stored snapshot reproduces it exactly.

Bands are compared in rescaled form. With physical S / H = (1 + t) S~ / H~,
the speed band 2(c + t) <= S / H <= 2(C + t) reads

    2 (c + t) / (1 + t) <= S~ / H~ <= 2 (C + t) / (1 + t),

and integrating its consequence for rho_t in time gives the pointwise band

    (1/2) log((C + t) / (C (1 + t))) <= rho_tilde - rho_tilde_0 <= (1/2) log((c + t) / (c (1 + t))).

Verdict bits (set means the check failed beyond slack):

    0  min H > -slack                  8  max v <= max(sup v_0, C_wall)   (sigma = -1)
    1  min S > -slack                  9  sup |b| <= BC_CHECK
    2  S~/H~ above the lower band
    3  S~/H~ below the upper band      not applicable markers:
    4  rho_tilde inside its band       16 H_0 > 0 fails, bits 2-5 not checked
    5  |x|^2/(1+t) inside its band     17 sigma = +1, bits 6-8 not checked
    6  boundary v <= C(alpha, mu)      18 state not admissible, nothing checked
    7  min S/(v u) >= graph0 / 2       19 sigma = -1, support ratio not checked
"""

from dataclasses import dataclass, field

import numpy as np

from .capillary import b_residual, boundary_frame, hat_h_direct, hat_h_z_nu
from .errors import NotSpacelikeError
from .geometry import frame_from_field

COLUMNS = (
    "tau", "t", "minH", "minS", "maxV", "shMin", "shMax", "shLoBand", "shHiBand",
    "rhoMin", "rhoMax", "graphicality", "supportRatio", "xnormLo", "xnormHi",
    "phiSup", "bcResidual", "lemma33Res", "lemma34Res", "verdictBits",
)

BIT_NAMES = {
    0: "H>0",
    1: "S>0",
    2: "speed-lo",
    3: "speed-hi",
    4: "rho-band",
    5: "xnorm-band",
    6: "boundary-v",
    7: "graphicality",
    8: "max-v",
    9: "bc-residual",
}
NA_MEAN_CONVEX = 16
NA_LORENTZ = 17
NA_INADMISSIBLE = 18
NA_RIEMANN = 19
FAIL_MASK = (1 << 10) - 1
BC_CHECK = 1e-8


@dataclass(frozen=True)
class MonitorRecord:
    tau: float
    t: float
    minH: float
    minS: float
    maxV: float
    shMin: float
    shMax: float
    shLoBand: float
    shHiBand: float
    rhoMin: float
    rhoMax: float
    graphicality: float
    supportRatio: float
    xnormLo: float
    xnormHi: float
    phiSup: float
    bcResidual: float
    lemma33Res: float
    lemma34Res: float
    verdictBits: int

    @property
    def failed(self):
        return [BIT_NAMES[b] for b in BIT_NAMES if self.verdictBits >> b & 1]

    def row(self):
        return [format(getattr(self, c), ".17g") if c != "verdictBits" else str(self.verdictBits) for c in COLUMNS]

    @classmethod
    def from_row(cls, row):
        vals = {c: float(v) for c, v in zip(COLUMNS, row)}
        vals["verdictBits"] = int(row[-1])
        return cls(**vals)


def wall_v_bound(alpha, mu):
    """sqrt(2 alpha^2 + 2 (2 alpha^2 - 1) <mu, e3>^2 + 2) per boundary node."""
    m3 = mu[..., 2]  # <mu, e3> = -mu_3, only its square enters
    return np.sqrt(2 * alpha * alpha + 2 * (2 * alpha * alpha - 1) * m3 * m3 + 2)


def boundary_identity_residuals(mesh, frame, alpha, sigma):
    """Residuals of the boundary identities for grad_{mu^T} S and grad_{mu^T} v.

    The left sides are Y . D S and Y . D v with mu^T = Y^i x_i, where D S and
    D v follow from the chain rule through D rho and D^2 rho; differencing the
    nodal S and v instead would lose one order at the wall. The right sides
    use the graph h and the wall curvature. Each residual is
    |L - R| / max(|L|, |R|, 1), maximized over boundary nodes.
    """
    k = mesh.boundary_index
    bf = boundary_frame(mesh, frame, alpha, sigma)
    S, v, u = frame.S[k], frame.v[k], frame.u[k]
    p, D2, xi = frame.Drho[k], frame.D2rho[k], mesh.xi[k]
    w = 1.0 + np.einsum("ni,ni->n", xi, p)
    delta = w * w - np.einsum("ni,ni->n", p, p)
    dw = p + np.einsum("nj,nji->ni", xi, D2)
    ddelta = 2.0 * w[:, None] * dw - 2.0 * np.einsum("nj,nji->ni", p, D2)
    DS = S[:, None] * (p - 0.5 * ddelta / delta[:, None])
    Dv = dw / np.sqrt(delta)[:, None] - 0.5 * w[:, None] * ddelta / delta[:, None] ** 1.5
    L33 = np.einsum("ni,ni->n", bf.Y, DS)
    R33 = S * (-sigma * bf.hat_h_nn - alpha * bf.h_mumu)
    L34 = np.einsum("ni,ni->n", bf.Y, Dv)
    hz = hat_h_z_nu(bf.e3_proj, bf, S, alpha, sigma)
    bad = ~np.isfinite(hz)
    if np.any(bad):
        hz[bad] = hat_h_direct(
            bf.e3_proj[bad], bf.nu_sigma[bad], u[bad], mesh.bz[bad], mesh.bzdot[bad], mesh.bN[bad], mesh.bkappa[bad]
        )
    e3mu = -bf.mu[:, 2]
    R34 = hz - (e3mu + alpha * v) * bf.h_mumu

    def rel(L, R):
        return float(np.max(np.abs(L - R) / np.maximum(np.maximum(np.abs(L), np.abs(R)), 1.0)))

    return rel(L33, R33), rel(L34, R34)


@dataclass
class MonitorSeries:
    """Monitor records of one run with band constants frozen at tau = 0.

    Build it with :meth:`from_initial`; :meth:`record` appends one record per
    call. ``constants`` holds everything beyond the state that a record
    depends on, so it can be stored and reloaded.
    """

    mesh: object
    alpha: float
    sigma: int
    constants: dict
    rho0: np.ndarray
    records: list = field(default_factory=list)

    @classmethod
    def from_initial(cls, mesh, domain, alpha, initial, dt):
        fr = frame_from_field(mesh, initial.rho_tilde, initial.tau)
        t0 = float(np.expm1(initial.tau))
        with np.errstate(divide="ignore", invalid="ignore"):
            sh = fr.S / fr.H
        mc = bool(np.all(fr.H > 0))
        k = mesh.boundary_index
        zz = np.abs(np.einsum("ni,ni->n", mesh.bz, mesh.bz) - 1.0)
        const = {
            "h": float(mesh.h),
            "dt": float(dt),
            "slack": float(10.0 * (mesh.h ** 2 + dt)),
            "mean_convex0": mc,
            # S/H >= 2 (c + t) with equality somewhere at the initial time t0
            "c_sh": float(0.5 * np.min(sh) - t0) if mc else float("nan"),
            "C_sh": float(0.5 * np.max(sh) - t0) if mc else float("nan"),
            "sup_v0": float(np.max(fr.v)),
            "graph0": float(np.min(fr.S / (fr.v * fr.u))),
            "tau0": float(initial.tau),
        }
        if mc:
            c, C = const["c_sh"], const["C_sh"]
            # the rho band endpoints are monotone in t, so their extremes are at t0 or t -> infinity
            lo_inf = min(0.0, 0.5 * np.log((1.0 + t0) / (C + t0)))
            hi_sup = max(0.0, 0.5 * np.log((1.0 + t0) / (c + t0)))
            base = np.exp(2.0 * (initial.rho_tilde[k])) * zz
            const["xnorm_lo"] = float(np.min(base) * np.exp(2 * lo_inf))
            const["xnorm_hi"] = float(np.max(base) * np.exp(2 * hi_sup))
        else:
            const["xnorm_lo"] = const["xnorm_hi"] = float("nan")
        return cls(mesh, float(alpha), int(domain.sigma), const, np.array(initial.rho_tilde, copy=True))

    # ---------------------------------------------------------------- bands

    def speed_band(self, tau):
        """Bands for S~ / H~ in rescaled form at rescaled time tau."""
        t = float(np.expm1(tau))
        c, C = self.constants["c_sh"], self.constants["C_sh"]
        return 2 * (c + t) / (1 + t), 2 * (C + t) / (1 + t)

    def rho_band(self, tau):
        """Pointwise bounds on rho_tilde(tau) - rho_tilde(tau0)."""
        t = float(np.expm1(tau))
        t0 = float(np.expm1(self.constants["tau0"]))
        c, C = self.constants["c_sh"], self.constants["C_sh"]
        g = np.log((1 + t0) / (1 + t))
        return 0.5 * (np.log((C + t) / (C + t0)) + g), 0.5 * (np.log((c + t) / (c + t0)) + g)

    # --------------------------------------------------------------- record

    def evaluate(self, state):
        """Record of one state without appending it."""
        mesh, alpha, sigma, K = self.mesh, self.alpha, self.sigma, self.constants
        slack = K["slack"]
        tau = float(state.tau)
        t = float(np.expm1(tau))
        nan = float("nan")
        try:
            fr = frame_from_field(mesh, state.rho_tilde, tau)
        except NotSpacelikeError:
            vals = dict.fromkeys(COLUMNS, nan)
            vals.update(tau=tau, t=t, verdictBits=1 << NA_INADMISSIBLE)
            return MonitorRecord(**vals)
        k = mesh.boundary_index
        interior = np.ones(mesh.n_nodes, dtype=bool)
        interior[k] = False
        # physical S/H, bands scaled back from the rescaled form
        with np.errstate(divide="ignore", invalid="ignore"):
            sh = fr.S / fr.H
        sht = sh / (1 + t)
        bits = 0
        minH, minS = float(fr.H.min()), float(fr.S.min())
        if not minH > -slack:
            bits |= 1 << 0
        if not minS > -slack:
            bits |= 1 << 1
        if K["mean_convex0"]:
            lo, hi = self.speed_band(tau)
            sh_lo_band = 2 * (K["c_sh"] + t)
            sh_hi_band = 2 * (K["C_sh"] + t)
            pos = fr.H > 0
            if not (np.all(pos) and np.min(sht) >= lo - slack):
                bits |= 1 << 2
            if not (np.all(pos) and np.max(sht) <= hi + slack):
                bits |= 1 << 3
            rlo, rhi = self.rho_band(tau)
            d = state.rho_tilde - self.rho0
            if not (np.min(d) >= rlo - slack and np.max(d) <= rhi + slack):
                bits |= 1 << 4
        else:
            bits |= 1 << NA_MEAN_CONVEX
            sh_lo_band = sh_hi_band = nan
        bf = boundary_frame(mesh, fr, alpha, sigma)
        xr = bf.xnorm2 / (1 + t)
        xlo, xhi = float(np.min(xr)), float(np.max(xr))
        if K["mean_convex0"] and not (xlo >= K["xnorm_lo"] - slack and xhi <= K["xnorm_hi"] + slack):
            bits |= 1 << 5
        v = fr.v
        graph = float(np.min(fr.S / (v * fr.u)))
        support = float(np.max(fr.S[k] / np.sqrt(bf.xnorm2)))
        if sigma < 0:
            if np.any(v[k] > wall_v_bound(alpha, bf.mu) + slack):
                bits |= 1 << 6
            if not graph >= 0.5 * K["graph0"] - slack:
                bits |= 1 << 7
            cv = max(K["sup_v0"], float(np.max(wall_v_bound(alpha, bf.mu))))
            if np.max(v) > cv + slack:
                bits |= 1 << 8
            bits |= 1 << NA_RIEMANN
        else:
            bits |= 1 << NA_LORENTZ
        bres = float(np.max(np.abs(b_residual(mesh.bz, mesh.bN, fr.Drho[k], alpha))))
        if not bres <= BC_CHECK:
            bits |= 1 << 9
        phi = float(np.max(np.abs(fr.H[interior] / fr.S[interior] * (1 + t) - 0.5)))
        l33, l34 = boundary_identity_residuals(mesh, fr, alpha, sigma)
        return MonitorRecord(
            tau=tau,
            t=t,
            minH=minH,
            minS=minS,
            maxV=float(np.max(v)),
            shMin=float(np.min(sh)),
            shMax=float(np.max(sh)),
            shLoBand=float(sh_lo_band),
            shHiBand=float(sh_hi_band),
            rhoMin=float(np.min(state.rho_tilde)),
            rhoMax=float(np.max(state.rho_tilde)),
            graphicality=graph,
            supportRatio=support,
            xnormLo=xlo,
            xnormHi=xhi,
            phiSup=phi,
            bcResidual=bres,
            lemma33Res=l33,
            lemma34Res=l34,
            verdictBits=int(bits),
        )

    def record(self, state):
        rec = self.evaluate(state)
        self.records.append(rec)
        return rec

    # --------------------------------------------------------- series level

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def hard_failures(self):
        """Number of records with any fail bit set."""
        return sum(1 for r in self.records if r.verdictBits & FAIL_MASK)

    def verdict_table(self):
        """Per check: counts of pass, fail and not-applicable records."""
        out = {}
        for b, name in BIT_NAMES.items():
            na_bit = {2: NA_MEAN_CONVEX, 3: NA_MEAN_CONVEX, 4: NA_MEAN_CONVEX, 5: NA_MEAN_CONVEX,
                      6: NA_LORENTZ, 7: NA_LORENTZ, 8: NA_LORENTZ}.get(b)
            p = f = na = 0
            for r in self.records:
                if r.verdictBits >> NA_INADMISSIBLE & 1 or (na_bit is not None and r.verdictBits >> na_bit & 1):
                    na += 1
                elif r.verdictBits >> b & 1:
                    f += 1
                else:
                    p += 1
            out[name] = {"pass": p, "fail": f, "n/a": na}
        ok = self.support_ratio_ok()
        out["support-ratio"] = {
            "pass": int(ok is True), "fail": int(ok is False), "n/a": int(ok is None)
        }
        return out

    def support_ratio_ok(self, tau_split=1.0):
        """sigma = +1: max S/|x| after tau_split stays below twice its max up to tau_split."""
        if self.sigma < 0 or not self.records:
            return None
        tau = self.column("tau")
        sr = self.column("supportRatio")
        early = tau <= tau_split
        late = ~early
        if not np.any(late):
            return True
        return bool(np.max(sr[late]) <= 2.0 * np.max(sr[early]))

    def to_dict(self):
        return {"alpha": self.alpha, "sigma": self.sigma, "constants": dict(self.constants)}

    @classmethod
    def from_dict(cls, mesh, d, rho0):
        return cls(mesh, float(d["alpha"]), int(d["sigma"]), dict(d["constants"]), np.asarray(rho0, dtype=float))


def phi_decay_fit(series, tau_min=1.0, floor_factor=10.0):
    """Least-squares slope of log phiSup against tau over the tail.

    Uses records with tau >= tau_min and phiSup above ``floor_factor`` times
    the smallest value reached, so the stationarity floor does not bend the
    fit. Returns ``(slope, log_constant, passed)`` with pass for slope <= -0.8;
    slope is NaN when fewer than three points qualify.
    """
    recs = series.records if hasattr(series, "records") else series
    tau = np.array([r.tau for r in recs])
    phi = np.array([r.phiSup for r in recs])
    ok = np.isfinite(phi) & (phi > 0)
    if not np.any(ok):
        return float("nan"), float("nan"), False
    floor = np.min(phi[ok])
    sel = ok & (tau >= tau_min) & (phi > floor_factor * floor)
    if np.count_nonzero(sel) < 3:
        return float("nan"), float("nan"), False
    slope, const = np.polyfit(tau[sel], np.log(phi[sel]), 1)
    return float(slope), float(const), bool(slope <= -0.8)
