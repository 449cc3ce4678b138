"""Configuration files, field snapshots and run metadata.

Config files hold one ``key = value`` per line; ``#`` starts a comment and
unknown keys are errors. Snapshots are plain text:

    nr ns tau
    r_0 ... r_{nr-1}
    s_0 ... s_{ns-1}
    nr lines of ns values (row 0 repeats the center value)

with every float written to 17 significant digits, which round-trips float64.
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

# key -> (parser, default); a default of REQUIRED marks a required key
REQUIRED = object()


def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _str(s):
    return s


def _scheme(s):
    v = s.strip().lower()
    return {"explicit-rk2": "explicit-rk2", "rk2": "explicit-rk2", "heun": "explicit-rk2", "imex": "imex"}.get(v, v)


KEYS = {
    "domain.type": (_str, REQUIRED),
    "domain.R": (_float, None),
    "domain.profile_file": (_str, None),
    "domain.samples": (_int, None),
    "domain.margin": (_float, 1e-3),
    "mesh.nr": (_int, REQUIRED),
    "mesh.ns": (_int, REQUIRED),
    "flow.alpha": (_float, REQUIRED),
    "flow.mode": (_str, REQUIRED),
    "flow.tau_end": (_float, REQUIRED),
    "flow.cfl": (_float, 0.4),
    "flow.scheme": (_scheme, "imex"),
    "flow.dt": (_float, 0.05),
    "flow.bc_tol": (_float, 1e-10),
    "flow.stat_tol": (_float, 1e-7),
    "flow.max_steps": (_int, 1_000_000),
    "init.family": (_str, REQUIRED),
    "init.epsilon": (_float, 0.0),
    "init.asym": (_float, 0.0),
    "init.file": (_str, None),
    "expander.tau_max": (_float, 30.0),
    "expander.tol": (_float, 1e-6),
    "output.dir": (_str, "coneflow_out"),
    "output.snapshot_every": (_int, 0),
}

DOMAIN_TYPES = ("round", "profile")


def parse_config_text(text, base_dir=None):
    """Parse config text into a flat dict with defaults filled in."""
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {n}: unknown config key {key!r}")
        if key in raw:
            raise ConfigError(f"line {n}: duplicate config key {key!r}")
        parser = KEYS[key][0]
        try:
            raw[key] = parser(val)
        except ValueError:
            raise ConfigError(f"line {n}: bad value {val!r} for {key}") from None
    cfg = {}
    for key, (_, default) in KEYS.items():
        if key in raw:
            cfg[key] = raw[key]
        elif default is REQUIRED:
            raise ConfigError(f"missing config key {key!r}")
        else:
            cfg[key] = default
    if cfg["domain.type"] not in DOMAIN_TYPES:
        raise ConfigError(f"domain.type must be one of {DOMAIN_TYPES}, got {cfg['domain.type']!r}")
    if cfg["domain.type"] == "round" and cfg["domain.R"] is None:
        raise ConfigError("missing config key 'domain.R' (needed for domain.type = round)")
    if cfg["domain.type"] == "profile":
        if cfg["domain.profile_file"] is None:
            raise ConfigError("missing config key 'domain.profile_file' (needed for domain.type = profile)")
        cfg["domain.profile_file"] = _resolve(cfg["domain.profile_file"], base_dir)
    if cfg["init.family"] == "file":
        if cfg["init.file"] is None:
            raise ConfigError("missing config key 'init.file' (needed for init.family = file)")
        cfg["init.file"] = _resolve(cfg["init.file"], base_dir)
    if not 0 < cfg["flow.cfl"] <= 1:
        raise ConfigError("flow.cfl must lie in (0, 1]")
    if cfg["output.snapshot_every"] < 0:
        raise ConfigError("output.snapshot_every must be >= 0")
    return cfg


def _resolve(p, base_dir):
    p = Path(p)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return str(p)


def read_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, path.parent)


def format_config(cfg):
    return "\n".join(f"{k} = {v}" for k, v in cfg.items() if v is not None) + "\n"


def output_dir(cfg):
    """Output directory; CONEFLOW_OUTPUT_DIR wins over output.dir."""
    return Path(os.environ.get("CONEFLOW_OUTPUT_DIR") or cfg["output.dir"])


# ------------------------------------------------------------------ builders


def build_domain(cfg):
    from .domain import build_from_radial_profile, build_round_cone, read_profile

    ns = cfg["mesh.ns"]
    n = cfg["domain.samples"] or ns
    if cfg["domain.type"] == "round":
        return build_round_cone(cfg["domain.R"], n, cfg["domain.margin"])
    theta, radii = read_profile(cfg["domain.profile_file"])
    return build_from_radial_profile(theta, radii, n, cfg["domain.margin"])


def build_flow_config(cfg):
    from .flow import FlowConfig

    return FlowConfig(
        alpha=cfg["flow.alpha"],
        mode=cfg["flow.mode"],
        tau_end=cfg["flow.tau_end"],
        cfl=cfg["flow.cfl"],
        scheme=cfg["flow.scheme"],
        dt=cfg["flow.dt"],
        bc_tol=cfg["flow.bc_tol"],
        stat_tol=cfg["flow.stat_tol"],
        snapshot_every=cfg["output.snapshot_every"],
        max_steps=cfg["flow.max_steps"],
    )


# ----------------------------------------------------------------- snapshots


@dataclass(frozen=True, eq=False)
class Snapshot:
    nr: int
    ns: int
    tau: float
    r: np.ndarray
    s: np.ndarray
    grid: np.ndarray

    @property
    def rho_tilde(self):
        """Flat node field (center first), matching ``StarMesh`` ordering."""
        return np.concatenate([self.grid[0, :1], self.grid[1:].reshape(-1)])


def _fmt(x):
    return format(float(x), ".17g")


def write_snapshot(path, mesh, rho_tilde, tau):
    g = mesh.to_grid(np.asarray(rho_tilde, dtype=float))
    lines = [f"{mesh.nr} {mesh.ns} {_fmt(tau)}", " ".join(map(_fmt, mesh.r)), " ".join(map(_fmt, mesh.s))]
    lines += [" ".join(map(_fmt, row)) for row in g]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def read_snapshot(path, mesh=None):
    """Parse a snapshot; with ``mesh`` also check that the grids agree."""
    try:
        lines = Path(path).read_text().split("\n")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read snapshot {path}: {exc}") from None
    lines = [ln for ln in lines if ln.strip()]
    try:
        head = lines[0].split()
        if len(head) != 3:
            raise ValueError("header must be 'nr ns tau'")
        nr, ns, tau = int(head[0]), int(head[1]), float(head[2])
        r = np.array(lines[1].split(), dtype=float)
        s = np.array(lines[2].split(), dtype=float)
        vals = np.array(" ".join(lines[3:]).split(), dtype=float)
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path}: malformed snapshot ({exc})") from None
    if nr < 2 or ns < 1 or r.size != nr or s.size != ns or vals.size != nr * ns:
        raise DataError(
            f"{path}: header says {nr} x {ns} but found {r.size} r-values, {s.size} s-values, {vals.size} node values"
        )
    grid = vals.reshape(nr, ns)
    if not np.all(grid[0] == grid[0, 0]):
        raise DataError(f"{path}: center row is not constant")
    if not np.all(np.isfinite(grid)) or not np.isfinite(tau):
        raise DataError(f"{path}: non-finite values")
    if mesh is not None:
        if (nr, ns) != (mesh.nr, mesh.ns):
            raise DataError(f"{path}: snapshot mesh ({nr}, {ns}) does not match ({mesh.nr}, {mesh.ns})")
        if not (np.allclose(r, mesh.r, rtol=0, atol=1e-12) and np.allclose(s, mesh.s, rtol=0, atol=1e-12)):
            raise DataError(f"{path}: snapshot grid coordinates do not match the mesh")
    return Snapshot(nr, ns, tau, r, s, grid)


# ------------------------------------------------------------------ metadata


def write_meta(path, cfg, series, initial_snapshot, extra=None):
    """Sidecar with everything needed to recompute records from a snapshot."""
    meta = {
        "config": cfg,
        "monitor": series.to_dict(),
        "initial_snapshot": str(initial_snapshot),
    }
    if extra:
        meta.update(extra)
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_meta(path):
    try:
        meta = json.loads(Path(path).read_text())
        meta["config"], meta["monitor"], meta["initial_snapshot"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read run metadata {path}: {exc}") from None
    return meta


def write_csv(path, records):
    import csv

    from .monitors import COLUMNS

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for rec in records:
            w.writerow(rec.row())


def read_csv_rows(path):
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
