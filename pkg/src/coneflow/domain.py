"""Convex generating domains and the geometry of the cone boundary.

A cone in R^3_1 is generated by a convex planar domain containing the origin,
placed in the slice x^3 = 1. The boundary curve is stored as uniformly spaced
arc-length samples, counter-clockwise, so that the outward normal is the
tangent rotated clockwise and the curvature is positive.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    DataError,
    DegenerateBoundaryError,
    MixedSignatureError,
    NonConvexError,
)

DEFAULT_MARGIN = 1e-3


def spectral_derivative(values, length, order=1):
    """Periodic Fourier derivative of uniformly sampled values along axis 0.

    ``values`` may carry trailing axes (e.g. 2-vectors). The Nyquist mode is
    dropped for odd-order derivatives.
    """
    n = values.shape[0]
    k = np.fft.fftfreq(n, d=length / n) * 2.0 * np.pi
    factor = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        factor[n // 2] = 0.0
    shape = (n,) + (1,) * (values.ndim - 1)
    out = np.fft.ifft(np.fft.fft(values, axis=0) * factor.reshape(shape), axis=0)
    return out.real


@dataclass(frozen=True)
class BoundaryCurve:
    s: np.ndarray
    z: np.ndarray
    zdot: np.ndarray
    N: np.ndarray
    kappa: np.ndarray
    length: float

    @property
    def samples_count(self):
        return self.s.shape[0]

    @property
    def support(self):
        return np.einsum("ij,ij->i", self.N, self.z)

    @property
    def ds(self):
        return self.length / self.samples_count


@dataclass(frozen=True)
class ConeDomain:
    curve: BoundaryCurve
    sigma: int
    degeneracy_margin: float
    kind: str = "profile"
    radius: float = float("nan")

    @property
    def is_round(self):
        return self.kind == "round"


def classify_signature(curve, margin=DEFAULT_MARGIN):
    """Return ``(sigma, degeneracy_margin)`` for a boundary curve.

    sigma = +1 when 1 - (N.z)^2 > 0 everywhere (Lorentzian cone boundary),
    -1 when it is negative everywhere (Riemannian).
    """
    q = 1.0 - curve.support ** 2
    deg = float(np.min(np.abs(q)))
    if np.all(q > 0):
        sigma = 1
    elif np.all(q < 0):
        sigma = -1
    else:
        raise MixedSignatureError(
            "1 - (N.z)^2 changes sign along the boundary "
            f"(range [{q.min():.6g}, {q.max():.6g}])"
        )
    if deg < margin:
        raise DegenerateBoundaryError(
            f"degeneracy margin {deg:.3g} below threshold {margin:.3g}"
        )
    return sigma, deg


def _check_curve(curve, margin):
    if np.any(curve.kappa <= 0):
        j = int(np.argmin(curve.kappa))
        raise NonConvexError(
            f"boundary curvature {curve.kappa[j]:.6g} <= 0 at s = {curve.s[j]:.6g}"
        )
    if np.any(curve.support <= 0):
        raise DataError("origin is not strictly inside the domain (N.z <= 0)")
    sigma, deg = classify_signature(curve, margin)
    return sigma, deg


def build_round_cone(R, n, margin=DEFAULT_MARGIN):
    """Circle of radius ``R`` sampled at ``n`` arc-length nodes, starting on +x."""
    if not R > 0:
        raise ValueError("radius must be positive")
    if n < 16:
        raise ValueError("need at least 16 boundary samples")
    if abs(1.0 - R * R) < margin:
        raise DegenerateBoundaryError(
            f"R = {R} gives a null cone boundary (|1 - R^2| = {abs(1 - R * R):.3g})"
        )
    length = 2.0 * np.pi * R
    s = np.arange(n) * (length / n)
    th = s / R
    c, sn = np.cos(th), np.sin(th)
    curve = BoundaryCurve(
        s=s,
        z=R * np.stack([c, sn], axis=1),
        zdot=np.stack([-sn, c], axis=1),
        N=np.stack([c, sn], axis=1),
        kappa=np.full(n, 1.0 / R),
        length=length,
    )
    sigma, deg = _check_curve(curve, margin)
    return ConeDomain(curve, sigma, deg, kind="round", radius=float(R))


class _RadialInterpolant:
    """Periodic interpolant r(theta) with first and second derivatives."""

    def __init__(self, theta, radii):
        theta = np.asarray(theta, dtype=float)
        radii = np.asarray(radii, dtype=float)
        m = theta.size
        uniform = np.allclose(np.diff(theta), 2 * np.pi / m, rtol=0, atol=1e-12) and abs(
            theta[0]
        ) < 1e-14
        if uniform:
            self._coef = np.fft.rfft(radii) / m
            self._k = np.arange(self._coef.size)
            if m % 2 == 0:
                self._coef[-1] *= 0.5
            self._spline = None
        else:
            th = np.append(theta, theta[0] + 2 * np.pi)
            r = np.append(radii, radii[0])
            self._spline = CubicSpline(th, r, bc_type="periodic")

    def __call__(self, th, nu=0):
        th = np.asarray(th, dtype=float)
        if self._spline is not None:
            return self._spline(np.mod(th, 2 * np.pi), nu)
        ph = np.exp(1j * np.multiply.outer(th, self._k))
        c = self._coef * (1j * self._k) ** nu
        val = 2.0 * (ph @ c).real
        if nu == 0:
            val -= self._coef[0].real
        return val


def _arc_length_resample(rfun, n, fine):
    """Parameters theta_k with s(theta_k) = k * length / n."""
    th = np.arange(fine) * (2 * np.pi / fine)
    r, dr = rfun(th), rfun(th, 1)
    speed = np.sqrt(r * r + dr * dr)
    coef = np.fft.rfft(speed) / fine
    length = 2 * np.pi * coef[0].real
    k = np.arange(1, coef.size)
    ck = coef[1:].copy()
    if fine % 2 == 0:
        ck[-1] *= 0.5

    def s_of(t):
        ph = np.exp(1j * np.multiply.outer(t, k))
        periodic = 2.0 * (ph @ (ck / (1j * k))).real
        periodic0 = 2.0 * (ck / (1j * k)).real.sum()
        return coef[0].real * t + periodic - periodic0

    target = np.arange(n) * (length / n)
    t = target * (2 * np.pi / length)
    for _ in range(50):
        rr, dd = rfun(t), rfun(t, 1)
        step = (s_of(t) - target) / np.sqrt(rr * rr + dd * dd)
        t = t - step
        if np.max(np.abs(step)) < 1e-15:
            break
    return t, length


def build_from_radial_profile(theta, radii, n, margin=DEFAULT_MARGIN):
    """Domain bounded by the polar curve r(theta), resampled by arc length.

    Equispaced ``theta`` starting at 0 is interpolated trigonometrically; any
    other strictly increasing sampling of [0, 2 pi) uses a periodic cubic
    spline. Tangent and curvature come from periodic spectral differences of
    the arc-length samples.
    """
    theta = np.asarray(theta, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if theta.ndim != 1 or theta.shape != radii.shape:
        raise DataError("theta and radii must be 1-d arrays of equal length")
    if theta.size < 8:
        raise DataError("need at least 8 profile samples")
    if np.any(radii <= 0):
        raise DataError("all radii must be positive")
    if np.any(np.diff(theta) <= 0) or theta[0] < 0 or theta[-1] >= 2 * np.pi:
        raise DataError("theta must be strictly increasing in [0, 2 pi)")
    if n < 16:
        raise ValueError("need at least 16 boundary samples")

    rfun = _RadialInterpolant(theta, radii)
    fine = 16 * max(theta.size, n)
    t, length = _arc_length_resample(rfun, n, fine)
    r = rfun(t)
    z = r[:, None] * np.stack([np.cos(t), np.sin(t)], axis=1)
    d1 = spectral_derivative(z, length, 1)
    d2 = spectral_derivative(z, length, 2)
    speed = np.linalg.norm(d1, axis=1)
    zdot = d1 / speed[:, None]
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed ** 3
    N = np.stack([zdot[:, 1], -zdot[:, 0]], axis=1)
    curve = BoundaryCurve(
        s=np.arange(n) * (length / n), z=z, zdot=zdot, N=N, kappa=kappa, length=length
    )
    sigma, deg = _check_curve(curve, margin)
    return ConeDomain(curve, sigma, deg, kind="profile")


def ellipse_profile(a, b, m):
    """Equispaced polar samples of the ellipse with semi-axes ``a`` (x) and ``b`` (y)."""
    th = np.arange(m) * (2 * np.pi / m)
    r = a * b / np.sqrt((b * np.cos(th)) ** 2 + (a * np.sin(th)) ** 2)
    return th, r


def read_profile(path):
    """Read a ``theta radius`` per line profile file."""
    try:
        data = np.loadtxt(Path(path), comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read profile {path}: {exc}") from exc
    if data.shape[1] != 2:
        raise DataError(f"profile {path}: expected two columns, got {data.shape[1]}")
    return data[:, 0], data[:, 1]


def write_profile(path, theta, radii):
    with open(path, "w") as fh:
        for t, r in zip(theta, radii):
            fh.write(f"{t:.17g} {r:.17g}\n")
