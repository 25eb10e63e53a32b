"""Closed-form diffracted wavefunction and the fields derived from it.

The wavefunction is written as ``psi = prefactor * psi_r`` with the reduced
wavefunction

    psi_r = exp(-R^2 / 2 beta + i k0 z) - 2 K S_eff(theta) exp(i k0 r) / (r - z)

where ``beta = D^2 + i (hbar/m) t`` (``D^2`` in adiabatic mode), ``K = P_bar / k0^2``
and ``2 / (r - z) = 1 / (r sin^2(theta/2))``. The prefactor
``D / (sqrt(2) pi sqrt(beta)) * exp(-i E t)`` is constant in space, so velocities
and currents only need ``psi_r`` and its spatial derivatives, which are computed
analytically here up to second order.

All functions broadcast over numpy arrays of coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import THETA_MIN, Mode, PhysicalConfig
from .errors import ForwardSingularity, NodeProximity

SINC_SERIES_CUTOFF = 1e-2
RHO_FLOOR_FACTOR = 1e-30


@dataclass(frozen=True)
class SpacetimePoint:
    """A point (z, R, t) of the meridian plane; z and R may be arrays."""

    z: float | np.ndarray
    R: float | np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.R) < 0):
            raise ValueError("R must be >= 0")

    @property
    def r(self):
        return np.hypot(self.z, self.R)

    @property
    def theta(self):
        return np.arctan2(self.R, self.z)

    @classmethod
    def polar(cls, r, theta, t=0.0) -> "SpacetimePoint":
        return cls(np.asarray(r) * np.cos(theta), np.asarray(r) * np.sin(theta), t)


@dataclass(frozen=True)
class FieldSample:
    psi_in: np.ndarray
    psi_out: np.ndarray
    psi: np.ndarray
    grad_psi: np.ndarray  # (2, ...) complex: d/dz, d/dR
    density: np.ndarray
    current: np.ndarray  # (2, ...) real
    velocity: np.ndarray  # (2, ...) real


# --- effective Fraunhofer function ------------------------------------------


def bragg_angles(cfg: PhysicalConfig) -> np.ndarray:
    """Bragg angles theta_q, q = 1..q_max, from sin^2(theta_q/2) = q pi / (k0 a)."""
    q = np.arange(1, cfg.q_max + 1)
    s2 = q * np.pi / (cfg.k0 * cfg.a)
    if np.any(s2 > 1.0 + 1e-15):
        bad = int(q[np.argmax(s2 > 1.0)])
        raise ValueError(f"Bragg order q={bad} does not exist for k0*a={cfg.k0 * cfg.a:g}")
    return 2.0 * np.arcsin(np.sqrt(np.minimum(s2, 1.0)))


def sinc_wavenumbers(cfg: PhysicalConfig) -> np.ndarray:
    """kappa_q = k0 d sin(theta_q) / 2, so the coherent term q is (d/a) sinc(kappa_q (theta - theta_q))."""
    return 0.5 * cfg.k0 * cfg.d * np.sin(bragg_angles(cfg))


def fraunhofer_zero_offsets(cfg: PhysicalConfig) -> np.ndarray:
    """Angular distance 2 pi / (k0 d sin theta_q) from each peak to its first zeros."""
    return np.pi / sinc_wavenumbers(cfg)


def _sinc_derivs(y, order):
    """sin(y)/y and its first two derivatives, with a series near y = 0."""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < SINC_SERIES_CUTOFF
    ys = np.where(small, 1.0, y)
    sn, cs = np.sin(ys), np.cos(ys)
    y2 = y * y
    out = [np.where(small, 1 - y2 / 6 * (1 - y2 / 20 * (1 - y2 / 42)), sn / ys)]
    if order >= 1:
        series = y * (-1 / 3 + y2 * (1 / 30 - y2 * (1 / 840 - y2 / 45360)))
        out.append(np.where(small, series, (ys * cs - sn) / ys**2))
    if order >= 2:
        series = -1 / 3 + y2 * (1 / 10 - y2 * (1 / 168 - y2 / 6480))
        out.append(np.where(small, series, ((2 - ys**2) * sn - 2 * ys * cs) / ys**3))
    return out


def _debye_waller(cfg, theta, order):
    s = np.sin(0.5 * theta)
    c = np.cos(0.5 * theta)
    kk = cfg.k0**2 * cfg.sigma_a**2
    w = 2 * kk * s**4
    dw = np.exp(-w)
    out = [dw]
    if order >= 1:
        w1 = 4 * kk * s**3 * c
        out.append(-w1 * dw)
    if order >= 2:
        w2 = 2 * kk * (3 * s**2 * c**2 - s**4)
        out.append((w1**2 - w2) * dw)
    return out


def _profile(cfg, theta, x, order):
    """Profile from the absolute angle ``theta`` and offsets ``x = theta - theta_q``."""
    thq = bragg_angles(cfg)
    kap = 0.5 * cfg.k0 * cfg.d * np.sin(thq)
    sinc = _sinc_derivs(kap * x, order)
    nz = cfg.d / cfg.a
    coh = [nz * np.sum(sinc[0], axis=-1)]
    if order >= 1:
        coh.append(nz * np.sum(kap * sinc[1], axis=-1))
    if order >= 2:
        coh.append(nz * np.sum(kap**2 * sinc[2], axis=-1))
    dw = _debye_waller(cfg, theta, order)
    diff = cfg.C_diffuse * math.sqrt(nz)
    cc = cfg.C_coherent
    out = [cc * dw[0] * coh[0] + (1 - dw[0]) * diff]
    if order >= 1:
        out.append(cc * (dw[1] * coh[0] + dw[0] * coh[1]) - dw[1] * diff)
    if order >= 2:
        out.append(cc * (dw[2] * coh[0] + 2 * dw[1] * coh[1] + dw[0] * coh[2]) - dw[2] * diff)
    return out


def s_profile(cfg: PhysicalConfig, theta, order: int = 0):
    """Real angular profile s(theta) with S_eff = (D/a) exp(i delta) s(theta).

    Returns a list ``[s, ds/dtheta, d2s/dtheta2]`` truncated to ``order``.
    The Bragg sum runs over q = 1..q_max.
    """
    theta = np.asarray(theta, dtype=float)
    return _profile(cfg, theta, theta[..., None] - bragg_angles(cfg), order)


def s_eff(cfg: PhysicalConfig, theta, order: int = 0):
    """Fitted effective Fraunhofer function S_eff(theta) (complex).

    With ``order > 0`` returns ``[S, S', S'']`` up to that order instead.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(theta > np.pi):
        raise ValueError("s_eff requires 0 < theta <= pi")
    phase = cfg.D / cfg.a * np.exp(1j * cfg.delta)
    vals = [phase * v for v in s_profile(cfg, theta, order)]
    return vals[0] if order == 0 else vals


# --- reduced wavefunction and derivatives ------------------------------------


def beta(cfg: PhysicalConfig, t, mode: Mode = Mode.FROZEN):
    """D^2 + i (hbar/m) t, or D^2 in adiabatic mode."""
    if Mode(mode) is Mode.ADIABATIC:
        return np.asarray(cfg.D**2 + 0j)
    return cfg.D**2 + 1j * cfg.hbar_over_m * np.asarray(t, dtype=float)


def prefactor(cfg: PhysicalConfig, t=0.0, mode: Mode = Mode.FROZEN):
    """Spatially constant factor relating psi to the reduced wavefunction."""
    b = beta(cfg, t, mode)
    # D / sqrt(beta) spreading, normalized to 1 / (sqrt(2) pi D) at t = 0
    pre = 1.0 / (math.sqrt(2.0) * math.pi * np.sqrt(b))
    if Mode(mode) is Mode.ADIABATIC:
        return pre
    return pre * np.exp(-1j * cfg.energy * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class Jet:
    """Value and partial derivatives (z, R) up to second order."""

    v: np.ndarray
    z: np.ndarray
    R: np.ndarray
    zz: np.ndarray | None = None
    zR: np.ndarray | None = None
    RR: np.ndarray | None = None

    def __add__(self, other: "Jet") -> "Jet":
        second = self.zz is not None and other.zz is not None
        return Jet(
            self.v + other.v,
            self.z + other.z,
            self.R + other.R,
            self.zz + other.zz if second else None,
            self.zR + other.zR if second else None,
            self.RR + other.RR if second else None,
        )

    @property
    def grad(self) -> np.ndarray:
        return np.stack([self.z, self.R])


def _geometry(z, R, anchor):
    """r, theta, r - z and the phases k0*z, k0*r split for precision.

    With an anchor (z0, R0), ``z`` and ``R`` are offsets from it and the
    large phases are evaluated as anchor phase + small increment.
    """
    if anchor is None:
        zz, RR = z, R
        r = np.hypot(zz, RR)
        theta = np.arctan2(RR, zz)
        u = np.where(zz > 0, RR**2 / (r + np.abs(zz)), r - zz)
        return zz, RR, r, theta, u, None
    z0, R0 = anchor
    r0 = math.hypot(z0, R0)
    zz, RR = z0 + z, R0 + R
    r = np.hypot(zz, RR)
    dr = (z * (2 * z0 + z) + R * (2 * R0 + R)) / (r + r0)
    dth = np.arctan2(R * z0 - z * R0, z0 * zz + R0 * RR)
    theta0 = math.atan2(R0, z0)
    u0 = R0**2 / (r0 + z0) if z0 > 0 else r0 - z0
    u = u0 + (dr - z)
    return zz, RR, r, (theta0, dth), u, (z0, r0, z, dr)


def _theta_of(theta):
    return theta[0] + theta[1] if isinstance(theta, tuple) else theta


def _s_profile_anchored(cfg, theta, order):
    if not isinstance(theta, tuple):
        return s_profile(cfg, theta, order)
    # theta0 - theta_q is formed once so the offsets keep full precision
    theta0, dth = theta
    dth = np.asarray(dth, dtype=float)
    x = (theta0 - bragg_angles(cfg)) + dth[..., None]
    return _profile(cfg, theta0 + dth, x, order)


def ingoing_jet(cfg, z, R, t=0.0, mode=Mode.FROZEN, order=1, anchor=None) -> Jet:
    """exp(-R^2 / 2 beta + i k0 z) and its derivatives."""
    b = beta(cfg, t, mode)
    z = np.asarray(z, dtype=float)
    R = np.asarray(R, dtype=float)
    if anchor is None:
        RR = R
        phase = np.exp(1j * cfg.k0 * z)
    else:
        RR = anchor[1] + R
        phase = np.exp(1j * cfg.k0 * anchor[0]) * np.exp(1j * cfg.k0 * z)
    g = np.exp(-(RR**2) / (2 * b)) * phase
    ik = 1j * cfg.k0
    gR_fac = -RR / b
    jet = dict(v=g, z=ik * g, R=gR_fac * g)
    if order >= 2:
        jet.update(zz=-(cfg.k0**2) * g, zR=ik * gR_fac * g, RR=(RR**2 / b**2 - 1 / b) * g)
    return Jet(**jet)


def outgoing_jet(cfg, z, R, order=1, anchor=None) -> Jet:
    """-2 K S_eff(theta) exp(i k0 r) / (r - z) and its derivatives."""
    z = np.asarray(z, dtype=float)
    R = np.asarray(R, dtype=float)
    zz, RR, r, theta, u, split = _geometry(z, R, anchor)
    th = _theta_of(theta)
    if np.any(th <= THETA_MIN):
        raise ForwardSingularity(
            f"outgoing model requested at theta <= {THETA_MIN} rad (forward cutoff)"
        )
    k0 = cfg.k0
    const = -2.0 * cfg.outgoing_strength * cfg.D / cfg.a * np.exp(1j * cfg.delta)
    s = _s_profile_anchored(cfg, theta, max(order, 1))
    if split is None:
        E = np.exp(1j * k0 * r)
    else:
        z0, r0, _, dr = split
        E = np.exp(1j * k0 * r0) * np.exp(1j * k0 * dr)
    F = E / u
    h = const * s[0] * F

    r2 = r * r
    r3 = r2 * r
    ik = 1j * k0
    Lz = ik * zz / r + 1 / r
    LR = ik * RR / r - RR / (r * u)
    thz = -RR / r2
    thR = zz / r2
    sz = s[1] * thz
    sR = s[1] * thR
    hz = const * F * (sz + s[0] * Lz)
    hR = const * F * (sR + s[0] * LR)
    jet = dict(v=h, z=hz, R=hR)
    if order >= 2:
        r4 = r2 * r2
        Lzz = ik * RR**2 / r3 - (r + zz) / r3 + 1 / r2
        LRR = ik * zz**2 / r3 - zz**2 / (r3 * u) + RR**2 / (r2 * u**2)
        LzR = -ik * zz * RR / r3 + zz * RR / (r3 * u) - RR / (r2 * u)
        Fzz = F * (Lzz + Lz * Lz)
        FRR = F * (LRR + LR * LR)
        FzR = F * (LzR + Lz * LR)
        szz = s[2] * thz**2 + s[1] * (2 * zz * RR / r4)
        sRR = s[2] * thR**2 + s[1] * (-2 * zz * RR / r4)
        szR = s[2] * thz * thR + s[1] * ((RR**2 - zz**2) / r4)
        Fz, FR = F * Lz, F * LR
        jet.update(
            zz=const * (szz * F + 2 * sz * Fz + s[0] * Fzz),
            RR=const * (sRR * F + 2 * sR * FR + s[0] * FRR),
            zR=const * (szR * F + sz * FR + sR * Fz + s[0] * FzR),
        )
    return Jet(**jet)


def reduced_jet(cfg, z, R, t=0.0, mode=Mode.FROZEN, order=1, anchor=None) -> Jet:
    """Reduced wavefunction psi_r = psi / prefactor with derivatives."""
    return ingoing_jet(cfg, z, R, t, mode, order, anchor) + outgoing_jet(cfg, z, R, order, anchor)


# --- public field API ---------------------------------------------------------


def _pt(p):
    return np.asarray(p.z, dtype=float), np.asarray(p.R, dtype=float), p.t


def psi_ingoing(cfg: PhysicalConfig, p: SpacetimePoint, mode: Mode = Mode.FROZEN):
    z, R, t = _pt(p)
    return prefactor(cfg, t, mode) * ingoing_jet(cfg, z, R, t, mode, order=0).v


def psi_outgoing(cfg: PhysicalConfig, p: SpacetimePoint, mode: Mode = Mode.FROZEN):
    z, R, t = _pt(p)
    return prefactor(cfg, t, mode) * outgoing_jet(cfg, z, R, order=0).v


def psi(cfg: PhysicalConfig, p: SpacetimePoint, mode: Mode = Mode.FROZEN):
    return psi_ingoing(cfg, p, mode) + psi_outgoing(cfg, p, mode)


def grad_psi(cfg: PhysicalConfig, p: SpacetimePoint, mode: Mode = Mode.FROZEN) -> np.ndarray:
    """Analytic (d/dz, d/dR) of psi; shape (2, ...)."""
    z, R, t = _pt(p)
    return prefactor(cfg, t, mode) * reduced_jet(cfg, z, R, t, mode).grad


def density_floor(cfg: PhysicalConfig) -> float:
    return RHO_FLOOR_FACTOR / (2 * math.pi**2 * cfg.D**2)


def field_sample(cfg: PhysicalConfig, p: SpacetimePoint, mode: Mode = Mode.FROZEN) -> FieldSample:
    """psi, grad psi, density, current and Bohmian velocity at ``p``."""
    z, R, t = _pt(p)
    pre = prefactor(cfg, t, mode)
    gin = ingoing_jet(cfg, z, R, t, mode)
    gout = outgoing_jet(cfg, z, R)
    p_in, p_out = pre * gin.v, pre * gout.v
    total = p_in + p_out
    grad = pre * (gin + gout).grad
    rho = np.abs(total) ** 2
    if np.any(rho < density_floor(cfg)):
        raise NodeProximity("density below floor: velocity undefined near a nodal point")
    hm = cfg.hbar_over_m
    current = hm * np.imag(np.conj(total) * grad)
    velocity = hm * np.imag(grad / total)
    return FieldSample(p_in, p_out, total, grad, rho, current, velocity)


def velocity(cfg: PhysicalConfig, z, R, t=0.0, mode: Mode = Mode.ADIABATIC) -> np.ndarray:
    """Bohmian velocity (hbar/m) Im(grad psi / psi); shape (2, ...)."""
    jet = reduced_jet(cfg, z, R, t, mode)
    return cfg.hbar_over_m * np.imag(jet.grad / jet.v)


def abs_psi(cfg, z, R, t=0.0, mode=Mode.FROZEN, part="total"):
    p = SpacetimePoint(z, R, t)
    if part == "ingoing":
        return np.abs(psi_ingoing(cfg, p, mode))
    if part == "outgoing":
        return np.abs(psi_outgoing(cfg, p, mode))
    return np.abs(psi(cfg, p, mode))


def quantum_potential(
    cfg: PhysicalConfig,
    p: SpacetimePoint,
    mode: Mode = Mode.FROZEN,
    h: float | None = None,
    part: str = "total",
) -> np.ndarray:
    """Q = -(hbar^2/2m) lap|psi| / |psi| [eV] by finite differences on |psi|.

    The cylindrical Laplacian d2/dz2 + d2/dR2 + (1/R) d/dR is used; on the
    axis (R = 0) the radial part is replaced by its limit 2 d2/dR2.
    ``part`` selects ``"total"``, ``"ingoing"`` or ``"outgoing"``.
    """
    z, R, t = _pt(p)
    if h is None:
        h = cfg.lambda0 / 200
    f = lambda zz, RR: abs_psi(cfg, zz, RR, t, mode, part)  # noqa: E731
    f0 = f(z, R)
    if np.any(f0**2 < density_floor(cfg)):
        raise NodeProximity("quantum potential undefined at a nodal point")
    d2z = (f(z + h, R) - 2 * f0 + f(z - h, R)) / h**2
    Rp = R + h
    Rm = np.abs(R - h)  # |psi| is even in R
    d2R = (f(z, Rp) - 2 * f0 + f(z, Rm)) / h**2
    d1R = (f(z, Rp) - f(z, Rm)) / (2 * h)
    on_axis = R < h
    radial = np.where(on_axis, 2 * d2R, d2R + d1R / np.where(on_axis, 1.0, R))
    lap = d2z + radial
    return -cfg.hbar2_2m * lap / f0
