"""Finite-difference oracles for the wavefield.

Derivatives use an 8th-order central stencil on offsets from an anchor
point, so the large phases k0 z and k0 r never lose the step to rounding.
A 2nd-order stencil at h = 1e-4 nm has truncation error (k0 h)^2 / 6 ~ 1e-3,
far above the 1e-6 target.
"""

import math

import numpy as np

from bohmdiff import wavefield as W
from bohmdiff.config import THETA_MIN, Mode

STENCIL = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
OFFSETS = np.arange(-4, 5)
H = 1e-4


def domain_points(rng, n, r_range=(1e2, 1e5), theta_hi=math.pi - 0.01):
    """Random (z, R) with log-uniform r and uniform theta in (theta_min, theta_hi)."""
    r = 10 ** rng.uniform(math.log10(r_range[0]), math.log10(r_range[1]), n)
    th = rng.uniform(THETA_MIN * 1.01, theta_hi, n)
    return r * np.cos(th), r * np.sin(th)


def grad_fd(cfg, z, R, t=0.0, mode=Mode.ADIABATIC, h=H):
    """(d/dz, d/dR) of psi_r at (z, R) by the anchored stencil."""
    a = (float(z), float(R))
    zero = np.zeros(len(OFFSETS))
    fz = W.reduced_jet(cfg, OFFSETS * h, zero, t, mode, anchor=a).v
    fR = W.reduced_jet(cfg, zero, OFFSETS * h, t, mode, anchor=a).v
    return np.dot(STENCIL, fz) / h, np.dot(STENCIL, fR) / h


def grad_rel_error(cfg, z, R, t=0.0, mode=Mode.ADIABATIC, h=H):
    a = (float(z), float(R))
    g = W.reduced_jet(cfg, 0.0, 0.0, t, mode, anchor=a)
    gz, gR = grad_fd(cfg, z, R, t, mode, h)
    return math.hypot(abs(gz - g.z), abs(gR - g.R)) / math.hypot(abs(g.z), abs(g.R))


def _rho_current(cfg, a, dz, dR, t, mode):
    pre = W.prefactor(cfg, t, mode)
    g = W.reduced_jet(cfg, dz, dR, t, mode, anchor=a)
    p = pre * g.v
    hm = cfg.hbar_over_m
    return np.abs(p) ** 2, hm * np.imag(np.conj(p) * pre * g.z), hm * np.imag(np.conj(p) * pre * g.R)


def continuity_residual(cfg, z, R, t=0.0, mode=Mode.TIME_DEPENDENT, h=H, ht=1e-4):
    """|d rho/dt + div j| over the sum of the magnitudes of its terms.

    div j = d jz/dz + d jR/dR + jR / R (cylindrical, axisymmetric).
    """
    a = (float(z), float(R))
    zero = np.zeros(len(OFFSETS))
    _, jz, _ = _rho_current(cfg, a, OFFSETS * h, zero, t, mode)
    _, _, jR = _rho_current(cfg, a, zero, OFFSETS * h, t, mode)
    rho_t = np.array([_rho_current(cfg, a, 0.0, 0.0, t + k * ht, mode)[0] for k in OFFSETS])
    _, _, jR0 = _rho_current(cfg, a, 0.0, 0.0, t, mode)
    dz = np.dot(STENCIL, jz) / h
    dR = np.dot(STENCIL, jR) / h
    dt = np.dot(STENCIL, rho_t) / ht
    terms = (dz, dR, jR0 / a[1], dt)
    return abs(sum(terms)) / sum(abs(x) for x in terms)
