"""Extended-precision evaluation of the reduced wavefunction (mpmath).

Used to refine X-points whose size is so small (R_X ~ 1e-9 nm) that the
double-precision velocity at the located stagnation point is dominated by
rounding: the velocity gradient there is ~ (hbar/m) / R_X^2, so a position
error of one part in 1e16 of the anchor already exceeds the speed tolerance.
Positions are passed as float anchors plus float offsets, which are exact in
mpmath.
"""

from __future__ import annotations

import mpmath as mp

from .config import Mode, PhysicalConfig

DEFAULT_DPS = 40


class PreciseField:
    """psi_r and its gradient at arbitrary precision for one configuration."""

    def __init__(self, cfg: PhysicalConfig, mode=Mode.ADIABATIC, t=0.0, dps=DEFAULT_DPS):
        self.ctx = mp.MPContext()
        self.ctx.dps = dps
        m = self.ctx.mpf
        self.k0 = m(cfg.k0)
        D2 = m(cfg.D) ** 2
        if Mode(mode) is Mode.ADIABATIC:
            self.beta = self.ctx.mpc(D2, 0)
        else:
            self.beta = self.ctx.mpc(D2, m(cfg.hbar_over_m) * m(t))
        self.hm = m(cfg.hbar_over_m)
        a, d = m(cfg.a), m(cfg.d)
        self.nz = d / a
        self.const = -2 * m(cfg.outgoing_strength) * m(cfg.D) / a * self.ctx.expjpi(m(cfg.delta) / self.ctx.pi)
        self.thq = [2 * self.ctx.asin(self.ctx.sqrt(q * self.ctx.pi / (self.k0 * a))) for q in range(1, cfg.q_max + 1)]
        self.kap = [self.k0 * d * self.ctx.sin(t_) / 2 for t_ in self.thq]
        self.kk = self.k0**2 * m(cfg.sigma_a) ** 2
        self.cc = m(cfg.C_coherent)
        self.diff = m(cfg.C_diffuse) * self.ctx.sqrt(self.nz)

    def profile(self, th):
        """(s, ds/dtheta)."""
        c = self.ctx
        coh, dcoh = 0, 0
        for tq, k in zip(self.thq, self.kap):
            y = k * (th - tq)
            if y == 0:
                coh += 1
                continue
            sn, cs = c.sin(y), c.cos(y)
            coh += sn / y
            dcoh += k * (y * cs - sn) / y**2
        coh *= self.nz
        dcoh *= self.nz
        s2 = c.sin(th / 2)
        dw = c.exp(-2 * self.kk * s2**4)
        ddw = -4 * self.kk * s2**3 * c.cos(th / 2) * dw
        s = self.cc * dw * coh + (1 - dw) * self.diff
        ds = self.cc * (ddw * coh + dw * dcoh) - ddw * self.diff
        return s, ds

    def psi_grad(self, z, R):
        """(psi_r, d/dz, d/dR) at absolute mp coordinates."""
        c = self.ctx
        ik = c.mpc(0, self.k0)
        g = c.exp(-(R**2) / (2 * self.beta) + ik * z)
        r = c.sqrt(z * z + R * R)
        u = R**2 / (r + z) if z > 0 else r - z
        th = c.atan2(R, z)
        s, ds = self.profile(th)
        F = c.exp(ik * r) / u
        Lz = ik * z / r + 1 / r
        LR = ik * R / r - R / (r * u)
        h = self.const * s * F
        hz = self.const * F * (ds * (-R / r**2) + s * Lz)
        hR = self.const * F * (ds * (z / r**2) + s * LR)
        return g + h, ik * g + hz, -R / self.beta * g + hR

    def current(self, z, R):
        p, pz, pR = self.psi_grad(z, R)
        cp = self.ctx.conj(p)
        return self.ctx.im(cp * pz), self.ctx.im(cp * pR), abs(p) ** 2

    def speed(self, z, R):
        jz, jR, rho = self.current(z, R)
        return self.hm * self.ctx.sqrt(jz**2 + jR**2) / rho

    def point(self, anchor, off):
        m = self.ctx.mpf
        return m(anchor[0]) + m(float(off[0])), m(anchor[1]) + m(float(off[1]))

    def refine_node(self, anchor, off):
        c = self.ctx

        def f(z, R):
            p = self.psi_grad(z, R)[0]
            return [c.re(p), c.im(p)]

        def J(z, R):
            _, pz, pR = self.psi_grad(z, R)
            return [[c.re(pz), c.re(pR)], [c.im(pz), c.im(pR)]]

        return c.findroot(f, self.point(anchor, off), J=J)

    def refine_xpoint(self, anchor, off):
        c = self.ctx
        return c.findroot(lambda z, R: list(self.current(z, R)[:2]), self.point(anchor, off))


def refine_complex(cfg, anchor, node_off, x_off, mode=Mode.ADIABATIC, t=0.0, dps=DEFAULT_DPS):
    """Re-solve node and X-point at ``dps`` digits.

    Returns ``(node_offset, x_offset, speed_at_x)`` with offsets relative to
    ``anchor`` as floats and the speed evaluated at the rounded X-point.
    """
    pf = PreciseField(cfg, mode, t, dps)
    m = pf.ctx.mpf
    nd = pf.refine_node(anchor, node_off)
    xp = pf.refine_xpoint(anchor, x_off)
    node = (float(nd[0] - m(anchor[0])), float(nd[1] - m(anchor[1])))
    x = (float(xp[0] - m(anchor[0])), float(xp[1] - m(anchor[1])))
    speed = float(pf.speed(*pf.point(anchor, x)))
    return node, x, speed
