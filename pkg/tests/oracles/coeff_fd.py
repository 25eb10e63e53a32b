"""Finite-difference expansion coefficients of psi_r around a node."""

import numpy as np

from bohmdiff import vortices as V

FD_STEP = 1e-5
# 6th-order central stencils
D1 = np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0
D2 = np.array([2, -27, 270, -490, 270, -27, 2]) / 180.0
OFFS = np.arange(-3, 4)


def _psi(cfg, anchor, u, v):
    return V._jet(cfg, anchor, np.asarray(u, float), np.asarray(v, float), 1).v


def fd_coefficients(cfg, anchor, off, h=FD_STEP):
    u0, v0 = off
    fu = _psi(cfg, anchor, u0 + OFFS * h, np.full(7, v0))
    fv = _psi(cfg, anchor, np.full(7, u0), v0 + OFFS * h)
    cz, cR = D1 @ fu / h, D1 @ fv / h
    czz, cRR = D2 @ fu / h**2, D2 @ fv / h**2
    U, W = np.meshgrid(OFFS * h, OFFS * h, indexing="ij")
    grid = _psi(cfg, anchor, u0 + U, v0 + W)
    czR = D1 @ grid @ D1 / h**2
    return {"10": cz, "01": cR, "20": czz, "02": cRR, "11": czR}
