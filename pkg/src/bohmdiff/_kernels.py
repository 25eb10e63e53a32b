"""Compiled velocity field and Dormand-Prince 5(4) integrator.

This mirrors the first-order part of :mod:`bohmdiff.wavefield` for speed;
``tests/test_kernels.py`` keeps the two in agreement.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .config import THETA_MIN, Mode, PhysicalConfig
from .wavefield import bragg_angles

# parameter vector layout
K0, D, CRE, CIM, HM, CC, DIFF, NZ, KK, MODE, TFROZ, THMIN, COHB = range(13)
N_PARAMS = 13

# the Bragg sum is skipped when its bound falls below this fraction of the diffuse term
COHERENT_SKIP = 1e-17

MODE_CODES = {Mode.ADIABATIC: 0, Mode.FROZEN: 1, Mode.TIME_DEPENDENT: 2}

# integrator status codes
DETECTED, TIMEOUT, NODE_ENCOUNTER, STEP_UNDERFLOW, ARC_DONE, MAX_STEPS, FORWARD_CONE = range(7)
STATUS_NAMES = (
    "detected",
    "timeout",
    "node_encounter",
    "step_underflow",
    "arc_done",
    "max_steps",
    "forward_cone",
)


def pack_params(cfg: PhysicalConfig, mode=Mode.ADIABATIC, t_frozen=0.0):
    const = -2.0 * cfg.outgoing_strength * cfg.D / cfg.a * complex(math.cos(cfg.delta), math.sin(cfg.delta))
    p = np.zeros(N_PARAMS)
    p[K0] = cfg.k0
    p[D] = cfg.D
    p[CRE] = const.real
    p[CIM] = const.imag
    p[HM] = cfg.hbar_over_m
    p[CC] = cfg.C_coherent
    p[DIFF] = cfg.C_diffuse * math.sqrt(cfg.d / cfg.a)
    p[NZ] = cfg.d / cfg.a
    p[KK] = cfg.k0**2 * cfg.sigma_a**2
    p[MODE] = MODE_CODES[Mode(mode)]
    p[TFROZ] = t_frozen
    p[THMIN] = THETA_MIN
    thq = bragg_angles(cfg)
    kap = 0.5 * cfg.k0 * cfg.d * np.sin(thq)
    # |sum sinc| <= q_max, |sum kappa sinc'| <= sum kappa, |dw'| <= 4 kk dw
    nq = len(thq)
    p[COHB] = cfg.C_coherent * p[NZ] * (nq + kap.sum() + 4.0 * p[KK] * nq)
    return p, thq, kap


@njit(cache=True)
def profile1(theta, p, thq, kap):
    """s(theta) and ds/dtheta (see wavefield.s_profile)."""
    s = math.sin(0.5 * theta)
    c = math.cos(0.5 * theta)
    dw = math.exp(-2.0 * p[KK] * s**4)
    dw1 = -4.0 * p[KK] * s**3 * c * dw
    if dw * p[COHB] < COHERENT_SKIP * p[DIFF]:
        return (1.0 - dw) * p[DIFF], -dw1 * p[DIFF]
    c0 = 0.0
    c1 = 0.0
    for i in range(thq.shape[0]):
        y = kap[i] * (theta - thq[i])
        if abs(y) < 1e-2:
            y2 = y * y
            sc = 1.0 - y2 / 6.0 * (1.0 - y2 / 20.0 * (1.0 - y2 / 42.0))
            sd = y * (-1.0 / 3.0 + y2 * (1.0 / 30.0 - y2 * (1.0 / 840.0 - y2 / 45360.0)))
        else:
            sn = math.sin(y)
            cs = math.cos(y)
            sc = sn / y
            sd = (y * cs - sn) / (y * y)
        c0 += sc
        c1 += kap[i] * sd
    c0 *= p[NZ]
    c1 *= p[NZ]
    val = p[CC] * dw * c0 + (1.0 - dw) * p[DIFF]
    der = p[CC] * (dw1 * c0 + dw * c1) - dw1 * p[DIFF]
    return val, der


@njit(cache=True)
def velocity(z, R, t, p, thq, kap):
    """Bohmian velocity from the reduced wavefunction.

    Returns (vz, vR, |psi_r|^2). Raises nothing; the caller checks theta.
    """
    k0 = p[K0]
    D2 = p[D] * p[D]
    mode = p[MODE]
    if mode == 0.0:
        bre = D2
        bim = 0.0
    else:
        tt = p[TFROZ] if mode == 1.0 else t
        bre = D2
        bim = p[HM] * tt
    binv = 1.0 / complex(bre, bim)
    g = np.exp(-R * R * 0.5 * binv) * complex(math.cos(k0 * z), math.sin(k0 * z))
    gz = 1j * k0 * g
    gR = -R * binv * g

    r = math.hypot(z, R)
    theta = math.atan2(R, z)
    if z > 0.0:
        u = R * R / (r + z)
    else:
        u = r - z
    s0, s1 = profile1(theta, p, thq, kap)
    const = complex(p[CRE], p[CIM])
    kr = k0 * r
    F = const * complex(math.cos(kr), math.sin(kr)) / u
    r2 = r * r
    Lz = complex(1.0 / r, k0 * z / r)
    LR = complex(-R / (r * u), k0 * R / r)
    h = F * s0
    hz = F * (s1 * (-R / r2) + s0 * Lz)
    hR = F * (s1 * (z / r2) + s0 * LR)

    ps = g + h
    pz = gz + hz
    pR = gR + hR
    rho = ps.real * ps.real + ps.imag * ps.imag
    jz = ps.real * pz.imag - ps.imag * pz.real
    jR = ps.real * pR.imag - ps.imag * pR.real
    if R == 0.0:
        # axisymmetry; the profile's residual slope at theta = pi (~1e-68 v0) is dropped
        jR = 0.0
    return p[HM] * jz / rho, p[HM] * jR / rho, rho


@njit(cache=True)
def velocity_many(z, R, t, p, thq, kap):
    n = z.shape[0]
    out = np.empty((3, n))
    for i in range(n):
        vz, vR, rho = velocity(z[i], R[i], t, p, thq, kap)
        out[0, i] = vz
        out[1, i] = vR
        out[2, i] = rho
    return out


@njit(cache=True)
def velocity_along(z, R, t, p, thq, kap):
    """velocity_many with a per-point time array."""
    n = z.shape[0]
    out = np.empty((3, n))
    for i in range(n):
        vz, vR, rho = velocity(z[i], R[i], t[i], p, thq, kap)
        out[0, i] = vz
        out[1, i] = vR
        out[2, i] = rho
    return out


# Dormand-Prince 5(4) tableau
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
C2, C3, C4, C5 = 0.2, 0.3, 0.8, 8.0 / 9.0
E1, E3, E4, E5, E6, E7 = 71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0
DC1 = -12715105075.0 / 11282082432.0
DC3 = 87487479700.0 / 32700410799.0
DC4 = -10690763975.0 / 1880347072.0
DC5 = 701980252875.0 / 199316789632.0
DC6 = -1453857185.0 / 822651844.0
DC7 = 69997945.0 / 29380423.0


@njit(cache=True)
def _rhs(y, t0, tau, direction, p, thq, kap, out):
    vz, vR, rho = velocity(y[0], y[1], t0 + direction * tau, p, thq, kap)
    out[0] = direction * vz
    out[1] = direction * vR
    out[2] = math.hypot(vz, vR)
    return rho


@njit(cache=True)
def _dense(rc, th, i):
    return rc[0, i] + th * (rc[1, i] + (1.0 - th) * (rc[2, i] + th * (rc[3, i] + (1.0 - th) * rc[4, i])))


@njit(cache=True)
def _near_strip(theta, centers, halfwidths, margin):
    n = centers.shape[0]
    if n == 0:
        return False
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) // 2
        if centers[mid] < theta:
            lo = mid + 1
        else:
            hi = mid
    for j in (lo - 1, lo):
        if 0 <= j < n and abs(theta - centers[j]) < margin * halfwidths[j]:
            return True
    return False


@njit(cache=True)
def integrate(
    z0, R0, t0, direction, p, thq, kap,
    rtol, atol, h_max, h_init, h_min, tau_max, r_detect, s_max, rho_min, max_steps,
    sample_ds, strip_centers, strip_halfwidths, strip_margin,
):
    """Integrate dz/dtau, dR/dtau = direction * v(z, R, t0 + direction * tau).

    Stops at r >= r_detect, arc length >= s_max, tau >= tau_max, a density
    below rho_min, or when the step falls below h_min. The stopping point of
    the first two is located on the dense output. Samples (tau, z, R, s) are
    stored every ``sample_ds`` of arc length and at every step whose angle is
    within ``strip_margin`` half-widths of a strip centre.

    Returns (status, samples, n_samples, n_steps, n_rejected).
    """
    cap = 4096
    samples = np.empty((cap, 4))
    y = np.empty(3)
    y[0] = z0
    y[1] = R0
    y[2] = 0.0
    ytmp = np.empty(3)
    ynew = np.empty(3)
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    k5 = np.empty(3)
    k6 = np.empty(3)
    k7 = np.empty(3)
    rc = np.empty((5, 3))

    samples[0, 0] = 0.0
    samples[0, 1] = z0
    samples[0, 2] = R0
    samples[0, 3] = 0.0
    ns = 1
    last_s = 0.0

    rho = _rhs(y, t0, 0.0, direction, p, thq, kap, k1)
    if rho < rho_min:
        return NODE_ENCOUNTER, samples[:ns], ns, 0, 0
    tau = 0.0
    h = h_init
    if h > h_max:
        h = h_max
    n_steps = 0
    n_rej = 0
    status = MAX_STEPS
    facmax = 5.0
    err_old = 1e-4
    while n_steps + n_rej < max_steps:
        if tau + h > tau_max:
            h = tau_max - tau
        if h < h_min:
            status = STEP_UNDERFLOW
            break
        for i in range(3):
            ytmp[i] = y[i] + h * A21 * k1[i]
        _rhs(ytmp, t0, tau + C2 * h, direction, p, thq, kap, k2)
        for i in range(3):
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        _rhs(ytmp, t0, tau + C3 * h, direction, p, thq, kap, k3)
        for i in range(3):
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        _rhs(ytmp, t0, tau + C4 * h, direction, p, thq, kap, k4)
        for i in range(3):
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        _rhs(ytmp, t0, tau + C5 * h, direction, p, thq, kap, k5)
        for i in range(3):
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
        _rhs(ytmp, t0, tau + h, direction, p, thq, kap, k6)
        for i in range(3):
            ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
        rho_new = _rhs(ynew, t0, tau + h, direction, p, thq, kap, k7)
        err = 0.0
        for i in range(2):
            e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            err += (e / sc) ** 2
        err = math.sqrt(err / 2.0)
        if not (err <= 1.0):
            n_rej += 1
            if err != err:
                h *= 0.1
            else:
                h *= max(0.1, 0.9 * err ** -0.2)
            facmax = 1.0
            continue

        n_steps += 1
        for i in range(3):
            rc[0, i] = y[i]
            rc[1, i] = ynew[i] - y[i]
            rc[2, i] = h * k1[i] - rc[1, i]
            rc[3, i] = rc[1, i] - h * k7[i] - rc[2, i]
            rc[4, i] = h * (DC1 * k1[i] + DC3 * k3[i] + DC4 * k4[i] + DC5 * k5[i] + DC6 * k6[i] + DC7 * k7[i])

        r_new = math.hypot(ynew[0], ynew[1])
        hit_r = r_new >= r_detect
        hit_s = ynew[2] >= s_max
        if hit_r or hit_s:
            # bisection on the dense output for the first crossing
            lo = 0.0
            hi = 1.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                zm = _dense(rc, mid, 0)
                Rm = _dense(rc, mid, 1)
                sm = _dense(rc, mid, 2)
                crossed = (hit_r and math.hypot(zm, Rm) >= r_detect) or (hit_s and sm >= s_max)
                if crossed:
                    hi = mid
                else:
                    lo = mid
            for i in range(3):
                ynew[i] = _dense(rc, hi, i)
            tau_end = tau + hi * h
            if ns >= cap:
                cap *= 2
                grown = np.empty((cap, 4))
                grown[:ns] = samples[:ns]
                samples = grown
            samples[ns, 0] = tau_end
            samples[ns, 1] = ynew[0]
            samples[ns, 2] = ynew[1]
            samples[ns, 3] = ynew[2]
            ns += 1
            status = DETECTED if (hit_r and math.hypot(ynew[0], ynew[1]) >= r_detect * (1 - 1e-12)) else ARC_DONE
            return status, samples[:ns], ns, n_steps, n_rej

        tau += h
        for i in range(3):
            y[i] = ynew[i]
            k1[i] = k7[i]
        th_now = math.atan2(y[1], y[0])
        if th_now <= p[THMIN]:
            status = FORWARD_CONE
            break
        if rho_new < rho_min:
            status = NODE_ENCOUNTER
            break
        if y[2] - last_s >= sample_ds or _near_strip(th_now, strip_centers, strip_halfwidths, strip_margin):
            if ns >= cap:
                cap *= 2
                grown = np.empty((cap, 4))
                grown[:ns] = samples[:ns]
                samples = grown
            samples[ns, 0] = tau
            samples[ns, 1] = y[0]
            samples[ns, 2] = y[1]
            samples[ns, 3] = y[2]
            ns += 1
            last_s = y[2]
        if tau >= tau_max:
            status = TIMEOUT
            break
        # PI control (exponents 0.17 and 0.04 as in Hairer's dopri5)
        e = max(err, 1e-10)
        fac = 0.9 * e**-0.17 * err_old**0.04
        h *= min(facmax, max(0.2, fac))
        err_old = max(err, 1e-4)
        facmax = 5.0
        if h > h_max:
            h = h_max

    if samples[ns - 1, 0] != tau:
        if ns >= cap:
            cap += 1
            grown = np.empty((cap, 4))
            grown[:ns] = samples[:ns]
            samples = grown
        samples[ns, 0] = tau
        samples[ns, 1] = y[0]
        samples[ns, 2] = y[1]
        samples[ns, 3] = y[2]
        ns += 1
    return status, samples[:ns], ns, n_steps, n_rej
