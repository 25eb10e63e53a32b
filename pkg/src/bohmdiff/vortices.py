"""Nodal points of the diffracted wave and their X-point companions.

A nodal point (psi_r = 0) lies on the separator where, in addition to the
amplitude balance, the phases of the ingoing and outgoing terms agree:

    k0 (r - z) = k0 R tan(theta/2) = 2 pi q_bar + phi_s(theta)

with ``phi_s`` = 0 when the outgoing amplitude is a positive multiple of the
ingoing one at equal phase (the case for the reference parameters).

Near a node the flow is a vortex; the nearby stagnation point of the velocity
field (the X-point) is a saddle whose manifolds steer passing trajectories.
All local work is done in anchored coordinates: offsets (u, v) from a float
anchor, with the large phases k0 z, k0 r split so that offsets far below the
anchor's ulp keep full precision (R_X reaches 1e-9 nm in the diffuse domain).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels, _precise
from .config import THETA_MIN, Mode, PhysicalConfig
from .errors import DegenerateNode, NoRoot, NotSaddle, NoXPoint, PolishDiverged
from .separator import classify_channel, g_of_theta, roots_for_level
from .wavefield import bragg_angles, reduced_jet, s_profile

NEWTON_MAX_ITER = 60
PHASE_TOL = 1e-6
V_TOL_FACTOR = 1e-6


# --- anchored field helpers -----------------------------------------------------


def _jet(cfg, anchor, u, v, order=1, mode=Mode.ADIABATIC, t=0.0):
    return reduced_jet(cfg, u, v, t, mode, order, anchor=anchor)


def local_velocity(cfg, anchor, u, v, mode=Mode.ADIABATIC, t=0.0) -> np.ndarray:
    """Velocity at anchor + (u, v)."""
    jet = _jet(cfg, anchor, u, v, 1, mode, t)
    return cfg.hbar_over_m * np.imag(jet.grad / jet.v)


def _current_and_jacobian(cfg, anchor, u, v, mode=Mode.ADIABATIC, t=0.0):
    """j' = Im(conj(psi) grad psi) and its (z, R) Jacobian, reduced scale."""
    jt = _jet(cfg, anchor, u, v, 2, mode, t)
    c = np.conj(jt.v)
    j = np.array([np.imag(c * jt.z), np.imag(c * jt.R)])
    J = np.array(
        [
            [np.imag(c * jt.zz), np.imag(np.conj(jt.R) * jt.z + c * jt.zR)],
            [np.imag(np.conj(jt.z) * jt.R + c * jt.zR), np.imag(c * jt.RR)],
        ]
    )
    return j, J, jt


# --- nodal points ------------------------------------------------------------------


@dataclass(frozen=True)
class NodalPoint:
    z0: float
    R0: float
    q_bar: int
    residual: float
    branch: str = "outer"
    seed: tuple[float, float] | None = None

    @property
    def theta0(self) -> float:
        return math.atan2(self.R0, self.z0)

    @property
    def r0(self) -> float:
        return math.hypot(self.z0, self.R0)

    @property
    def anchor(self) -> tuple[float, float]:
        return (self.z0, self.R0)


def _outgoing_const(cfg):
    return -2.0 * cfg.outgoing_strength * cfg.D / cfg.a * complex(math.cos(cfg.delta), math.sin(cfg.delta))


def phase_offset(cfg: PhysicalConfig, theta) -> np.ndarray:
    """phi_s(theta) in [0, 2 pi): k0 (r - z) = 2 pi q_bar + phi_s at a node."""
    s = s_profile(cfg, theta)[0]
    w = -_outgoing_const(cfg) * s
    return np.mod(-np.angle(w), 2 * np.pi)


def phase_integer(cfg: PhysicalConfig, z, R) -> np.ndarray:
    """Real-valued q_bar(z, R) = (k0 R tan(theta/2) - phi_s) / 2 pi."""
    z = np.asarray(z, dtype=float)
    R = np.asarray(R, dtype=float)
    r = np.hypot(z, R)
    u = np.where(z > 0, R**2 / (r + np.abs(z)), r - z)
    theta = np.arctan2(R, z)
    return (cfg.k0 * u - phase_offset(cfg, theta)) / (2 * np.pi)


def node_spacing(cfg: PhysicalConfig, theta: float) -> float:
    """Spacing in R between successive q_bar phase curves at fixed theta."""
    return 2 * np.pi / (cfg.k0 * math.tan(0.5 * theta))


def _branch_radius(cfg, theta, branch):
    roots = roots_for_level(cfg, float(g_of_theta(cfg, theta)))
    if roots.inner is None or roots.clamped and branch == "outer":
        return None
    return roots.outer if branch == "outer" else roots.inner


NOISE_FACTOR = 100.0
STALL_FACTOR = 1e3


def _newton(step, x0, tol, max_radius, fail):
    """Newton loop; ``step(x)`` returns ``(correction, noise)``.

    ``noise`` is the position uncertainty implied by rounding in the residual
    (machine epsilon times the residual scale, mapped through the inverse
    Jacobian). Iteration stops when the correction is below ``tol`` or below
    the noise level.
    """
    x = np.array(x0, dtype=float)
    n_prev, stalls = math.inf, 0
    for _ in range(NEWTON_MAX_ITER):
        dx, noise = step(x)
        x = x - dx
        n = float(np.hypot(*dx))
        if not np.all(np.isfinite(x)) or np.hypot(*x) > max_radius:
            raise fail("Newton iteration left the search neighbourhood")
        if n <= tol or n <= noise:
            return x
        # corrections no longer shrink and sit near the rounding floor
        stalls = stalls + 1 if (n > 0.5 * n_prev and n < STALL_FACTOR * noise) else 0
        if stalls >= 3:
            return x
        n_prev = n
    raise fail("Newton iteration did not converge")


def _inv_norm(J):
    return float(np.linalg.norm(np.linalg.inv(J), 2))


def _node_step(cfg, anchor, mode, t):
    eps = np.finfo(float).eps

    def step(x):
        jet = _jet(cfg, anchor, x[0], x[1], 1, mode, t)
        J = np.array([[jet.z.real, jet.R.real], [jet.z.imag, jet.R.imag]])
        amp = float(np.exp(-((anchor[1] + x[1]) ** 2) / (2 * cfg.D**2)))
        return np.linalg.solve(J, [jet.v.real, jet.v.imag]), NOISE_FACTOR * eps * amp * _inv_norm(J)

    return step


def polish_node(cfg, seed, mode=Mode.ADIABATIC, t=0.0, max_step=None):
    """2-D Newton on (Re psi_r, Im psi_r) from ``seed`` (absolute z, R)."""
    if max_step is None:
        max_step = cfg.lambda0
    anchor = (float(seed[0]), float(seed[1]))
    scale = abs(anchor[0]) + abs(anchor[1])
    fail = lambda msg: PolishDiverged(msg, seed)  # noqa: E731
    try:
        x = _newton(_node_step(cfg, anchor, mode, t), (0.0, 0.0), 1e-3 * np.spacing(scale), max_step, fail)
    except np.linalg.LinAlgError as exc:
        raise PolishDiverged("singular Jacobian during node polish", seed) from exc
    return anchor[0] + x[0], anchor[1] + x[1]


def _node_from(cfg, zc, Rc, q_bar, branch, seed, mode):
    jet = _jet(cfg, (zc, Rc), 0.0, 0.0, 1, mode)
    return NodalPoint(float(zc), float(Rc), int(q_bar), float(abs(jet.v)), branch, seed)


def node_for_qbar(cfg, q_bar, theta_lo, theta_hi, branch="outer", polish=True, mode=Mode.ADIABATIC):
    """Nodal point with phase integer ``q_bar`` between two bracketing angles."""

    def f(th):
        R = _branch_radius(cfg, th, branch)
        if R is None:
            raise NoRoot(f"no {branch} separator root at theta={th}")
        return float(phase_integer(cfg, R / math.tan(th), R)) - q_bar

    th = brentq(f, theta_lo, theta_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    R = _branch_radius(cfg, th, branch)
    seed = (R / math.tan(th), R)
    if not polish:
        return _node_from(cfg, seed[0], seed[1], q_bar, branch, seed, mode)
    zc, Rc = polish_node(cfg, seed, mode)
    q_check = float(phase_integer(cfg, zc, Rc))
    if abs(q_check - q_bar) > 0.25:
        raise PolishDiverged(f"polish jumped to phase integer {q_check:.3f}", seed)
    return _node_from(cfg, zc, Rc, q_bar, branch, seed, mode)


def find_nodal_points(
    cfg: PhysicalConfig,
    theta_window,
    branch: str = "outer",
    q_bars=None,
    n_grid: int = 4000,
    max_nodes: int = 2000,
    polish: bool = True,
    mode: Mode = Mode.ADIABATIC,
):
    """Nodal points on one separator branch inside ``theta_window``.

    Every integer q_bar crossed by the phase integer along the branch gives a
    node (restricted to ``q_bars`` when given). Returns ``(nodes, failures)``
    where failures lists ``(q_bar, error)`` pairs that were skipped.
    """
    if branch not in ("inner", "outer"):
        raise ValueError("branch must be 'inner' or 'outer'")
    lo, hi = map(float, theta_window)
    if not (THETA_MIN < lo < hi < np.pi):
        raise ValueError("theta_window must lie inside (theta_min, pi)")
    theta = np.linspace(lo, hi, n_grid + 1)
    Rb = np.array([_branch_radius(cfg, th, branch) or np.nan for th in theta])
    Q = phase_integer(cfg, Rb / np.tan(theta), Rb)
    phi = phase_offset(cfg, theta)
    wanted = None if q_bars is None else {int(q) for q in q_bars}
    tasks = []
    for i in range(n_grid):
        a, b = Q[i], Q[i + 1]
        if not (np.isfinite(a) and np.isfinite(b)) or abs(phi[i] - phi[i + 1]) > 1e-6:
            continue
        k_lo, k_hi = math.ceil(min(a, b)), math.floor(max(a, b))
        if wanted is None and k_hi - k_lo > max_nodes:
            raise ValueError(f"more than {max_nodes} nodes in one grid cell; pass q_bars or refine")
        for k in range(k_lo, k_hi + 1):
            if (wanted is None or k in wanted) and k != a and k != b:
                tasks.append((k, theta[i], theta[i + 1]))
        if len(tasks) > max_nodes:
            raise ValueError(f"more than {max_nodes} nodes in window; pass q_bars")
    nodes, failures = [], []
    for k, a, b in tasks:
        try:
            nodes.append(node_for_qbar(cfg, k, a, b, branch, polish, mode))
        except (NoRoot, PolishDiverged, ValueError) as exc:
            failures.append((k, exc))
    nodes.sort(key=lambda n: n.theta0)
    return nodes, failures


# --- local expansion -----------------------------------------------------------------


@dataclass(frozen=True)
class ExpansionCoefficients:
    """psi_r ~ (a10 + i b10) u + (a01 + i b01) v + (1/2)(a20 + i b20) u^2
    + (1/2)(a02 + i b02) v^2 + (a11 + i b11) u v around a node."""

    a10: float
    b10: float
    a01: float
    b01: float
    a20: float
    b20: float
    a02: float
    b02: float
    a11: float
    b11: float

    def as_complex(self) -> dict:
        return {
            "10": complex(self.a10, self.b10),
            "01": complex(self.a01, self.b01),
            "20": complex(self.a20, self.b20),
            "02": complex(self.a02, self.b02),
            "11": complex(self.a11, self.b11),
        }

    def evaluate(self, u, v):
        c = self.as_complex()
        return c["10"] * u + c["01"] * v + 0.5 * c["20"] * u * u + 0.5 * c["02"] * v * v + c["11"] * u * v

    def symmetry_defects(self) -> tuple[float, float]:
        """|a20 + a02| / |a20| and |b20 + b02| / |b20|."""
        return abs(self.a20 + self.a02) / abs(self.a20), abs(self.b20 + self.b02) / abs(self.b20)


def coefficients_at(cfg, anchor, u=0.0, v=0.0, mode=Mode.ADIABATIC, t=0.0) -> ExpansionCoefficients:
    jt = _jet(cfg, anchor, u, v, 2, mode, t)
    vals = [jt.z, jt.R, jt.zz, jt.RR, jt.zR]
    a10, a01, a20, a02, a11 = (float(np.real(x)) for x in vals)
    b10, b01, b20, b02, b11 = (float(np.imag(x)) for x in vals)
    return ExpansionCoefficients(a10, b10, a01, b01, a20, b20, a02, b02, a11, b11)


def expansion_coefficients(cfg: PhysicalConfig, node: NodalPoint, mode=Mode.ADIABATIC, t=0.0):
    """Exact first and second derivatives of psi_r at the node."""
    return coefficients_at(cfg, node.anchor, 0.0, 0.0, mode, t)


def leading_order_coefficients(cfg: PhysicalConfig, z0: float, R0: float) -> ExpansionCoefficients:
    """Dominant terms of the coefficients away from Bragg angles, errors O(d/D)."""
    th = math.atan2(R0, z0)
    k0 = cfg.k0
    e = math.exp(-(R0**2) / (2 * cfg.D**2))
    s, c = math.sin(k0 * z0), math.cos(k0 * z0)
    h = 0.5 * k0**2
    return ExpansionCoefficients(
        a10=-e * s * k0 * (1 - math.cos(th)),
        b10=e * c * k0 * (1 - math.cos(th)),
        a01=e * s * k0 * math.sin(th),
        b01=-e * c * k0 * math.sin(th),
        a20=-e * c * h * math.sin(th) ** 2,
        b20=-e * s * h * math.sin(th) ** 2,
        a02=e * c * h * math.sin(th) ** 2,
        b02=e * s * h * math.sin(th) ** 2,
        a11=e * c * h * math.sin(2 * th),
        b11=e * s * h * math.sin(2 * th),
    )


@dataclass(frozen=True)
class QuadraticSystem:
    """j_z ~ A v + B1 u^2 + C1 v^2 + D1 u v,  j_R ~ -A u + B2 u^2 + C2 v^2 + D2 u v."""

    A: float
    B1: float
    C1: float
    D1: float
    B2: float
    C2: float
    D2: float

    @classmethod
    def from_coefficients(cls, c: ExpansionCoefficients) -> "QuadraticSystem":
        """Second-order truncation of Im(conj(psi) grad psi) for the expansion."""
        return cls(
            A=c.a01 * c.b10 - c.a10 * c.b01,
            B1=0.5 * (c.a10 * c.b20 - c.a20 * c.b10),
            C1=c.a01 * c.b11 - c.a11 * c.b01 + 0.5 * (c.a02 * c.b10 - c.a10 * c.b02),
            D1=c.a01 * c.b20 - c.a20 * c.b01,
            B2=c.a10 * c.b11 - c.a11 * c.b10 + 0.5 * (c.a20 * c.b01 - c.a01 * c.b20),
            C2=0.5 * (c.a01 * c.b02 - c.a02 * c.b01),
            D2=c.a10 * c.b02 - c.a02 * c.b10,
        )

    @classmethod
    def printed_form(cls, c: ExpansionCoefficients) -> "QuadraticSystem":
        """The compact coefficient formulas that assume a20 = -a02, b20 = -b02.

        Kept for comparison only; they omit the a01 b11 and a10 b11 products
        and exchange the roles of B2 and C2 relative to the direct expansion.
        """
        return cls(
            A=c.a01 * c.b10 - c.a10 * c.b01,
            B1=0.5 * (c.a02 * c.b10 - c.a10 * c.b02),
            C1=0.5 * (c.a02 * c.b10 - c.a10 * c.b02 - 2 * c.a11 * c.b01),
            D1=c.a02 * c.b01 - c.a01 * c.b02,
            B2=0.5 * (c.a01 * c.b02 - c.a02 * c.b01),
            C2=0.5 * (c.a01 * c.b02 - c.a02 * c.b01 - 2 * c.a11 * c.b10),
            D2=c.a10 * c.b02 - c.a02 * c.b10,
        )

    def residual(self, u, v):
        return np.array(
            [
                self.A * v + self.B1 * u * u + self.C1 * v * v + self.D1 * u * v,
                -self.A * u + self.B2 * u * u + self.C2 * v * v + self.D2 * u * v,
            ]
        )

    def jacobian(self, u, v):
        return np.array(
            [
                [2 * self.B1 * u + self.D1 * v, self.A + 2 * self.C1 * v + self.D1 * u],
                [-self.A + 2 * self.B2 * u + self.D2 * v, 2 * self.C2 * v + self.D2 * u],
            ]
        )

    @property
    def quad_scale(self) -> float:
        return max(abs(self.B1), abs(self.C1), abs(self.D1), abs(self.B2), abs(self.C2), abs(self.D2))


def _newton_quadratic(sys_, uv, tol=1e-15):
    x = np.array(uv, dtype=float)
    for _ in range(NEWTON_MAX_ITER):
        try:
            dx = np.linalg.solve(sys_.jacobian(*x), sys_.residual(*x))
        except np.linalg.LinAlgError:
            return None
        x = x - dx
        if not np.all(np.isfinite(x)):
            return None
        if np.hypot(*dx) <= tol * max(np.hypot(*x), 1e-300):
            return x
    return x


def _brute_scan(sys_, radius, n=401):
    g = np.linspace(-radius, radius, n)
    U, V = np.meshgrid(g, g, indexing="ij")
    res = np.hypot(*sys_.residual(U, V)) / (np.hypot(U, V) + radius / n)
    seeds = []
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            w = res[i - 1 : i + 2, j - 1 : j + 2]
            if res[i, j] == w.min() and U[i, j] ** 2 + V[i, j] ** 2 <= radius**2:
                seeds.append((U[i, j], V[i, j]))
    return seeds


def xpoint_solve(coeffs_or_system, scan_fallback: bool = True):
    """Nearest nontrivial root (uX, vX) of the quadratic X-point system.

    The substitution (u, v) = rho (cos phi, sin phi) turns the system into the
    cubic  C2 t^3 + (C1 + D2) t^2 + (B2 + D1) t + B1 = 0  for t = tan phi, with
    rho = A cos(phi) / Q2(phi); each real root seeds a Newton polish. A brute
    scan of the disk of radius 10 |A| / max|B, C, D| is the fallback.
    Returns ``(uX, vX, system)``.
    """
    sys_ = coeffs_or_system
    if isinstance(sys_, ExpansionCoefficients):
        sys_ = QuadraticSystem.from_coefficients(sys_)
    c_lin = sys_.quad_scale
    if c_lin == 0 or not np.isfinite(sys_.A):
        raise DegenerateNode("quadratic system has no second-order terms")
    if abs(sys_.A) == 0:
        raise DegenerateNode("A = 0: degenerate nodal point")
    radius = 10 * abs(sys_.A) / c_lin
    poly = [sys_.C2, sys_.C1 + sys_.D2, sys_.B2 + sys_.D1, sys_.B1]
    phis = []
    scale = max(abs(x) for x in poly)
    if abs(sys_.C2) < 1e-14 * scale:
        phis.append(0.5 * math.pi)
        poly = poly[1:]
    for t in np.roots(poly):
        if abs(t.imag) <= 1e-9 * (1 + abs(t)):
            phis.append(math.atan(t.real))
    candidates = []
    for phi in phis:
        c, s = math.cos(phi), math.sin(phi)
        q1 = sys_.B1 * c * c + sys_.C1 * s * s + sys_.D1 * c * s
        q2 = sys_.B2 * c * c + sys_.C2 * s * s + sys_.D2 * c * s
        rho = sys_.A * c / q2 if abs(q2) >= abs(q1) else -sys_.A * s / q1
        if not np.isfinite(rho) or rho == 0:
            continue
        x = _newton_quadratic(sys_, (rho * c, rho * s))
        if x is not None:
            candidates.append(x)
    if not candidates and scan_fallback:
        for seed in _brute_scan(sys_, radius):
            x = _newton_quadratic(sys_, seed)
            if x is not None:
                candidates.append(x)
    tiny = 1e-9 * abs(sys_.A) / c_lin
    good = []
    for x in candidates:
        r = np.hypot(*x)
        if r <= tiny:
            continue
        if np.hypot(*sys_.residual(*x)) <= 1e-9 * abs(sys_.A) * r:
            good.append(x)
    if not good:
        raise NoXPoint("no nontrivial root of the X-point system")
    best = min(good, key=lambda x: np.hypot(*x))
    return float(best[0]), float(best[1]), sys_


def polish_xpoint(cfg, anchor, uv, mode=Mode.ADIABATIC, t=0.0, max_radius=None):
    """Newton on the full current j = 0 from offset ``uv`` about ``anchor``."""
    r0 = float(np.hypot(*uv))
    if max_radius is None:
        max_radius = 10 * r0

    eps = np.finfo(float).eps

    def step(x):
        j, J, jt = _current_and_jacobian(cfg, anchor, x[0], x[1], mode, t)
        amp = float(np.exp(-((anchor[1] + x[1]) ** 2) / (2 * cfg.D**2)))
        noise = NOISE_FACTOR * eps * amp * float(np.hypot(*np.abs(jt.grad))) * _inv_norm(J)
        return np.linalg.solve(J, j), noise

    try:
        return _newton(step, uv, 1e-14 * r0, max_radius, NoXPoint)
    except np.linalg.LinAlgError as exc:
        raise NoXPoint("singular current Jacobian") from exc


# --- the node / X-point complex --------------------------------------------------------


@dataclass
class NodalComplex:
    node: NodalPoint
    coeffs: ExpansionCoefficients
    system: QuadraticSystem
    printed_system: QuadraticSystem
    node_offset: tuple[float, float]  # sub-ulp node position relative to its anchor
    uX_quadratic: float
    vX_quadratic: float
    uX: float
    vX: float
    mode: Mode = Mode.ADIABATIC
    t: float = 0.0
    eigenvalues: tuple[float, float] | None = None
    eigenvectors: tuple[np.ndarray, np.ndarray] | None = None
    jacobian: np.ndarray | None = None
    speed_at_x: float = float("nan")
    node_character: str = "center"
    flags: list[str] = field(default_factory=list)

    @property
    def RX(self) -> float:
        return math.hypot(self.uX, self.vX)

    @property
    def x_offset(self) -> tuple[float, float]:
        """X-point position relative to the node anchor."""
        return (self.node_offset[0] + self.uX, self.node_offset[1] + self.vX)

    @property
    def A(self):
        return self.system.A


def node_character(cfg, anchor, offset, rx, mode=Mode.ADIABATIC, t=0.0, n=64) -> str:
    """center / attractor / repellor from the mean radial flow on a small circle."""
    if Mode(mode) is Mode.ADIABATIC:
        return "center"
    rho = 0.05 * rx
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    u = offset[0] + rho * np.cos(ang)
    v = offset[1] + rho * np.sin(ang)
    vel = local_velocity(cfg, anchor, u, v, mode, t)
    radial = np.mean(vel[0] * np.cos(ang) + vel[1] * np.sin(ang))
    tangential = np.mean(np.abs(-vel[0] * np.sin(ang) + vel[1] * np.cos(ang)))
    if abs(radial) <= 1e-6 * tangential:
        return "center"
    return "repellor" if radial > 0 else "attractor"


def build_complex(
    cfg: PhysicalConfig, node: NodalPoint, mode=Mode.ADIABATIC, t=0.0, eigen=True, precise=True
) -> NodalComplex:
    """Expansion, X-point (quadratic seed, then full-field polish) and saddle data.

    When the double-precision speed at the X-point exceeds ``v_tol`` and
    ``precise`` is set, node and X-point are re-solved with mpmath.
    """
    anchor = node.anchor
    # re-polish the node in anchored coordinates to sub-ulp precision
    off = _newton(_node_step(cfg, anchor, mode, t), (0.0, 0.0), 0.0, cfg.lambda0, PolishDiverged)
    coeffs = coefficients_at(cfg, anchor, off[0], off[1], mode, t)
    uq, vq, system = xpoint_solve(coeffs)
    x = polish_xpoint(cfg, anchor, (off[0] + uq, off[1] + vq), mode, t, max_radius=10 * math.hypot(uq, vq) + np.hypot(*off))
    cx = NodalComplex(
        node=node,
        coeffs=coeffs,
        system=system,
        printed_system=QuadraticSystem.printed_form(coeffs),
        node_offset=(float(off[0]), float(off[1])),
        uX_quadratic=uq,
        vX_quadratic=vq,
        uX=float(x[0] - off[0]),
        vX=float(x[1] - off[1]),
        mode=Mode(mode),
        t=t,
    )
    vel = local_velocity(cfg, anchor, x[0], x[1], mode, t)
    cx.speed_at_x = float(np.hypot(*vel))
    v_tol = V_TOL_FACTOR * cfg.v0
    if cx.speed_at_x > v_tol and precise:
        # rounding-limited: redo node and X-point in extended precision
        off, xp, cx.speed_at_x = _precise.refine_complex(cfg, anchor, off, x, mode, t)
        cx.node_offset = off
        cx.uX, cx.vX = xp[0] - off[0], xp[1] - off[1]
        cx.flags.append("extended_precision")
    if cx.speed_at_x > v_tol:
        cx.flags.append("speed_at_x_above_tolerance")
    if eigen:
        xpoint_eigen(cfg, cx)
    cx.node_character = node_character(cfg, anchor, cx.node_offset, cx.RX, mode, t)
    return cx


def velocity_jacobian(cfg, cx: NodalComplex) -> np.ndarray:
    """d(v_z, v_R)/d(z, R) at the X-point; there j = 0 so dv = (hbar/m) dj / |psi|^2."""
    xo = cx.x_offset
    j, J, jt = _current_and_jacobian(cfg, cx.node.anchor, xo[0], xo[1], cx.mode, cx.t)
    rho = abs(jt.v) ** 2
    # the j grad(1/rho) term is kept for completeness; it vanishes at an exact root
    grad_rho = 2 * np.real(np.conj(jt.v) * jt.grad)
    return cfg.hbar_over_m * (J / rho - np.outer(j, grad_rho) / rho**2)


def xpoint_eigen(cfg: PhysicalConfig, cx: NodalComplex):
    """Eigenpairs of the velocity Jacobian at the X-point; raises NotSaddle."""
    M = velocity_jacobian(cfg, cx)
    w, V = np.linalg.eig(M)
    if np.any(np.abs(np.imag(w)) > 1e-12 * np.max(np.abs(w))):
        raise NotSaddle(f"complex eigenvalues {w}")
    w = np.real(w)
    V = np.real(V)
    if w[0] * w[1] >= 0:
        raise NotSaddle(f"eigenvalues of equal sign {w}")
    order = np.argsort(-w)  # unstable (positive) first
    w = w[order]
    V = V[:, order]
    vecs = tuple(V[:, k] / np.linalg.norm(V[:, k]) for k in range(2))
    cx.eigenvalues = (float(w[0]), float(w[1]))
    cx.eigenvectors = vecs
    cx.jacobian = M
    return cx.eigenvalues, cx.eigenvectors


def axis_angle(vec, direction) -> float:
    """Angle in [0, pi/2] between the line along ``vec`` and the line along ``direction``."""
    c = abs(np.dot(vec, direction)) / (np.linalg.norm(vec) * np.linalg.norm(direction))
    return math.acos(min(1.0, c))


# --- manifolds ----------------------------------------------------------------------


@dataclass
class Manifold:
    kind: str  # "unstable" or "stable"
    side: int  # +1 or -1 along the eigenvector
    points: np.ndarray  # (n, 2) absolute z, R
    status: str
    loop_side: bool  # launched towards the node

    def end_direction(self, tail: float = 1 / 3) -> np.ndarray:
        """Unit chord over the last ``tail`` fraction of the polyline."""
        i = min(int(len(self.points) * (1 - tail)), len(self.points) - 2)
        d = self.points[-1] - self.points[i]
        return d / np.hypot(*d)


@dataclass
class ManifoldSet:
    complex: NodalComplex
    branches: list[Manifold]
    epsilon: float
    loop_gap: float


def _section_crossing(points, node, axis):
    """First crossing of the ray node + s * axis (s > 0) by a polyline, or None."""
    rel = points - node
    along = rel @ axis
    perp = rel[:, 0] * axis[1] - rel[:, 1] * axis[0]
    for i in range(len(points) - 1):
        if perp[i] == 0 or perp[i] * perp[i + 1] < 0:
            w = perp[i] / (perp[i] - perp[i + 1]) if perp[i] != perp[i + 1] else 0.0
            if along[i] + w * (along[i + 1] - along[i]) > 0:
                return points[i] + w * (points[i + 1] - points[i])
    return None


def trace_manifolds(cfg: PhysicalConfig, cx: NodalComplex, arc_length: float | None = None, rtol=1e-12):
    """Integrate the four saddle branches of the adiabatic field.

    Branches start at X +- eps * eigenvector (eps = R_X/100); unstable ones run
    forward in time and stable ones backward, for ``arc_length`` (default
    12 R_X). ``loop_gap`` is the distance between the node-side unstable and
    stable branches where they cross the ray from X through the node, on the
    far side of the node (zero for an exactly closed loop).
    """
    if cx.eigenvectors is None:
        xpoint_eigen(cfg, cx)
    rx = cx.RX
    eps = rx / 100
    if arc_length is None:
        arc_length = 12 * rx
    p, thq, kap = _kernels.pack_params(cfg, cx.mode, cx.t)
    z0, R0 = cx.node.anchor
    xo = np.array(cx.x_offset)
    node_off = np.array(cx.node_offset)
    branches = []
    for kind, vec, direction in (("unstable", cx.eigenvectors[0], 1.0), ("stable", cx.eigenvectors[1], -1.0)):
        for side in (1, -1):
            start = xo + side * eps * vec
            toward = np.dot(start - xo, node_off - xo) > 0
            status, samples, ns, _, _ = _kernels.integrate(
                z0 + start[0], R0 + start[1], cx.t, direction, p, thq, kap,
                rtol, rtol * rx, 1e9, eps / cfg.v0, 1e-30, 1e9, 1e300, arc_length, 0.0, 10**7,
                rx / 200, np.empty(0), np.empty(0), 0.0,
            )
            pts = samples[:ns, 1:3]
            branches.append(Manifold(kind, side, pts, _kernels.STATUS_NAMES[status], bool(toward)))
    u_loop = next(b for b in branches if b.kind == "unstable" and b.loop_side)
    s_loop = next(b for b in branches if b.kind == "stable" and b.loop_side)
    # both loop branches cut the ray from X through the node on its far side
    node_abs = np.array([z0, R0]) + node_off
    axis = (node_off - xo) / np.hypot(*(node_off - xo))
    pu = _section_crossing(u_loop.points, node_abs, axis)
    ps = _section_crossing(s_loop.points, node_abs, axis)
    gap = float(np.hypot(*(pu - ps))) if pu is not None and ps is not None else float("inf")
    return ManifoldSet(cx, branches, eps, gap)


# --- R_X survey -----------------------------------------------------------------------


@dataclass
class SurveyEntry:
    theta: float
    status: str
    node: NodalPoint | None = None
    complex: NodalComplex | None = None
    bragg: tuple[int, int] | None = None  # (q, side) for Bragg-domain entries

    @property
    def RX(self) -> float:
        return self.complex.RX if self.complex is not None else float("nan")

    @property
    def ok(self) -> bool:
        return self.complex is not None


def node_near_theta(cfg, theta, branch="outer", mode=Mode.ADIABATIC):
    """A nodal point on ``branch`` whose angle is within one node spacing of theta."""
    R = _branch_radius(cfg, theta, branch)
    if R is None:
        raise NoRoot(f"no {branch} separator root at theta={theta}")
    q = float(phase_integer(cfg, R / math.tan(theta), R))
    k = round(q)
    step = 1e-9
    for _ in range(60):
        lo, hi = theta - step, theta + step
        Rl, Rh = _branch_radius(cfg, lo, branch), _branch_radius(cfg, hi, branch)
        if Rl is not None and Rh is not None:
            ql = float(phase_integer(cfg, Rl / math.tan(lo), Rl))
            qh = float(phase_integer(cfg, Rh / math.tan(hi), Rh))
            if min(ql, qh) <= k <= max(ql, qh):
                return node_for_qbar(cfg, k, lo, hi, branch, True, mode)
        step *= 2
        if step > 1e-2:
            break
    raise NoRoot(f"phase integer {k} not bracketed near theta={theta}")


BRAGG_EDGE_OFFSET = 1e-8
CASE_II_LOBE_FRACTION = 0.5


def bragg_domain_node(cfg, q, side, branch="outer", mode=Mode.ADIABATIC):
    """Separator node beside the Bragg peak ``q`` on ``side`` (-1 or +1).

    For an open channel (case I) this is the first node outside the channel
    edge; otherwise the node half a zero offset from the crest, where
    |S'/S| is of order k0 d (at the crest itself S' vanishes).
    """
    if side not in (-1, 1):
        raise ValueError("side must be -1 or +1")
    ch = classify_channel(cfg, q)
    if ch.case == "I":
        edge = ch.theta_a if side < 0 else ch.theta_a_prime
        theta = edge + side * BRAGG_EDGE_OFFSET
    else:
        theta = ch.theta_q + side * CASE_II_LOBE_FRACTION * (ch.theta_b_prime - ch.theta_q)
    return node_near_theta(cfg, theta, branch, mode)


def _survey_one(cfg, theta, find, mode, bragg=None):
    try:
        node = find()
    except (NoRoot, PolishDiverged, ValueError) as exc:
        return SurveyEntry(float(theta), f"no_node: {exc}", bragg=bragg)
    try:
        cx = build_complex(cfg, node, mode)
    except (NoXPoint, NotSaddle, DegenerateNode, PolishDiverged, np.linalg.LinAlgError) as exc:
        return SurveyEntry(float(theta), f"no_xpoint: {exc}", node, bragg=bragg)
    status = "ok" if not cx.flags else "ok:" + ",".join(cx.flags)
    return SurveyEntry(float(theta), status, node, cx, bragg)


def rx_survey(
    cfg: PhysicalConfig, theta_grid, branch="outer", mode=Mode.ADIABATIC, bragg_below: float | None = None
) -> list[SurveyEntry]:
    """R_X at a separator node next to each angle of ``theta_grid`` (failures flagged).

    With ``bragg_below`` set, grid angles below it are mapped to the nearest
    Bragg peak and the side they fall on, and the node is taken from
    :func:`bragg_domain_node`; repeated (q, side) pairs are surveyed once.
    Entries are sorted by angle.
    """
    thq = bragg_angles(cfg)
    out, seen = [], set()
    for th in np.asarray(theta_grid, dtype=float):
        if bragg_below is not None and th < bragg_below:
            i = int(np.argmin(np.abs(thq - th)))
            key = (i + 1, 1 if th >= thq[i] else -1)
            if key in seen:
                continue
            seen.add(key)
            find = lambda key=key: bragg_domain_node(cfg, key[0], key[1], branch, mode)  # noqa: E731
            out.append(_survey_one(cfg, th, find, mode, key))
        else:
            out.append(_survey_one(cfg, th, lambda th=th: node_near_theta(cfg, th, branch, mode), mode))
    out.sort(key=lambda e: e.node.theta0 if e.node is not None else e.theta)
    return out


def survey_medians(cfg: PhysicalConfig, entries, split: float = 0.8) -> tuple[float, float]:
    """Median R_X of successful entries below and above ``split`` (node angle)."""
    lo = [e.RX for e in entries if e.ok and e.node.theta0 < split]
    hi = [e.RX for e in entries if e.ok and e.node.theta0 >= split]
    return (float(np.median(lo)) if lo else float("nan"), float(np.median(hi)) if hi else float("nan"))


def rx_reference_scales(cfg: PhysicalConfig) -> tuple[float, float]:
    """(d / (D k0), 1 / (D k0^2)): Bragg-domain and diffuse-domain R_X scales."""
    return cfg.d / (cfg.D * cfg.k0), 1.0 / (cfg.D * cfg.k0**2)
