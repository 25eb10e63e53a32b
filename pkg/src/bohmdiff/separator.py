"""Separator between ingoing and outgoing flow, and Bragg channel structure.

The separator is the locus |psi_in| = |psi_out|. In the adiabatic field it
reduces to ``R exp(-R^2 / 2 D^2) = G(theta)`` with

    G(theta) = |K| |S_eff(theta)| sin(theta) / sin^2(theta/2).

The left side peaks at ``C(D) = D / sqrt(e)`` (R = D), so there is an inner
root R1 < D and an outer root R2 > D when G < C(D), and none otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .config import THETA_MIN, PhysicalConfig
from .errors import ClassifyFail
from .wavefield import bragg_angles, fraunhofer_zero_offsets, s_profile

G_FLOOR_RATIO = 1e-12
ROOT_RTOL = 1e-13
EDGE_XTOL = 1e-10
GRID_POINTS = 10_000


def g_of_theta(cfg: PhysicalConfig, theta) -> np.ndarray:
    """G(theta) in nm."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= THETA_MIN) or np.any(theta >= np.pi):
        raise ValueError(f"g_of_theta requires {THETA_MIN} < theta < pi")
    s = np.abs(s_profile(cfg, theta)[0])
    return abs(cfg.outgoing_strength) * cfg.D / cfg.a * s * np.sin(theta) / np.sin(0.5 * theta) ** 2


def r_max(cfg: PhysicalConfig) -> float:
    """Ceiling of the outer-root bracket, where exp(-R^2/2D^2) = G_FLOOR_RATIO."""
    return cfg.D * math.sqrt(2.0 * math.log(1.0 / G_FLOOR_RATIO))


def separator_lhs(cfg: PhysicalConfig, R):
    R = np.asarray(R, dtype=float)
    return R * np.exp(-(R**2) / (2 * cfg.D**2))


@dataclass(frozen=True)
class SeparatorRoots:
    """Roots of R exp(-R^2/2D^2) = G; both None when G > C(D)."""

    G: float
    inner: float | None
    outer: float | None
    clamped: bool = False

    @property
    def n_roots(self) -> int:
        if self.inner is None:
            return 0
        return 1 if self.inner == self.outer else 2


def roots_for_level(cfg: PhysicalConfig, G: float) -> SeparatorRoots:
    """Solve the separator equation for a given level G >= 0."""
    D = cfg.D
    C = cfg.C_of_D
    if G < 0:
        raise ValueError("G must be >= 0")
    if G > C:
        return SeparatorRoots(G, None, None)
    if G == C:
        return SeparatorRoots(G, D, D)
    f = lambda R: R * math.exp(-R * R / (2 * D * D)) - G  # noqa: E731
    inner = 0.0 if G == 0 else brentq(f, 0.0, D, xtol=1e-300, rtol=ROOT_RTOL, maxiter=500)
    Rm = r_max(cfg)
    if f(Rm) >= 0:
        return SeparatorRoots(G, inner, Rm, clamped=True)
    outer = brentq(f, D, Rm, xtol=1e-300, rtol=ROOT_RTOL, maxiter=500)
    return SeparatorRoots(G, inner, outer)


def separator_roots(cfg: PhysicalConfig, theta: float) -> SeparatorRoots:
    """Inner and outer separator radii (cylindrical R, nm) at angle ``theta``."""
    return roots_for_level(cfg, float(g_of_theta(cfg, theta)))


@dataclass(frozen=True)
class ChannelInfo:
    q: int
    theta_q: float
    G_peak: float
    case: str  # "I" or "II"
    theta_b: float
    theta_b_prime: float
    theta_a: float | None = None
    theta_a_prime: float | None = None

    @property
    def width(self) -> float | None:
        if self.case != "I":
            return None
        return self.theta_a_prime - self.theta_a


def _interval(cfg, q):
    """Half-open search bounds around theta_q: midpoints to the neighbours."""
    thq = bragg_angles(cfg)
    i = q - 1
    lo = 0.5 * (thq[i - 1] + thq[i]) if i > 0 else 0.5 * (THETA_MIN + thq[i])
    hi = 0.5 * (thq[i] + thq[i + 1]) if i + 1 < len(thq) else 0.5 * (thq[i] + np.pi)
    return lo, hi


def _nearest_crossing(cfg, theta_q, bound, spacing):
    """First sign change of G - C(D) walking from theta_q towards ``bound``."""
    C = cfg.C_of_D
    f = lambda th: float(g_of_theta(cfg, th)) - C  # noqa: E731
    n = max(int(math.ceil(abs(bound - theta_q) / spacing)), 2)
    grid = np.linspace(theta_q, bound, n + 1)
    vals = g_of_theta(cfg, grid) - C
    neg = np.nonzero(vals <= 0)[0]
    if len(neg) == 0:
        return None
    j = neg[0]
    a, b = grid[j - 1], grid[j]
    return brentq(f, min(a, b), max(a, b), xtol=EDGE_XTOL, rtol=4 * np.finfo(float).eps)


def classify_channel(cfg: PhysicalConfig, q: int) -> ChannelInfo:
    """Case I (an open channel, G(theta_q) > C(D)) or Case II around theta_q."""
    if not 1 <= q <= cfg.q_max:
        raise ValueError(f"q must be in 1..{cfg.q_max}")
    thq = float(bragg_angles(cfg)[q - 1])
    dz = float(fraunhofer_zero_offsets(cfg)[q - 1])
    Gq = float(g_of_theta(cfg, thq))
    base = dict(q=q, theta_q=thq, G_peak=Gq, theta_b=thq - dz, theta_b_prime=thq + dz)
    if Gq <= cfg.C_of_D:
        return ChannelInfo(case="II", **base)
    lo, hi = _interval(cfg, q)
    spacing = min((hi - lo) / GRID_POINTS, dz / 20)
    left = _nearest_crossing(cfg, thq, lo, spacing)
    right = _nearest_crossing(cfg, thq, hi, spacing)
    if left is None or right is None:
        raise ClassifyFail(f"G - C(D) keeps its sign on one side of theta_{q} = {thq:.8f}")
    return ChannelInfo(case="I", theta_a=left, theta_a_prime=right, **base)


def classify_all(cfg: PhysicalConfig) -> list[ChannelInfo]:
    return [classify_channel(cfg, q) for q in range(1, cfg.q_max + 1)]


@dataclass
class SeparatorBranch:
    branch_id: str  # "inner" or "outer"
    theta: np.ndarray
    R: np.ndarray
    gaps: list[tuple[float, float]] = field(default_factory=list)
    clamped_theta: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def samples(self) -> np.ndarray:
        return np.column_stack([self.theta, self.R])


def _gap_intervals(cfg, theta, open_mask):
    """Intervals where G > C(D), edges polished between grid neighbours."""
    C = cfg.C_of_D
    f = lambda th: float(g_of_theta(cfg, th)) - C  # noqa: E731
    gaps = []
    n = len(theta)
    i = 0
    while i < n:
        if not open_mask[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and open_mask[j + 1]:
            j += 1
        a = brentq(f, theta[i - 1], theta[i], xtol=EDGE_XTOL) if i > 0 else theta[0]
        b = brentq(f, theta[j], theta[j + 1], xtol=EDGE_XTOL) if j + 1 < n else theta[-1]
        gaps.append((a, b))
        i = j + 1
    return gaps


def trace_separator(cfg: PhysicalConfig, theta_range, n_samples: int, refine_channels: bool = True):
    """Sample both separator branches on a theta grid.

    With ``refine_channels`` the grid is augmented with points spaced at a
    fraction of the sinc zero offset around every Bragg angle in range so the
    narrow channel gaps are resolved. Returns ``(inner, outer)``.
    """
    lo, hi = map(float, theta_range)
    if not (THETA_MIN < lo < hi < np.pi):
        raise ValueError("theta_range must lie inside (theta_min, pi)")
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    theta = np.linspace(lo, hi, n_samples)
    if refine_channels:
        extra = []
        for tq, dz in zip(bragg_angles(cfg), fraunhofer_zero_offsets(cfg)):
            if lo < tq < hi:
                extra.append(np.clip(tq + dz * np.linspace(-3, 3, 241), lo, hi))
        if extra:
            theta = np.unique(np.concatenate([theta, *extra]))
    G = g_of_theta(cfg, theta)
    open_mask = G > cfg.C_of_D
    gaps = _gap_intervals(cfg, theta, open_mask)
    inner_R, outer_R, keep, clamped = [], [], [], []
    for th, g, is_open in zip(theta, G, open_mask):
        if is_open:
            continue
        roots = roots_for_level(cfg, float(g))
        if roots.clamped:
            clamped.append(th)
            continue
        keep.append(th)
        inner_R.append(roots.inner)
        outer_R.append(roots.outer)
    keep = np.array(keep)
    inner = SeparatorBranch("inner", keep, np.array(inner_R), gaps, np.array(clamped))
    outer = SeparatorBranch("outer", keep.copy(), np.array(outer_R), list(gaps), np.array(clamped))
    return inner, outer


def outer_window_means(cfg: PhysicalConfig, theta_hi: float = np.pi / 2, n_per_window: int = 400):
    """Mean outer radius R2 over each window between consecutive Bragg angles below ``theta_hi``.

    Returns ``(window_centres, means)``. The means grow with theta: the outer
    separator leans back (dR/dz < 0 in the meridian plane), which is why
    beams entering at larger R are deflected to larger angles.
    """
    thq = bragg_angles(cfg)
    thq = thq[thq < theta_hi]
    centres, means = [], []
    for a, b in zip(thq[:-1], thq[1:]):
        th = np.linspace(a, b, n_per_window + 2)[1:-1]
        G = g_of_theta(cfg, th)
        vals = [roots_for_level(cfg, float(g)).outer for g in G if g < cfg.C_of_D]
        vals = [v for v in vals if v is not None]
        if vals:
            centres.append(0.5 * (a + b))
            means.append(float(np.mean(vals)))
    return np.array(centres), np.array(means)
