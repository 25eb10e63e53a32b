"""Bohmian trajectories, swarms, channel crossings and times of flight.

Trajectories follow dz/dt, dR/dt = (hbar/m) Im(grad psi / psi) with the
compiled Dormand-Prince integrator of :mod:`bohmdiff._kernels`. Two step
profiles are provided:

* ``strict``: step capped at 0.1 pi hbar / E (each step advances well below
  one wavelength), rtol = atol = 1e-9;
* ``swarm``: the same tolerances without the cap, about 25x faster; exit
  angles and times agree with ``strict`` (see tests/test_trajectories.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .config import THETA_MIN, TIME_UNIT_S, Mode, PhysicalConfig
from .errors import ForwardSingularity, NodeProximity, SeparatorMissing
from .separator import classify_all, separator_roots
from .wavefield import RHO_FLOOR_FACTOR, bragg_angles

PROFILES = {
    "strict": dict(rtol=1e-9, atol=1e-9, capped=True),
    "swarm": dict(rtol=1e-10, atol=1e-10, capped=False),
}
DEFAULT_R_DETECT = 5e4
SAMPLE_DS = 5.0  # arc length between stored samples [nm]
STRIP_MARGIN = 3.0  # dense sampling within this many half-widths of a channel
H_INIT = 1e-6
H_MIN = 1e-14
MAX_STEPS = 10**9
TRANSMITTED_TOL = 0.01  # rad between exit velocity and the axis
POST_CROSSING_ARC = 5.0  # nm of arc used for the post-crossing direction
SPEED_BAND = (0.8, 1.2)


@dataclass(frozen=True)
class SwarmSpec:
    n: int = 360
    z_start: float = -1e4
    R_range: tuple[float, float] = (1500.0, 3300.0)
    sampling: str = "uniform"  # "uniform" or "weighted"
    seed: int = 0
    r_detect: float = DEFAULT_R_DETECT
    t_max: float | None = None
    profile: str = "swarm"
    mode: Mode = Mode.ADIABATIC

    def __post_init__(self):
        lo, hi = self.R_range
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.z_start < 0:
            raise ValueError("z_start must be < 0")
        if not 0 <= lo <= hi:
            raise ValueError("R_range must satisfy 0 <= R_min <= R_max")
        if not self.r_detect > abs(self.z_start):
            raise ValueError("r_detect must exceed |z_start|")
        if self.sampling not in ("uniform", "weighted"):
            raise ValueError("sampling must be 'uniform' or 'weighted'")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {sorted(PROFILES)}")

    def time_budget(self, cfg: PhysicalConfig) -> float:
        if self.t_max is not None:
            return self.t_max
        return 3 * (self.r_detect + abs(self.z_start)) / cfg.v0


@dataclass(frozen=True)
class ExitRecord:
    theta: float  # angle of the detection point
    T: float  # arrival time [hbar/eV]
    r_detect: float
    direction: float  # angle of the velocity at detection

    @property
    def T_seconds(self) -> float:
        return self.T * TIME_UNIT_S


@dataclass(frozen=True)
class ChannelCrossing:
    q: int
    kind: str  # "traversal", "entrainment" or "grazing"
    entry_side: int  # -1 below theta_a, +1 above theta_a'
    exit_side: int | None  # None when the trajectory stays in the channel
    entry_x: tuple[float, float]  # rotated (x1, x2) at entry
    exit_x: tuple[float, float] | None
    t_entry: float
    t_exit: float | None
    post_direction: float | None  # angle of motion (rad from +z) just after exit


@dataclass
class Trajectory:
    z0: float
    R0: float
    samples: np.ndarray  # (n, 3): t, z, R
    status: str
    exit: ExitRecord | None
    n_steps: int
    n_rejected: int
    crossings: list[ChannelCrossing] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @property
    def detected(self) -> bool:
        return self.status == "detected"

    @property
    def transmitted(self) -> bool:
        return self.exit is not None and abs(self.exit.direction) < TRANSMITTED_TOL

    @property
    def n_crossings(self) -> int:
        return len(self.crossings)


@dataclass(frozen=True)
class ChannelStrip:
    q: int
    theta_q: float
    theta_a: float
    theta_a_prime: float

    @property
    def half_width(self) -> float:
        return 0.5 * (self.theta_a_prime - self.theta_a)

    @property
    def centre(self) -> float:
        return 0.5 * (self.theta_a + self.theta_a_prime)


def channel_strips(cfg: PhysicalConfig) -> list[ChannelStrip]:
    """Open (case I) channels as angular strips [theta_a, theta_a']."""
    return [
        ChannelStrip(ch.q, ch.theta_q, ch.theta_a, ch.theta_a_prime) for ch in classify_all(cfg) if ch.case == "I"
    ]


def rotated_coordinates(z, R, theta_q):
    """(x1, x2): x1 = r sin(theta_q - theta) across the channel, x2 along it."""
    s, c = math.sin(theta_q), math.cos(theta_q)
    return z * s - R * c, z * c + R * s


# --- single trajectories ------------------------------------------------------------


def _exit_record(samples, r_detect, p, thq, kap):
    t, z, R = samples[-1]
    vz, vR, _ = _kernels.velocity(z, R, t, p, thq, kap)
    return ExitRecord(math.atan2(R, z), float(t), r_detect, math.atan2(vR, vz))


def integrate_trajectory(
    cfg: PhysicalConfig,
    start,
    r_detect: float = DEFAULT_R_DETECT,
    t_max: float | None = None,
    profile: str = "strict",
    mode=Mode.ADIABATIC,
    t0: float = 0.0,
    direction: float = 1.0,
    rtol: float | None = None,
    sample_ds: float = SAMPLE_DS,
    strips: list[ChannelStrip] | None = None,
    crossings: bool = True,
) -> Trajectory:
    """Integrate one trajectory from ``start`` = (z, R) until r >= r_detect or t >= t_max.

    ``direction = -1`` integrates backward in time from ``t0``. ``rtol``
    overrides the profile tolerance (atol follows it, in nm). Node
    encounters and step underflow end the integration and are reported in
    ``status``; the samples up to that point are kept.
    """
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {sorted(PROFILES)}")
    z0, R0 = map(float, start)
    if R0 < 0:
        raise ValueError("R must be >= 0")
    if R0 > 0 and math.atan2(R0, z0) <= THETA_MIN:
        raise ForwardSingularity("start inside the forward cone")
    mode = Mode(mode)
    p, thq, kap = _kernels.pack_params(cfg, mode)
    # the kernels work with psi_r, whose upstream density is 1
    _, _, rho = _kernels.velocity(z0, R0, t0, p, thq, kap)
    if rho < RHO_FLOOR_FACTOR:
        raise NodeProximity(f"|psi|^2 = {rho:.3g} below the floor at the start point")
    prof = PROFILES[profile]
    tol = prof["rtol"] if rtol is None else rtol
    atol = prof["atol"] if rtol is None else rtol
    h_max = 0.1 * math.pi / cfg.energy if prof["capped"] else 1e30
    if t_max is None:
        t_max = 3 * (r_detect + abs(z0)) / cfg.v0
    if strips is None:
        strips = channel_strips(cfg) if crossings else []
    centres = np.array([s.centre for s in strips])
    halfw = np.array([s.half_width for s in strips])
    order = np.argsort(centres)
    status, raw, ns, n_steps, n_rej = _kernels.integrate(
        z0, R0, t0, direction, p, thq, kap,
        tol, atol, h_max, H_INIT, H_MIN, t_max, r_detect, 1e300, RHO_FLOOR_FACTOR, MAX_STEPS,
        sample_ds, centres[order], halfw[order], STRIP_MARGIN,
    )
    samples = np.column_stack([t0 + direction * raw[:ns, 0], raw[:ns, 1], raw[:ns, 2]])
    name = _kernels.STATUS_NAMES[status]
    exit_ = None
    if name == "detected":
        exit_ = _exit_record(samples, r_detect, p, thq, kap)
    traj = Trajectory(z0, R0, samples, name, exit_, int(n_steps), int(n_rej))
    if name in ("node_encounter", "step_underflow", "max_steps", "forward_cone"):
        traj.flags.append(name)
    if crossings and strips:
        traj.crossings = channel_crossing_report(traj, strips)
    return traj


# --- channel crossings --------------------------------------------------------------------


def _interp_boundary(samples, i, theta, boundary):
    """Linear interpolation of the sample segment i -> i+1 at theta = boundary."""
    a, b = theta[i], theta[i + 1]
    w = 0.0 if b == a else (boundary - a) / (b - a)
    return samples[i] + w * (samples[i + 1] - samples[i])


def _post_direction(samples, j, arc):
    """Direction of motion over ``arc`` nm after sample j."""
    z, R = samples[:, 1], samples[:, 2]
    for k in range(j + 1, len(samples)):
        if math.hypot(z[k] - z[j], R[k] - R[j]) >= arc:
            return math.atan2(R[k] - R[j], z[k] - z[j])
    if j + 1 < len(samples):
        k = len(samples) - 1
        return math.atan2(R[k] - R[j], z[k] - z[j])
    return None


def channel_crossing_report(traj: Trajectory, strips) -> list[ChannelCrossing]:
    """Entries into the channel strips along a trajectory, in time order.

    A visit is a maximal run of samples with theta_a <= theta <= theta_a'.
    It is a traversal when it leaves through the opposite side, grazing when
    it leaves through the side it came in, and entrainment when the
    trajectory ends inside the channel.
    """
    s = traj.samples
    if len(s) < 2:
        return []
    theta = np.arctan2(s[:, 2], s[:, 1])
    out = []
    for strip in strips:
        side = np.where(theta < strip.theta_a, -1, np.where(theta > strip.theta_a_prime, 1, 0))
        inside = side == 0
        if not inside.any():
            continue
        idx = np.flatnonzero(np.diff(inside.astype(np.int8)) != 0) + 1
        starts = ([0] if inside[0] else []) + [i for i in idx if inside[i]]
        for st in starts:
            en = st
            while en + 1 < len(s) and inside[en + 1]:
                en += 1
            if st == 0:
                continue  # started inside: no entry observed
            entry_side = int(side[st - 1])
            b_in = strip.theta_a if entry_side < 0 else strip.theta_a_prime
            p_in = _interp_boundary(s, st - 1, theta, b_in)
            x_in = rotated_coordinates(p_in[1], p_in[2], strip.theta_q)
            if en + 1 >= len(s):
                out.append(
                    ChannelCrossing(strip.q, "entrainment", entry_side, None, x_in, None, float(p_in[0]), None, None)
                )
                continue
            exit_side = int(side[en + 1])
            b_out = strip.theta_a if exit_side < 0 else strip.theta_a_prime
            p_out = _interp_boundary(s, en, theta, b_out)
            x_out = rotated_coordinates(p_out[1], p_out[2], strip.theta_q)
            kind = "traversal" if exit_side != entry_side else "grazing"
            out.append(
                ChannelCrossing(
                    strip.q, kind, entry_side, exit_side, x_in, x_out, float(p_in[0]), float(p_out[0]),
                    _post_direction(s, en + 1, POST_CROSSING_ARC),
                )
            )
    out.sort(key=lambda c: c.t_entry)
    return out


# --- swarms -----------------------------------------------------------------------------------


def sample_starts(cfg: PhysicalConfig, spec: SwarmSpec) -> np.ndarray:
    """Initial radii: evenly spaced (uniform) or inverse-CDF of R exp(-R^2/D^2) (weighted).

    Both use stratified quantiles with a seeded offset so the set is
    deterministic and evenly covers the range.
    """
    lo, hi = spec.R_range
    rng = np.random.default_rng(spec.seed)
    u = (np.arange(spec.n) + rng.uniform(0, 1, spec.n)) / spec.n
    if spec.sampling == "uniform":
        return lo + (hi - lo) * u
    # CDF of R exp(-R^2/D^2) on [lo, hi]
    D2 = cfg.D**2
    e_lo, e_hi = math.exp(-(lo**2) / D2), math.exp(-(hi**2) / D2)
    return np.sqrt(-D2 * np.log(e_lo - u * (e_lo - e_hi)))


@dataclass
class SwarmResult:
    spec: SwarmSpec
    trajectories: list[Trajectory]

    @property
    def R0(self) -> np.ndarray:
        return np.array([t.R0 for t in self.trajectories])

    @property
    def exit_theta(self) -> np.ndarray:
        return np.array([t.exit.theta if t.exit else np.nan for t in self.trajectories])

    @property
    def exit_T(self) -> np.ndarray:
        return np.array([t.exit.T if t.exit else np.nan for t in self.trajectories])

    @property
    def statuses(self) -> list[str]:
        return [t.status for t in self.trajectories]

    @property
    def failures(self) -> list[tuple[int, str]]:
        return [(i, t.status) for i, t in enumerate(self.trajectories) if not t.detected]


def run_swarm(cfg: PhysicalConfig, spec: SwarmSpec, keep_samples: bool = True, progress=None) -> SwarmResult:
    """Integrate every start of ``spec``; failures are recorded, never raised."""
    strips = channel_strips(cfg)
    t_max = spec.time_budget(cfg)
    out = []
    for i, R0 in enumerate(sample_starts(cfg, spec)):
        try:
            tr = integrate_trajectory(
                cfg, (spec.z_start, float(R0)), spec.r_detect, t_max, spec.profile, spec.mode, strips=strips
            )
        except (NodeProximity, ForwardSingularity) as exc:
            tr = Trajectory(spec.z_start, float(R0), np.empty((0, 3)), "start_rejected", None, 0, 0, flags=[str(exc)])
        if not keep_samples:
            tr.samples = tr.samples[[0, -1]] if len(tr.samples) else tr.samples
        out.append(tr)
        if progress is not None:
            progress(i, tr)
    return SwarmResult(spec, out)


def monotonicity_violations(R0, theta, ok=None) -> list[int]:
    """Indices (in R0 order) where theta_exit drops below the running maximum."""
    R0 = np.asarray(R0)
    theta = np.asarray(theta)
    order = np.argsort(R0)
    if ok is not None:
        order = order[np.asarray(ok)[order]]
    bad = []
    run = -np.inf
    for i in order:
        if theta[i] < run:
            bad.append(int(i))
        else:
            run = theta[i]
    return bad


def bragg_cluster_tolerances(cfg: PhysicalConfig, n_widths: float = 3.0) -> np.ndarray:
    """n_widths x the channel width (case I) or the zero-to-zero width (case II) per order."""
    tol = []
    for ch in classify_all(cfg):
        w = ch.width if ch.case == "I" else ch.theta_b_prime - ch.theta_b
        tol.append(n_widths * w)
    return np.array(tol)


def nearest_bragg(cfg: PhysicalConfig, theta) -> tuple[np.ndarray, np.ndarray]:
    """(order q, signed offset theta - theta_q) of the nearest Bragg angle."""
    thq = bragg_angles(cfg)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    i = np.argmin(np.abs(theta[:, None] - thq[None, :]), axis=1)
    return i + 1, theta - thq[i]


# --- speed check ------------------------------------------------------------------------------


def sample_speeds(cfg: PhysicalConfig, traj: Trajectory, mode=Mode.ADIABATIC) -> np.ndarray:
    p, thq, kap = _kernels.pack_params(cfg, mode)
    s = traj.samples
    vz, vR, _ = _kernels.velocity_along(s[:, 1], s[:, 2], s[:, 0], p, thq, kap)
    return np.hypot(vz, vR)


def speed_excursions(cfg: PhysicalConfig, traj: Trajectory, band=SPEED_BAND, mode=Mode.ADIABATIC) -> np.ndarray:
    """Indices of samples whose speed lies outside band * v0."""
    v = sample_speeds(cfg, traj, mode) / cfg.v0
    return np.flatnonzero((v < band[0]) | (v > band[1]))


# --- times of flight ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TofTable:
    bin_edges: np.ndarray
    centres: np.ndarray
    dT: np.ndarray  # nan where missing
    counts: np.ndarray
    theta_ref: float
    missing: list[int]
    theta_mean: np.ndarray | None = None  # mean exit angle per bin, nan where missing
    ref_bin: int | None = None

    @property
    def theta_ref_mean(self) -> float:
        """Mean exit angle in the reference bin (the angle the differences are taken from)."""
        return float(self.theta_mean[self.ref_bin])


def tof_table(
    swarm_or_exits, theta_bins=None, theta_ref: float = math.radians(150.0), r_detect: float | None = None
) -> TofTable:
    """Bin exit times by exit angle and subtract the bin containing ``theta_ref``.

    Each bin also records the mean exit angle of its members, which is the
    angle its mean time belongs to. Accepts a SwarmResult or an (theta, T) pair of arrays. Transmitted and
    undetected trajectories are excluded. Empty bins are reported as missing.
    """
    if isinstance(swarm_or_exits, SwarmResult):
        trs = [t for t in swarm_or_exits.trajectories if t.detected and not t.transmitted]
        rds = {t.exit.r_detect for t in trs}
        if len(rds) > 1:
            raise ValueError("all trajectories must share r_detect")
        theta = np.array([t.exit.theta for t in trs])
        T = np.array([t.exit.T for t in trs])
    else:
        theta, T = (np.asarray(x, dtype=float) for x in swarm_or_exits)
    if theta_bins is None:
        theta_bins = np.linspace(math.radians(25.0), math.radians(155.0), 61)
    edges = np.asarray(theta_bins, dtype=float)
    k = np.digitize(theta, edges) - 1
    nb = len(edges) - 1
    sums = np.zeros(nb)
    th_sums = np.zeros(nb)
    counts = np.zeros(nb, dtype=int)
    for ki, th, Ti in zip(k, theta, T):
        if 0 <= ki < nb:
            sums[ki] += Ti
            th_sums[ki] += th
            counts[ki] += 1
    mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    th_mean = np.where(counts > 0, th_sums / np.maximum(counts, 1), np.nan)
    kref = int(np.digitize([theta_ref], edges)[0] - 1)
    if not 0 <= kref < nb:
        raise ValueError("theta_ref outside the bins")
    if counts[kref] == 0:
        raise ValueError("the reference bin is empty")
    dT = mean - mean[kref]
    centres = 0.5 * (edges[1:] + edges[:-1])
    missing = [int(i) for i in np.flatnonzero(counts == 0)]
    return TofTable(edges, centres, dT, counts, theta_ref, missing, th_mean, kref)


def _outer_root(cfg, theta):
    roots = separator_roots(cfg, theta)
    if roots.outer is None or roots.clamped:
        raise SeparatorMissing(f"no outer separator root at theta={theta}")
    return roots.outer


def analytic_tof_diff(
    cfg: PhysicalConfig, theta1, theta2: float, norm_pair=(math.radians(30.0), math.radians(150.0))
):
    """Straight-separator estimate of T(theta1) - T(theta2) in hbar/eV.

    Paths are horizontal up to the outer separator and radial afterwards; the
    separator is the straight line R0(theta) = R0(theta2) + lambda (theta -
    theta2) with lambda fixed by the outer roots at ``norm_pair``.
    """
    theta1 = np.asarray(theta1, dtype=float)
    if np.any(theta1 <= THETA_MIN) or np.any(theta1 >= math.pi) or not THETA_MIN < theta2 < math.pi:
        raise ValueError("angles must lie in (theta_min, pi)")
    a, b = norm_pair
    lam = (_outer_root(cfg, b) - _outer_root(cfg, a)) / (b - a)
    R2 = _outer_root(cfg, theta2)
    R1 = R2 + lam * (theta1 - theta2)
    # (cos t - 1) / sin t = -tan(t/2)
    return (-R1 * np.tan(0.5 * theta1) + R2 * math.tan(0.5 * theta2)) / cfg.v0


def rutherford_tof_diff(cfg: PhysicalConfig, theta1, theta2):
    """Classical Rutherford T(theta1) - T(theta2) in hbar/eV.

    Z Z1 e^2 / (2 pi eps0 m v0^3) ln sqrt((1 + cot^2(theta2/2)) / (1 + cot^2(theta1/2))),
    with e^2 / (2 pi eps0) = 2 coulomb_k and m v0^2 = 2 E.
    """
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    if np.any(theta1 <= 0) or np.any(theta1 >= math.pi) or np.any(theta2 <= 0) or np.any(theta2 >= math.pi):
        raise ValueError("angles must lie in (0, pi)")
    pref = cfg.Z * cfg.Z1 * 2 * cfg.coulomb_k / (2 * cfg.energy * cfg.v0)
    c1 = 1 / np.tan(0.5 * theta1)
    c2 = 1 / np.tan(0.5 * theta2)
    return pref * 0.5 * np.log((1 + c2**2) / (1 + c1**2))
