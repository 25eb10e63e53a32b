"""Direct lattice sums for the effective Fraunhofer function.

A cubic crystal of N_perp x N_perp x N_z atoms with spacing ``a``, each atom
displaced by ``delta_a * u`` with u uniform in [-0.5, 0.5]^3, scatters with

    S(theta, phi) = sum_j exp(i 2 k0 z_j sin^2(theta/2))
                          exp(-i k0 sin(theta) (x_j cos(phi) - y_j sin(phi))).

For a polycrystal phi is random per realization. The reduced model keeps the
z-sum explicitly and replaces the transverse double sum by (D/a) C_coherent.
``fit_constants`` estimates C_coherent and C_diffuse from realizations of the
factorized sum (z-sum times transverse double sum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import PhysicalConfig
from .errors import BudgetExceeded, FitDegenerate
from .wavefield import bragg_angles

DEFAULT_MAX_ATOMS = 10_000_000
CHUNK = 1 << 16
# uniform displacement in [-delta_a/2, delta_a/2] has variance delta_a^2 / 12
UNIFORM_TO_SIGMA = math.sqrt(12.0)
OFF_PEAK_WIDTHS = 5.0
N_OFF_PEAK = 200


@dataclass(frozen=True)
class LatticeSpec:
    a: float
    delta_a: float
    N_perp: int
    N_z: int
    seed: int = 0
    max_atoms: int = DEFAULT_MAX_ATOMS

    def __post_init__(self):
        if self.N_perp < 1 or self.N_z < 1:
            raise ValueError("atom counts must be >= 1")
        if self.delta_a < 0:
            raise ValueError("delta_a must be >= 0")
        if self.a <= 0:
            raise ValueError("a must be > 0")

    @property
    def n_atoms(self) -> int:
        return self.N_perp * self.N_perp * self.N_z

    @classmethod
    def from_config(cls, cfg: PhysicalConfig, seed: int = 0, N_perp: int | None = None, **kw) -> "LatticeSpec":
        """Counts N_perp = round(D/a), N_z = round(d/a); delta_a = sqrt(12) sigma_a."""
        return cls(
            a=cfg.a,
            delta_a=UNIFORM_TO_SIGMA * cfg.sigma_a,
            N_perp=round(cfg.D / cfg.a) if N_perp is None else N_perp,
            N_z=round(cfg.d / cfg.a),
            seed=seed,
            **kw,
        )


@dataclass(frozen=True)
class FitResult:
    c_coherent: float
    c_diffuse: float
    n_realizations: int
    rms_residual: float
    diffuse_amplitude: float  # fitted floor C_d sqrt(N_z) averaged over the off-peak grid


def centered_indices(n: int) -> np.ndarray:
    """n indices symmetric about zero with unit spacing."""
    return np.arange(n) - 0.5 * (n - 1)


def _check_budget(spec: LatticeSpec):
    if spec.n_atoms > spec.max_atoms:
        raise BudgetExceeded(f"{spec.n_atoms} atoms exceed the budget of {spec.max_atoms}")


def build_lattice(spec: LatticeSpec) -> np.ndarray:
    """Atom positions (n, 3) as (x, y, z), deterministic for a given seed."""
    _check_budget(spec)
    p = centered_indices(spec.N_perp) * spec.a
    z = centered_indices(spec.N_z) * spec.a
    X, Y, Z = np.meshgrid(p, p, z, indexing="ij")
    pos = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    rng = np.random.default_rng(spec.seed)
    u = rng.uniform(-0.5, 0.5, size=pos.shape)
    return pos + spec.delta_a * u


def _phase_weights(k0, theta, phi):
    s2 = np.sin(0.5 * theta) ** 2
    st = np.sin(theta)
    return np.stack([-k0 * st * np.cos(phi), k0 * st * np.sin(phi), 2 * k0 * s2], axis=-1)


def s_eff_lattice_full(spec: LatticeSpec, k0: float, theta, phi, positions: np.ndarray | None = None):
    """Full triple sum for one realization at angles ``theta`` and ``phi`` (broadcast)."""
    if positions is None:
        positions = build_lattice(spec)
    else:
        _check_budget(spec)
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    W = _phase_weights(k0, theta.ravel(), phi.ravel())  # (m, 3)
    total = np.zeros(W.shape[0], dtype=complex)
    for i in range(0, len(positions), CHUNK):
        total += np.exp(1j * positions[i : i + CHUNK] @ W.T).sum(axis=0)
    return total.reshape(theta.shape) if theta.ndim else complex(total[0])


def _z_displacements(spec: LatticeSpec, rng) -> np.ndarray:
    return centered_indices(spec.N_z) * spec.a + spec.delta_a * rng.uniform(-0.5, 0.5, spec.N_z)


def z_sum(k0: float, theta, z_positions: np.ndarray):
    """sum_n exp(i 2 k0 z_n sin^2(theta/2))."""
    theta = np.asarray(theta, dtype=float)
    w = 2 * k0 * np.sin(0.5 * theta.ravel()) ** 2
    out = np.zeros(w.shape, dtype=complex)
    for i in range(0, len(z_positions), CHUNK):
        out += np.exp(1j * np.outer(w, z_positions[i : i + CHUNK])).sum(axis=1)
    return out.reshape(theta.shape) if theta.ndim else complex(out[0])


def transverse_sum(k0: float, theta, phi: float, xy: np.ndarray):
    """Double sum over the transverse plane at azimuth ``phi``."""
    theta = np.asarray(theta, dtype=float)
    st = k0 * np.sin(theta.ravel())
    proj = xy[:, 0] * math.cos(phi) - xy[:, 1] * math.sin(phi)
    out = np.zeros(st.shape, dtype=complex)
    for i in range(0, len(proj), CHUNK):
        out += np.exp(-1j * np.outer(st, proj[i : i + CHUNK])).sum(axis=1)
    return out.reshape(theta.shape) if theta.ndim else complex(out[0])


def s_eff_lattice_reduced(spec: LatticeSpec, k0: float, theta, c_coherent: float):
    """(N_perp) C_coherent exp(i delta) times the jittered z-sum; delta drawn from the seed."""
    rng = np.random.default_rng(spec.seed)
    delta = rng.uniform(0, 2 * np.pi)
    z = _z_displacements(spec, rng)
    return spec.N_perp * c_coherent * np.exp(1j * delta) * z_sum(k0, theta, z)


def _debye_waller(cfg: PhysicalConfig, theta):
    return np.exp(-2 * cfg.k0**2 * cfg.sigma_a**2 * np.sin(0.5 * theta) ** 4)


def off_peak_angles(cfg: PhysicalConfig, n: int = N_OFF_PEAK, lo: float = 0.05, hi: float = math.pi - 0.05):
    """``n`` angles in (lo, hi) at least OFF_PEAK_WIDTHS sinc widths from every Bragg angle."""
    thq = bragg_angles(cfg)
    widths = 2 * np.pi / (cfg.k0 * cfg.d * np.sin(thq))
    grid = np.linspace(lo, hi, 50 * n)
    keep = np.all(np.abs(grid[:, None] - thq) >= OFF_PEAK_WIDTHS * widths, axis=1)
    grid = grid[keep]
    if len(grid) == 0:
        raise FitDegenerate("no off-peak angles in the sampled range")
    return grid[np.linspace(0, len(grid) - 1, min(n, len(grid))).round().astype(int)]


def fit_constants(
    cfg: PhysicalConfig,
    n_realizations: int = 100,
    seed: int = 0,
    N_perp: int = 32,
    delta_a: float | None = None,
    off_peak=None,
) -> FitResult:
    """Fit C_coherent and C_diffuse from realizations of the factorized lattice sum.

    Each realization draws a random azimuth and random displacements, and
    evaluates the jittered z-sum Z and the transverse double sum T on an
    N_perp x N_perp plane. The transverse rms per atom row, rms|T| / N_perp,
    stands in for S_xy / (D/a). Then

    * C_coherent: least squares of rms|Z T| at the Bragg angles against the
      model peak height N_perp DW N_z;
    * C_diffuse: least squares of rms|T| * std(Z) (the incoherent part of the
      z-sum) at off-peak angles against N_perp (1 - DW) sqrt(N_z).

    ``rms_residual`` is the relative rms misfit of the diffuse regression.
    """
    if n_realizations < 10:
        raise ValueError("n_realizations must be >= 10")
    spec = LatticeSpec.from_config(cfg, seed, N_perp=N_perp)
    if delta_a is not None:
        spec = LatticeSpec(spec.a, delta_a, spec.N_perp, spec.N_z, seed)
    thq = bragg_angles(cfg)
    off = off_peak_angles(cfg) if off_peak is None else np.asarray(off_peak, dtype=float)
    if len(off) == 0:
        raise FitDegenerate("no off-peak angles supplied")
    theta = np.concatenate([thq, off])
    nq = len(thq)
    p = centered_indices(spec.N_perp) * spec.a
    X, Y = np.meshgrid(p, p, indexing="ij")
    base_xy = np.column_stack([X.ravel(), Y.ravel()])
    children = np.random.SeedSequence(seed).spawn(n_realizations)
    Z = np.empty((n_realizations, len(theta)), dtype=complex)
    T2 = np.zeros(len(theta))
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        phi = rng.uniform(0, 2 * np.pi)
        xy = base_xy + spec.delta_a * rng.uniform(-0.5, 0.5, base_xy.shape)
        Z[i] = z_sum(cfg.k0, theta, _z_displacements(spec, rng))
        T2 += np.abs(transverse_sum(cfg.k0, theta, phi, xy)) ** 2
    T_rms = np.sqrt(T2 / n_realizations)
    S_rms = np.sqrt(np.mean(np.abs(Z) ** 2, axis=0)) * T_rms
    dw = _debye_waller(cfg, theta)
    m_coh = spec.N_perp * dw[:nq] * spec.N_z
    c_coh = float(np.dot(S_rms[:nq], m_coh) / np.dot(m_coh, m_coh))
    incoh = T_rms[nq:] * np.std(Z[:, nq:], axis=0)
    m_diff = spec.N_perp * (1 - dw[nq:]) * math.sqrt(spec.N_z)
    if not np.any(m_diff > 0):
        raise FitDegenerate("Debye-Waller complement vanishes on all off-peak angles")
    c_diff = float(np.dot(incoh, m_diff) / np.dot(m_diff, m_diff))
    resid = incoh - c_diff * m_diff
    rms_res = float(np.sqrt(np.mean(resid**2)) / np.sqrt(np.mean(incoh**2))) if np.any(incoh) else 0.0
    amp = float(np.mean(incoh) / (spec.N_perp * math.sqrt(spec.N_z)))
    return FitResult(c_coh, c_diff, n_realizations, rms_res, amp)


__all__ = [
    "LatticeSpec",
    "FitResult",
    "build_lattice",
    "s_eff_lattice_full",
    "s_eff_lattice_reduced",
    "z_sum",
    "transverse_sum",
    "off_peak_angles",
    "fit_constants",
]
