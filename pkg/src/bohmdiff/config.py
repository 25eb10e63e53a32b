"""Physical parameters of the diffraction model and unit conventions.

Units used throughout the package:

* lengths in nm, angles in rad, energies in eV
* time in hbar/eV (about 6.582e-16 s), so that hbar = 1 numerically

The particle mass only enters through ``hbar2_2m`` (hbar^2 / 2m, eV nm^2), and
the Coulomb coupling through ``coulomb_k`` (e^2 / 4 pi eps0, eV nm).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, fields

HBAR2_2M_ELECTRON = 0.0380998  # eV nm^2
COULOMB_K = 1.43996  # eV nm
TIME_UNIT_S = 6.582119569e-16  # seconds per hbar/eV

THETA_MIN = 1e-3  # forward cutoff of the outgoing model [rad]


class ConfigError(ValueError):
    """Raised when a configuration violates one of its invariants."""


class Mode(str, enum.Enum):
    """How the ``i hbar t / m`` terms of the wavefunction are treated.

    ``ADIABATIC`` drops them entirely (the field is static). ``FROZEN`` keeps
    them at the time carried by the evaluation point. ``TIME_DEPENDENT`` is the
    same as ``FROZEN`` for a single evaluation; trajectories advance ``t``.
    """

    ADIABATIC = "adiabatic"
    FROZEN = "frozen"
    TIME_DEPENDENT = "time-dependent"


@dataclass(frozen=True)
class PhysicalConfig:
    """Beam, target and fitted-model parameters.

    Defaults are not provided on purpose; use :func:`reference_config` for the
    reference parameter set.
    """

    k0: float
    D: float
    Z: float
    Z1: float
    a: float
    d: float
    sigma_a: float
    C_coherent: float
    C_diffuse: float
    q_max: int
    delta: float
    hbar2_2m: float = HBAR2_2M_ELECTRON
    coulomb_k: float = COULOMB_K

    def __post_init__(self):
        for name in ("k0", "D", "a", "d", "hbar2_2m", "coulomb_k"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0 (got {getattr(self, name)!r})")
        if self.sigma_a < 0:
            raise ConfigError(f"sigma_a must be >= 0 (got {self.sigma_a!r})")
        if int(self.q_max) != self.q_max or self.q_max < 1:
            raise ConfigError(f"q_max must be an integer >= 1 (got {self.q_max!r})")
        object.__setattr__(self, "q_max", int(self.q_max))
        if self.q_max > self.q_bound:
            raise ConfigError(
                f"q_max={self.q_max} exceeds the Bragg existence bound "
                f"floor(k0*a/pi)={self.q_bound}: sin^2(theta_q/2) = q*pi/(k0*a) must be <= 1"
            )
        if self.D < 10 * self.a or self.D * self.k0 < 10:
            warnings.warn(
                "coherence length D is not much larger than a and 1/k0; "
                "the fitted outgoing model may be inaccurate",
                stacklevel=3,
            )

    @property
    def q_bound(self) -> int:
        """Largest Bragg order that exists for this ``k0 * a``."""
        return int(math.floor(self.k0 * self.a / math.pi + 1e-12))

    @property
    def hbar_over_m(self) -> float:
        """hbar/m in nm^2 per time unit."""
        return 2.0 * self.hbar2_2m

    @property
    def sigma_perp(self) -> float:
        return 1.0 / self.D

    @property
    def N_z(self) -> float:
        return self.d / self.a

    @property
    def N_perp(self) -> float:
        return self.D / self.a

    @property
    def P_bar(self) -> float:
        """Z1 Z e^2 m / (8 pi eps0 hbar^2) in nm^-1."""
        return self.Z1 * self.Z * self.coulomb_k / (4.0 * self.hbar2_2m)

    @property
    def outgoing_strength(self) -> float:
        """P_bar / k0^2 [nm]: amplitude factor of the outgoing wave."""
        return self.P_bar / self.k0**2

    @property
    def v0(self) -> float:
        """Beam speed hbar k0 / m [nm per time unit]."""
        return self.hbar_over_m * self.k0

    @property
    def lambda0(self) -> float:
        return 2.0 * math.pi / self.k0

    @property
    def energy(self) -> float:
        """Kinetic energy hbar^2 k0^2 / 2m [eV]."""
        return self.hbar2_2m * self.k0**2

    @property
    def C_of_D(self) -> float:
        """Maximum of R exp(-R^2 / 2 D^2), i.e. D / sqrt(e)."""
        return self.D * math.exp(-0.5)

    def replace(self, **changes) -> "PhysicalConfig":
        values = asdict(self)
        values.update(changes)
        return PhysicalConfig(**values)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def reference_config(**overrides) -> PhysicalConfig:
    """Reference parameters: 30 keV electrons on a 420 nm gold target."""
    values = dict(
        k0=887.7,
        D=1000.0,
        Z=79.0,
        Z1=-1.0,
        a=0.257,
        d=420.0,
        sigma_a=0.0086,
        C_coherent=0.060,
        C_diffuse=0.077,
        q_max=40,
        delta=math.pi,
    )
    values.update(overrides)
    return PhysicalConfig(**values)
