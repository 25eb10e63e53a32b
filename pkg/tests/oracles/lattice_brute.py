"""Reference lattice sum as a plain triple loop."""

import cmath
import math

import numpy as np


def brute_force_sum(spec, k0, theta, phi):
    """Independent triple loop over the lattice indices."""
    rng = np.random.default_rng(spec.seed)
    u = rng.uniform(-0.5, 0.5, size=(spec.N_perp * spec.N_perp * spec.N_z, 3))
    total = 0j
    j = 0
    for ix in range(spec.N_perp):
        for iy in range(spec.N_perp):
            for iz in range(spec.N_z):
                x = (ix - (spec.N_perp - 1) / 2) * spec.a + spec.delta_a * u[j, 0]
                y = (iy - (spec.N_perp - 1) / 2) * spec.a + spec.delta_a * u[j, 1]
                z = (iz - (spec.N_z - 1) / 2) * spec.a + spec.delta_a * u[j, 2]
                j += 1
                ph = 2 * k0 * z * math.sin(theta / 2) ** 2
                ph -= k0 * math.sin(theta) * (x * math.cos(phi) - y * math.sin(phi))
                total += cmath.exp(1j * ph)
    return total
